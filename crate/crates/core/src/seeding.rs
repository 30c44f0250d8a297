//! Named substreams off one master seed. Every source of randomness in
//! the pipeline (init, shuffling, latent draws, Monte-Carlo draws) pulls
//! its own labeled stream, so parallel and serial execution see the same
//! values and whole runs replay from a single integer.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for (master seed, label).
pub fn substream(master: u64, label: &str) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&fnv1a64(label.as_bytes()).to_le_bytes());
    let mix = fnv1a64(&seed[..16]);
    seed[16..24].copy_from_slice(&mix.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
