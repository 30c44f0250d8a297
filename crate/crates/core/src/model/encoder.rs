//! Encoder forward pass: pose projection, patch embedding, sine-distance
//! positional encoding, multiplicative fusion, and the pre-norm
//! transformer over all A·t tokens of a scene (attention spans agents and
//! time jointly, so cross-agent context is part of every layer).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, VarMap};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::scene::{Patch, Pose, Scene};

const LN_EPS: f64 = 1e-5;
/// Frequency base for spatial encodings (wavelengths 2π·1 … 2π·base m).
const SPATIAL_BASE: f64 = 100.0;
/// Frequency base for the time-index encoding.
const TIME_BASE: f64 = 10_000.0;

pub struct EncodeOpts<'a, F: Real> {
    /// When set, receives every attention matrix (layer-major, then head).
    pub attn_capture: Option<&'a mut Vec<Tensor<F>>>,
    /// Enables dropout (rate from the config) during training passes.
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
}

impl<F: Real> Default for EncodeOpts<'_, F> {
    fn default() -> Self {
        Self {
            attn_capture: None,
            dropout_rng: None,
        }
    }
}

/// Agent-centered pose projection: t×2 relative coordinates → t×d, then
/// d → model_dim for token width. Returns (pre-token t×d, tokens t×md).
pub fn embed_poses<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    _cfg: &ModelConfig,
    past: &[Pose],
) -> Result<(Var, Var), ModelError> {
    let anchor = past[past.len() - 1];
    let rel: Vec<F> = past
        .iter()
        .flat_map(|p| [F::of(p.x - anchor.x), F::of(p.y - anchor.y)])
        .collect();
    let rel = tape.constant(Tensor::new(vec![past.len(), 2], rel)?);
    let pre = tape.matmul(rel, vars.v("encoder.pose_proj.w"))?;
    let pre = tape.add_row(pre, vars.v("encoder.pose_proj.b"))?;
    let tok = tape.matmul(pre, vars.v("encoder.pose_tok.w"))?;
    let tok = tape.add_row(tok, vars.v("encoder.pose_tok.b"))?;
    Ok((pre, tok))
}

/// Each p×p×C sub-patch of the crop, flattened row-major and linearly
/// projected: n_sub × model_dim.
pub fn embed_patches<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    patch: &Patch,
) -> Result<Var, ModelError> {
    let (m, p, c) = (cfg.crop_size, cfg.patch_size, cfg.channels);
    debug_assert_eq!(patch.size, m);
    debug_assert_eq!(patch.channels, c);
    let per_side = m / p;
    let flat_len = p * p * c;
    let mut data = Vec::with_capacity(per_side * per_side * flat_len);
    for gr in 0..per_side {
        for gc in 0..per_side {
            for r in 0..p {
                for col in 0..p {
                    let (pr, pc) = (gr * p + r, gc * p + col);
                    for ch in 0..c {
                        data.push(F::of(patch.data[(pr * m + pc) * c + ch] as f64));
                    }
                }
            }
        }
    }
    let sub = tape.constant(Tensor::new(vec![per_side * per_side, flat_len], data)?);
    let emb = tape.matmul(sub, vars.v("encoder.patch_embed.w"))?;
    Ok(tape.add_row(emb, vars.v("encoder.patch_embed.b"))?)
}

/// Deterministic sinusoidal features: the first half encodes geometry
/// (distance from the scene origin plus x/y offsets at geometric
/// frequencies), the second half the time index. Values laid out as
/// (sin, cos) pairs.
pub fn pos_encode(cfg: &ModelConfig, rel_to_origin: (f64, f64), time_index: usize) -> Vec<f64> {
    let md = cfg.model_dim;
    let mut out = Vec::with_capacity(md);
    let (x, y) = rel_to_origin;
    let r = (x * x + y * y).sqrt();

    let mut pairs = |value: f64, n_pairs: usize, base: f64| {
        for j in 0..n_pairs {
            let scale = base.powf(j as f64 / n_pairs as f64);
            let angle = value / scale;
            out.push(angle.sin());
            out.push(angle.cos());
        }
    };
    pairs(r, md / 8, SPATIAL_BASE);
    pairs(x, md / 16, SPATIAL_BASE);
    pairs(y, md / 16, SPATIAL_BASE);
    pairs(time_index as f64, md / 4, TIME_BASE);
    debug_assert_eq!(out.len(), md);
    out
}

/// e_fused = e_obs ⊙ (pos + patch): the additive-then-multiplicative
/// fusion of trajectory embedding with scene context.
pub fn fuse<F: Real>(
    tape: &mut Tape<F>,
    e_obs_token: Var,
    e_patch_sum: Var,
    pos: Var,
) -> Result<Var, ModelError> {
    let ctx = tape.add(pos, e_patch_sum)?;
    Ok(tape.mul(e_obs_token, ctx)?)
}

/// Full encoder: fused tokens for every (agent, time), L pre-norm
/// transformer blocks over the joint token set, then each agent's
/// latest-time token projected to the latent width. Returns one 1×D code
/// per agent, in track order.
pub fn encode_scene<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    scene: &Scene,
) -> Result<Vec<Var>, ModelError> {
    encode_scene_opts(tape, vars, cfg, scene, EncodeOpts::default())
}

pub fn encode_scene_opts<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    scene: &Scene,
    mut opts: EncodeOpts<'_, F>,
) -> Result<Vec<Var>, ModelError> {
    let t_past = cfg.past_len;
    let origin = scene.frame().origin;
    let mut fused: Vec<Var> = Vec::with_capacity(scene.agents() * t_past);
    for track in &scene.tracks {
        let (_, toks) = embed_poses(tape, vars, cfg, &track.past)?;
        let crop = scene
            .raster
            .extract_patch(&track.last_observed(), cfg.crop_size)?;
        let patch_tokens = embed_patches(tape, vars, cfg, &crop)?;
        let ones = tape.constant(Tensor::row_vec(vec![F::one(); cfg.sub_patches()]));
        let patch_sum = tape.matmul(ones, patch_tokens)?;
        for i in 0..t_past {
            let enc = pos_encode(
                cfg,
                (track.past[i].x - origin.x, track.past[i].y - origin.y),
                i,
            );
            let pos = tape.constant(Tensor::row_vec(
                enc.into_iter().map(F::of).collect(),
            ));
            let tok = tape.row(toks, i)?;
            fused.push(fuse(tape, tok, patch_sum, pos)?);
        }
    }
    let mut x = tape.stack_rows(&fused)?;

    for l in 0..cfg.layers {
        x = transformer_block(tape, vars, cfg, l, x, &mut opts)?;
    }
    let g = vars.v("encoder.final_ln.g");
    let b = vars.v("encoder.final_ln.b");
    let x = tape.layer_norm(x, g, b, F::of(LN_EPS))?;

    let mut codes = Vec::with_capacity(scene.agents());
    for a in 0..scene.agents() {
        let tok = tape.row(x, a * t_past + t_past - 1)?;
        let code = tape.matmul(tok, vars.v("encoder.latent.w"))?;
        codes.push(tape.add_row(code, vars.v("encoder.latent.b"))?);
    }
    Ok(codes)
}

fn transformer_block<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    layer: usize,
    x: Var,
    opts: &mut EncodeOpts<'_, F>,
) -> Result<Var, ModelError> {
    let p = format!("encoder.block{layer:02}");
    let eps = F::of(LN_EPS);
    let dh = cfg.model_dim / cfg.heads;
    let inv_sqrt_dh = F::of(1.0 / (dh as f64).sqrt());

    let ln1 = {
        let (g, b) = (vars.v(&format!("{p}.ln1.g")), vars.v(&format!("{p}.ln1.b")));
        tape.layer_norm(x, g, b, eps)?
    };
    let q = tape.matmul(ln1, vars.v(&format!("{p}.attn.wq")))?;
    let q = tape.add_row(q, vars.v(&format!("{p}.attn.bq")))?;
    let k = tape.matmul(ln1, vars.v(&format!("{p}.attn.wk")))?;
    let k = tape.add_row(k, vars.v(&format!("{p}.attn.bk")))?;
    let v = tape.matmul(ln1, vars.v(&format!("{p}.attn.wv")))?;
    let v = tape.add_row(v, vars.v(&format!("{p}.attn.bv")))?;

    let mut head_outs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, inv_sqrt_dh)?;
        let attn = tape.softmax(scores, 1)?;
        if let Some(capture) = opts.attn_capture.as_deref_mut() {
            capture.push(tape.value(attn).clone());
        }
        head_outs.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&head_outs)?;
    let proj = tape.matmul(merged, vars.v(&format!("{p}.attn.wo")))?;
    let proj = tape.add_row(proj, vars.v(&format!("{p}.attn.bo")))?;
    let proj = apply_dropout(tape, cfg, proj, opts)?;
    let x = tape.add(x, proj)?;

    let ln2 = {
        let (g, b) = (vars.v(&format!("{p}.ln2.g")), vars.v(&format!("{p}.ln2.b")));
        tape.layer_norm(x, g, b, eps)?
    };
    let h1 = tape.matmul(ln2, vars.v(&format!("{p}.mlp.w1")))?;
    let h1 = tape.add_row(h1, vars.v(&format!("{p}.mlp.b1")))?;
    let h1 = tape.gelu(h1)?;
    let h2 = tape.matmul(h1, vars.v(&format!("{p}.mlp.w2")))?;
    let h2 = tape.add_row(h2, vars.v(&format!("{p}.mlp.b2")))?;
    let h2 = apply_dropout(tape, cfg, h2, opts)?;
    Ok(tape.add(x, h2)?)
}

/// Inverted dropout with a Bernoulli mask drawn from the caller's stream;
/// identity when no stream is supplied or the rate is zero.
fn apply_dropout<F: Real>(
    tape: &mut Tape<F>,
    cfg: &ModelConfig,
    x: Var,
    opts: &mut EncodeOpts<'_, F>,
) -> Result<Var, ModelError> {
    let Some(rng) = opts.dropout_rng.as_deref_mut() else {
        return Ok(x);
    };
    if cfg.dropout <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - cfg.dropout;
    let shape = tape.value(x).shape().to_vec();
    let numel: usize = shape.iter().product();
    let mask: Vec<F> = (0..numel)
        .map(|_| {
            if rng.gen_range(0.0..1.0) < keep {
                F::of(1.0 / keep)
            } else {
                F::zero()
            }
        })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    Ok(tape.mul(x, mask)?)
}
