//! Trajectory prediction pipeline: a self-attention encoder over fused
//! pose/patch/positional embeddings, an autoregressive normalizing-flow
//! decoder, symmetric cross-entropy training against a drivable-area grid
//! prior, and the minADE/minFDE/rF/DAO/DAC metrics suite.

pub mod cli;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod plot;
pub mod scene;
pub mod seeding;
pub mod train;

pub use cli::cli_main;
