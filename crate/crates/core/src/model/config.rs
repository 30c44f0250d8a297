//! Model hyperparameters, named reference configs, and the canonical
//! parameter listing (names + shapes) they induce.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config name `{0}` (expected tf12-ref, tf24-ref or paper-default)")]
    UnknownName(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// Pose-projection width d.
    pub pose_proj_dim: usize,
    /// Transformer token width.
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Latent code width D.
    pub latent_dim: usize,
    /// Sub-patch side p.
    pub patch_size: usize,
    /// Crop side m.
    pub crop_size: usize,
    /// Raster channels C.
    pub channels: usize,
    pub past_len: usize,
    pub future_len: usize,
    /// Decoder recurrent state width.
    pub recurrent_dim: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// The two budget-matched reference configs plus the hyperparameters
    /// quoted for the full-size model. The reference widths are chosen so
    /// that total trainable parameters land near 164K (12 layers) and
    /// 192K (24 layers); `paper-default` keeps d=1024 and a 256-wide
    /// transformer and does not meet those budgets.
    pub fn named(name: &str) -> Result<Self, ConfigError> {
        let cfg = match name {
            "tf12-ref" => Self::reference(name, 12),
            "tf24-ref" => Self::reference(name, 24),
            "paper-default" => Self {
                name: name.into(),
                pose_proj_dim: 1024,
                model_dim: 256,
                heads: 8,
                layers: 12,
                latent_dim: 256,
                patch_size: 16,
                crop_size: 16,
                channels: 3,
                past_len: 6,
                future_len: 6,
                recurrent_dim: 96,
                mlp_ratio: 4,
                dropout: 0.0,
            },
            other => return Err(ConfigError::UnknownName(other.into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn reference(name: &str, layers: usize) -> Self {
        Self {
            name: name.into(),
            pose_proj_dim: 256,
            model_dim: 16,
            heads: 2,
            layers,
            latent_dim: 256,
            patch_size: 16,
            crop_size: 16,
            channels: 3,
            past_len: 6,
            future_len: 6,
            recurrent_dim: 96,
            mlp_ratio: 4,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model_dim % self.heads != 0 {
            return Err(ConfigError::Invalid(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.model_dim % 16 != 0 {
            return Err(ConfigError::Invalid(format!(
                "model_dim {} must be a multiple of 16 for the positional layout",
                self.model_dim
            )));
        }
        if self.crop_size % self.patch_size != 0 {
            return Err(ConfigError::Invalid(format!(
                "patch size {} does not divide crop size {}",
                self.patch_size, self.crop_size
            )));
        }
        if self.layers == 0 || self.latent_dim == 0 || self.past_len == 0 || self.future_len == 0 {
            return Err(ConfigError::Invalid("zero-sized dimension".into()));
        }
        Ok(())
    }

    /// Sub-patch tokens per crop.
    pub fn sub_patches(&self) -> usize {
        let per_side = self.crop_size / self.patch_size;
        per_side * per_side
    }

    /// Decoder conditioning input width: [latent ; s_prev ; s_prev − s_prev2].
    pub fn decoder_in(&self) -> usize {
        self.latent_dim + 4
    }

    /// Canonical (name, shape) listing of every trainable tensor. The
    /// checkpoint layout and the optimizer walk parameters in this order.
    pub fn param_spec(&self) -> Vec<(String, Vec<usize>)> {
        let md = self.model_dim;
        let mut spec: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| spec.push((name, shape));

        push("encoder.pose_proj.w".into(), vec![2, self.pose_proj_dim]);
        push("encoder.pose_proj.b".into(), vec![1, self.pose_proj_dim]);
        push("encoder.pose_tok.w".into(), vec![self.pose_proj_dim, md]);
        push("encoder.pose_tok.b".into(), vec![1, md]);
        let flat = self.patch_size * self.patch_size * self.channels;
        push("encoder.patch_embed.w".into(), vec![flat, md]);
        push("encoder.patch_embed.b".into(), vec![1, md]);
        for l in 0..self.layers {
            let p = format!("encoder.block{l:02}");
            push(format!("{p}.ln1.g"), vec![1, md]);
            push(format!("{p}.ln1.b"), vec![1, md]);
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("{p}.attn.{w}"), vec![md, md]);
            }
            for b in ["bq", "bk", "bv", "bo"] {
                push(format!("{p}.attn.{b}"), vec![1, md]);
            }
            push(format!("{p}.ln2.g"), vec![1, md]);
            push(format!("{p}.ln2.b"), vec![1, md]);
            push(format!("{p}.mlp.w1"), vec![md, self.mlp_ratio * md]);
            push(format!("{p}.mlp.b1"), vec![1, self.mlp_ratio * md]);
            push(format!("{p}.mlp.w2"), vec![self.mlp_ratio * md, md]);
            push(format!("{p}.mlp.b2"), vec![1, md]);
        }
        push("encoder.final_ln.g".into(), vec![1, md]);
        push("encoder.final_ln.b".into(), vec![1, md]);
        push("encoder.latent.w".into(), vec![md, self.latent_dim]);
        push("encoder.latent.b".into(), vec![1, self.latent_dim]);

        let (din, h) = (self.decoder_in(), self.recurrent_dim);
        for gate in ["r", "u", "n"] {
            push(format!("decoder.gru.wx{gate}"), vec![din, h]);
            push(format!("decoder.gru.wh{gate}"), vec![h, h]);
            push(format!("decoder.gru.b{gate}"), vec![1, h]);
        }
        push("decoder.head.w".into(), vec![h, 5]);
        push("decoder.head.b".into(), vec![1, 5]);
        spec
    }

    pub fn param_count(&self) -> usize {
        self.param_spec()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
