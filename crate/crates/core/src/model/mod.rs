//! Model weights and forward passes: the self-attention encoder and the
//! normalizing-flow decoder, bound onto a tape per pass.

mod config;
pub mod encoder;
pub mod flow;

pub use config::{ConfigError, ModelConfig};

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::numerics::{NumericsError, Real, Tape, Tensor, Var};
use crate::scene::{Pose, Scene, SceneError};
use crate::seeding::substream;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing parameter tensor `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeDrift {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
}

/// Named weight tensors in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    entries: IndexMap<String, Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    /// Seeded init: weight matrices uniform in ±1/√fan_in, biases zero,
    /// layer-norm gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut entries = IndexMap::new();
        for (name, shape) in cfg.param_spec() {
            let numel: usize = shape.iter().product();
            let data = if name.ends_with(".g") {
                vec![F::one(); numel]
            } else if shape[0] == 1 {
                vec![F::zero(); numel]
            } else {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                let mut rng = substream(seed, &format!("init/{name}"));
                (0..numel)
                    .map(|_| F::of(rng.gen_range(-bound..bound)))
                    .collect()
            };
            entries.insert(
                name,
                Tensor::new(shape, data).expect("init data matches shape"),
            );
        }
        Self { entries }
    }

    /// Rebuild from named tensors, validating against the config's
    /// canonical listing.
    pub fn from_tensors(
        cfg: &ModelConfig,
        mut tensors: IndexMap<String, Tensor<F>>,
    ) -> Result<Self, ModelError> {
        let mut entries = IndexMap::new();
        for (name, shape) in cfg.param_spec() {
            let t = tensors
                .shift_remove(&name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ShapeDrift {
                    name,
                    got: t.shape().to_vec(),
                    expected: shape,
                });
            }
            entries.insert(name, t);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        &self.entries[name]
    }

    /// Overwrite one tensor's data in place; the shape is kept.
    pub fn set(&mut self, name: &str, data: &[F]) {
        let t = &mut self.entries[name];
        assert_eq!(t.numel(), data.len(), "set `{name}` length");
        t.data_mut().copy_from_slice(data);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.entries.values_mut()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.entries.values().map(|t| t.shape().to_vec()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }
}

/// Tape bindings for every parameter of one pass.
pub struct VarMap {
    map: IndexMap<String, Var>,
}

impl VarMap {
    pub fn v(&self, name: &str) -> Var {
        self.map[name]
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.map.iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub cfg: ModelConfig,
    pub params: ParamStore<F>,
}

/// One agent's sampled futures with their exact model log-densities.
#[derive(Debug, Clone)]
pub struct AgentPrediction {
    pub id: u32,
    pub samples: Vec<Vec<Pose>>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenePrediction {
    pub agents: Vec<AgentPrediction>,
}

impl<F: Real> Model<F> {
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        let params = ParamStore::init(&cfg, seed);
        Self { cfg, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Bind every parameter onto a tape; trainable bindings produce
    /// gradients on backward, frozen ones do not.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> VarMap {
        let map = self
            .params
            .iter()
            .map(|(name, t)| {
                let var = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), var)
            })
            .collect();
        VarMap { map }
    }

    /// Gradients for every parameter, in store order.
    pub fn collect_grads(
        &self,
        grads: &crate::numerics::Gradients<F>,
        vars: &VarMap,
    ) -> Vec<Tensor<F>> {
        self.params
            .names()
            .map(|name| grads.grad(vars.v(name)))
            .collect()
    }

    /// k sampled futures per agent plus their log-densities. Draws come
    /// from substreams of `(seed, label)` keyed by (agent, draw), so the
    /// result is independent of evaluation order.
    pub fn predict_scene(
        &self,
        scene: &Scene,
        k: usize,
        seed: u64,
        label: &str,
    ) -> Result<ScenePrediction, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let codes = encoder::encode_scene(&mut tape, &vars, &self.cfg, scene)?;
        let t_future = self.cfg.future_len;
        let mut agents = Vec::with_capacity(scene.tracks.len());
        for (a, track) in scene.tracks.iter().enumerate() {
            let anchor = track.last_observed();
            let prev2 = track.past[track.past.len() - 2];
            let mut samples = Vec::with_capacity(k);
            let mut log_probs = Vec::with_capacity(k);
            for draw in 0..k {
                let mut rng =
                    substream(seed, &format!("{label}/z/{id}/{draw}", id = track.agent_id));
                let zs: Vec<[f64; 2]> = (0..t_future)
                    .map(|_| {
                        [
                            StandardNormal.sample(&mut rng),
                            StandardNormal.sample(&mut rng),
                        ]
                    })
                    .collect();
                let out = flow::rollout(
                    &mut tape, &vars, &self.cfg, codes[a], anchor, prev2, &zs,
                )?;
                samples.push(
                    out.positions
                        .iter()
                        .map(|&v| {
                            let t = tape.value(v);
                            Pose::new(t.data()[0].as_f64(), t.data()[1].as_f64())
                        })
                        .collect(),
                );
                log_probs.push(tape.value(out.log_prob).item().as_f64());
            }
            agents.push(AgentPrediction {
                id: track.agent_id,
                samples,
                log_probs,
            });
        }
        Ok(ScenePrediction { agents })
    }

    /// z = 0 mode trajectory per agent (the pure μ path).
    pub fn mode_trajectories(&self, scene: &Scene) -> Result<Vec<Vec<Pose>>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let codes = encoder::encode_scene(&mut tape, &vars, &self.cfg, scene)?;
        let zs = vec![[0.0, 0.0]; self.cfg.future_len];
        scene
            .tracks
            .iter()
            .enumerate()
            .map(|(a, track)| {
                let out = flow::rollout(
                    &mut tape,
                    &vars,
                    &self.cfg,
                    codes[a],
                    track.last_observed(),
                    track.past[track.past.len() - 2],
                    &zs,
                )?;
                Ok(out
                    .positions
                    .iter()
                    .map(|&v| {
                        let t = tape.value(v);
                        Pose::new(t.data()[0].as_f64(), t.data()[1].as_f64())
                    })
                    .collect())
            })
            .collect()
    }
}
