//! Training loop, evaluation driver, and checkpoint persistence.
//!
//! Training runs in 32-bit floats; every source of randomness (batch
//! draws, Monte-Carlo z draws, weight init) is a named substream of the
//! one master seed, so a run is reproducible bit-for-bit.

mod checkpoint;

pub use checkpoint::{
    dir_size, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError,
    CHECKPOINT_VERSION,
};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricsReport};
use crate::model::{Model, ModelConfig, ModelError};
use crate::numerics::{AdamState, LrSchedule};
use crate::objective::{self, ObjectiveError};
use crate::scene::Scene;
use crate::seeding::substream;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid train config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub alpha: f64,
    pub k_mc: usize,
    /// Global L2 gradient-norm clip. The prior term's log-density slope
    /// is huge inside boundary cells (mass rises from the floor by three
    /// orders of magnitude over one cell), and unclipped spikes inflate
    /// Adam's second moments enough to stall the likelihood term.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            total_steps: 2000,
            warmup_steps: 200,
            peak_lr: 3e-4,
            alpha: 0.5,
            k_mc: 4,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Invalid("batch_size must be at least 1".into()));
        }
        if self.total_steps == 0 || self.warmup_steps == 0 || self.warmup_steps >= self.total_steps
        {
            return Err(TrainError::Invalid(format!(
                "need 0 < warmup_steps ({}) < total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.k_mc == 0 {
            return Err(TrainError::Invalid("k_mc must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Invalid("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// One loss-curve row, one per optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRow {
    pub step: u64,
    pub nll_term: f64,
    pub prior_term: f64,
    pub total: f64,
    pub lr: f64,
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,nll_term,prior_term,total,lr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.nll_term, r.prior_term, r.total, r.lr
        ));
    }
    out
}

/// Batch indices for one step: distinct when the dataset is large enough,
/// with replacement otherwise.
fn batch_indices(seed: u64, step: u64, n: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = substream(seed, &format!("batch/{step}"));
    if batch_size <= n {
        sample(&mut rng, n, batch_size).into_vec()
    } else {
        (0..batch_size).map(|_| rng.gen_range(0..n)).collect()
    }
}

/// Scales all gradients by `max_norm / norm` when the global L2 norm
/// exceeds `max_norm`.
fn clip_global_norm(grads: &mut [crate::numerics::Tensor<f32>], max_norm: f32) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt() as f32;
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// Runs `total_steps` of Adam on the symmetric cross-entropy loss and
/// returns the final checkpoint plus the per-step loss curve.
pub fn train(
    dataset: &[Scene],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<LossRow>), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    cfg.validate()?;

    let mut model: Model<f32> = Model::init(model_cfg.clone(), cfg.seed);
    let mut adam: AdamState<f32> = AdamState::new(&model.params.shapes());
    let schedule = LrSchedule {
        peak_lr: cfg.peak_lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: cfg.total_steps,
    };

    let mut rows = Vec::with_capacity(cfg.total_steps as usize);
    for step in 0..cfg.total_steps {
        let idx = batch_indices(cfg.seed, step, dataset.len(), cfg.batch_size);
        let batch: Vec<&Scene> = idx.iter().map(|&i| &dataset[i]).collect();

        let mut tape = crate::numerics::Tape::new();
        let vars = model.bind(&mut tape, true);
        let terms = objective::total_loss_on(
            &mut tape,
            &vars,
            &model.cfg,
            &batch,
            cfg.alpha,
            cfg.k_mc,
            cfg.seed,
            &format!("step{step}"),
        )?;
        let total = f64::from(tape.value(terms.total).item());
        if !total.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        rows.push(LossRow {
            step,
            nll_term: f64::from(tape.value(terms.nll).item()),
            prior_term: f64::from(tape.value(terms.prior).item()),
            total,
            lr: schedule.lr_at(step),
        });

        let grads = tape.backward(terms.total)?;
        let mut grad_tensors = model.collect_grads(&grads, &vars);
        clip_global_norm(&mut grad_tensors, cfg.clip_norm as f32);
        let mut params: Vec<_> = model.params.iter().map(|(_, t)| t.clone()).collect();
        adam.step(&mut params, &grad_tensors, schedule.lr_at(step) as f32)?;
        for (slot, updated) in model.params.tensors_mut().zip(params) {
            *slot = updated;
        }
    }

    Ok((
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: cfg.total_steps,
            model,
            adam,
            train: cfg.clone(),
        },
        rows,
    ))
}

/// Samples k futures per agent per scene and aggregates the five metrics
/// by mean, first over agents within a scene, then over scenes.
pub fn evaluate(
    model: &Model<f32>,
    dataset: &[(String, Scene)],
    k: usize,
    seed: u64,
) -> Result<(Vec<(String, MetricsReport)>, MetricsReport), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut per_scene = Vec::with_capacity(dataset.len());
    for (name, scene) in dataset {
        let pred = model.predict_scene(scene, k, seed, name)?;
        let mut agent_reports = Vec::with_capacity(pred.agents.len());
        for (agent, track) in pred.agents.iter().zip(&scene.tracks) {
            agent_reports.push(metrics::report(
                &agent.samples,
                &track.future,
                &scene.mask,
                scene.frame(),
            )?);
        }
        let report = MetricsReport::aggregate(&agent_reports)
            .expect("scene has at least one agent after validation");
        per_scene.push((name.clone(), report));
    }
    let aggregate = MetricsReport::aggregate(
        &per_scene.iter().map(|(_, r)| *r).collect::<Vec<_>>(),
    )
    .expect("dataset non-empty");
    Ok((per_scene, aggregate))
}
