//! Symmetric cross-entropy training loss: the forward term is the mean
//! negative log-likelihood of the ground-truth futures under the flow,
//! the reverse term scores reparameterized model samples against the
//! grid-map prior. `total = nll + α · prior`.

use thiserror::Error;

use crate::model::{encoder, flow, Model, ModelConfig, ModelError, VarMap};
use crate::numerics::{Real, Tape, Var};
use crate::scene::Scene;
use crate::seeding::substream;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("k_mc must be at least 1")]
    BadKmc,
}

/// One evaluation of the objective, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nll_term: f64,
    pub prior_term: f64,
    pub total: f64,
    pub alpha: f64,
}

/// Tape nodes for the three loss scalars of one pass.
pub struct LossTerms {
    pub nll: Var,
    pub prior: Var,
    pub total: Var,
}

/// Mean over all agents in the batch of −log_prob(ground-truth future),
/// teacher-forced through the flow.
pub fn nll_term_on<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    batch: &[&Scene],
) -> Result<Var, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let mut neg_lps = Vec::new();
    for scene in batch {
        let codes = encoder::encode_scene(tape, vars, cfg, scene)?;
        for (a, track) in scene.tracks.iter().enumerate() {
            let tf = flow::teacher_forced(
                tape,
                vars,
                cfg,
                codes[a],
                track.last_observed(),
                track.past[track.past.len() - 2],
                &track.future,
            )?;
            neg_lps.push(tape.neg(tf.log_prob)?);
        }
    }
    mean_of(tape, &neg_lps)
}

/// Monte-Carlo reverse cross-entropy: k_mc reparameterized rollouts per
/// agent, each trajectory point scored by −log p̂ at its position. The
/// prior enters the tape as an external node carrying its bilinear
/// partials, so gradients flow back through the sampled positions.
pub fn prior_term_on<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    batch: &[&Scene],
    k_mc: usize,
    seed: u64,
    label: &str,
) -> Result<Var, ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if k_mc == 0 {
        return Err(ObjectiveError::BadKmc);
    }
    let mut penalties = Vec::new();
    for (s, scene) in batch.iter().enumerate() {
        let codes = encoder::encode_scene(tape, vars, cfg, scene)?;
        let frame = scene.frame().clone();
        for (a, track) in scene.tracks.iter().enumerate() {
            for draw in 0..k_mc {
                let mut rng = substream(
                    seed,
                    &format!("{label}/mc/{s}/{id}/{draw}", id = track.agent_id),
                );
                let zs: Vec<[f64; 2]> = (0..cfg.future_len)
                    .map(|_| {
                        [
                            StandardNormal.sample(&mut rng),
                            StandardNormal.sample(&mut rng),
                        ]
                    })
                    .collect();
                let out = flow::rollout(
                    tape,
                    vars,
                    cfg,
                    codes[a],
                    track.last_observed(),
                    track.past[track.past.len() - 2],
                    &zs,
                )?;
                for &pos in &out.positions {
                    let x = tape.elem(pos, 0, 0)?;
                    let y = tape.elem(pos, 0, 1)?;
                    let p = crate::scene::Pose::new(
                        tape.value(x).item().as_f64(),
                        tape.value(y).item().as_f64(),
                    );
                    let (lp, dx, dy) = scene.prior.log_prob_with_grad(&frame, &p);
                    let node =
                        tape.external_scalar(x, y, F::of(lp), F::of(dx), F::of(dy))?;
                    penalties.push(tape.neg(node)?);
                }
            }
        }
    }
    mean_of(tape, &penalties)
}

/// nll + α·prior on one tape, gradients intact.
pub fn total_loss_on<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    batch: &[&Scene],
    alpha: f64,
    k_mc: usize,
    seed: u64,
    label: &str,
) -> Result<LossTerms, ObjectiveError> {
    let nll = nll_term_on(tape, vars, cfg, batch)?;
    let prior = prior_term_on(tape, vars, cfg, batch, k_mc, seed, label)?;
    let scaled = tape.scale(prior, F::of(alpha))?;
    let total = tape.add(nll, scaled)?;
    Ok(LossTerms { nll, prior, total })
}

/// Convenience evaluation on a private tape.
pub fn total_loss<F: Real>(
    model: &Model<F>,
    batch: &[&Scene],
    alpha: f64,
    k_mc: usize,
    seed: u64,
) -> Result<LossBreakdown, ObjectiveError> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let terms = total_loss_on(&mut tape, &vars, &model.cfg, batch, alpha, k_mc, seed, "eval")?;
    Ok(LossBreakdown {
        nll_term: tape.value(terms.nll).item().as_f64(),
        prior_term: tape.value(terms.prior).item().as_f64(),
        total: tape.value(terms.total).item().as_f64(),
        alpha,
    })
}

fn mean_of<F: Real>(tape: &mut Tape<F>, scalars: &[Var]) -> Result<Var, ObjectiveError> {
    let stacked = tape.stack_rows(scalars)?;
    Ok(tape.mean_all(stacked)?)
}
