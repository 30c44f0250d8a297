//! Autoregressive affine flow decoder. Each step conditions a gated
//! recurrent unit on [latent code ; previous position ; previous velocity]
//! and projects (μ̂, lower-triangular σ). The step mean is anchored at the
//! constant-velocity extrapolation, so an all-zero network already
//! produces physically sensible rollouts. σ's Cholesky structure with a
//! softplus-floored diagonal makes every step invertible by construction
//! and its log-determinant the sum of log diagonals.
//!
//! All positions inside this module live in the agent frame (relative to
//! the last observed pose); `rollout` shifts back to the scene frame.

use super::{ModelConfig, ModelError, VarMap};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::scene::Pose;

/// Diagonal floor keeping σ comfortably invertible.
pub const SIGMA_FLOOR: f64 = 1e-3;
const LOG_2PI: f64 = 1.8378770664093453;

/// Projected per-step flow parameters, as tape nodes.
pub struct StepParams {
    pub mu: Var,
    pub l00: Var,
    pub l10: Var,
    pub l11: Var,
}

impl StepParams {
    /// log det σ = log l00 + log l11.
    fn log_det<F: Real>(&self, tape: &mut Tape<F>) -> Result<Var, ModelError> {
        let a = tape.log(self.l00)?;
        let b = tape.log(self.l11)?;
        Ok(tape.add(a, b)?)
    }
}

/// One conditioning step: maps [code ; s_prev ; s_prev − s_prev2 ; h] to
/// flow parameters and the next recurrent state.
pub fn decode_step<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    code: Var,
    s_prev: Var,
    s_prev2: Var,
    h: Var,
) -> Result<(StepParams, Var), ModelError> {
    let vel = tape.sub(s_prev, s_prev2)?;
    let x = tape.concat_cols(&[code, s_prev, vel])?;

    let gate = |tape: &mut Tape<F>, name: &str, x: Var, h: Var| -> Result<Var, ModelError> {
        let a = tape.matmul(x, vars.v(&format!("decoder.gru.wx{name}")))?;
        let b = tape.matmul(h, vars.v(&format!("decoder.gru.wh{name}")))?;
        let s = tape.add(a, b)?;
        Ok(tape.add_row(s, vars.v(&format!("decoder.gru.b{name}")))?)
    };
    let r = gate(tape, "r", x, h)?;
    let r = tape.sigmoid(r)?;
    let u = gate(tape, "u", x, h)?;
    let u = tape.sigmoid(u)?;
    let hn = tape.matmul(h, vars.v("decoder.gru.whn"))?;
    let hn = tape.mul(r, hn)?;
    let xn = tape.matmul(x, vars.v("decoder.gru.wxn"))?;
    let n = tape.add(xn, hn)?;
    let n = tape.add_row(n, vars.v("decoder.gru.bn"))?;
    let n = tape.tanh(n)?;
    let ones = tape.constant(Tensor::row_vec(vec![F::one(); cfg.recurrent_dim]));
    let keep = tape.sub(ones, u)?;
    let uh = tape.mul(u, h)?;
    let un = tape.mul(keep, n)?;
    let h_next = tape.add(uh, un)?;

    let out = tape.matmul(h_next, vars.v("decoder.head.w"))?;
    let out = tape.add_row(out, vars.v("decoder.head.b"))?;

    let mu_hat = tape.slice_cols(out, 0, 2)?;
    let two_prev = tape.scale(s_prev, F::of(2.0))?;
    let anchor = tape.sub(two_prev, s_prev2)?;
    let mu = tape.add(anchor, mu_hat)?;

    let floor = tape.constant_scalar(F::of(SIGMA_FLOOR));
    let diag = |tape: &mut Tape<F>, raw: Var| -> Result<Var, ModelError> {
        let sp = tape.softplus(raw)?;
        Ok(tape.add(sp, floor)?)
    };
    let raw00 = tape.elem(out, 0, 2)?;
    let l00 = diag(tape, raw00)?;
    let l10 = tape.elem(out, 0, 3)?;
    let raw11 = tape.elem(out, 0, 4)?;
    let l11 = diag(tape, raw11)?;

    Ok((StepParams { mu, l00, l10, l11 }, h_next))
}

/// Teacher-forced likelihood pass: conditions every step on the
/// ground-truth prefix, inverts the affine map exactly, and accumulates
/// Σ_t [ −½‖z_t‖² − log 2π − log det σ_t ].
pub struct TeacherForced {
    pub log_prob: Var,
    /// Recovered latent per step.
    pub z: Vec<(Var, Var)>,
}

pub fn teacher_forced<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    code: Var,
    anchor: Pose,
    prev2: Pose,
    traj: &[Pose],
) -> Result<TeacherForced, ModelError> {
    let rel = |p: &Pose| [F::of(p.x - anchor.x), F::of(p.y - anchor.y)];
    let mut s_prev = tape.constant(Tensor::row_vec(vec![F::zero(), F::zero()]));
    let mut s_prev2 = tape.constant(Tensor::row_vec(rel(&prev2).to_vec()));
    let mut h = tape.constant(Tensor::zeros(vec![1, cfg.recurrent_dim]));

    let mut log_prob = tape.constant_scalar(F::zero());
    let mut zs = Vec::with_capacity(traj.len());
    for target in traj {
        let (params, h_next) = decode_step(tape, vars, cfg, code, s_prev, s_prev2, h)?;
        h = h_next;
        let s_t = tape.constant(Tensor::row_vec(rel(target).to_vec()));
        let (z0, z1) = invert_step(tape, &params, s_t)?;
        log_prob = accumulate_step_logprob(tape, log_prob, &params, z0, z1)?;
        zs.push((z0, z1));
        s_prev2 = s_prev;
        s_prev = s_t;
    }
    Ok(TeacherForced {
        log_prob,
        z: zs,
    })
}

/// Free-running rollout from fixed latent draws: s_t = σ_t z_t + μ_t,
/// conditioning each step on the generated prefix. Returns scene-frame
/// positions and the exact log-density of the generated trajectory.
pub struct Rollout {
    pub positions: Vec<Var>,
    pub log_prob: Var,
}

pub fn rollout<F: Real>(
    tape: &mut Tape<F>,
    vars: &VarMap,
    cfg: &ModelConfig,
    code: Var,
    anchor: Pose,
    prev2: Pose,
    zs: &[[f64; 2]],
) -> Result<Rollout, ModelError> {
    let mut s_prev = tape.constant(Tensor::row_vec(vec![F::zero(), F::zero()]));
    let mut s_prev2 = tape.constant(Tensor::row_vec(vec![
        F::of(prev2.x - anchor.x),
        F::of(prev2.y - anchor.y),
    ]));
    let mut h = tape.constant(Tensor::zeros(vec![1, cfg.recurrent_dim]));
    let anchor_c = tape.constant(Tensor::row_vec(vec![F::of(anchor.x), F::of(anchor.y)]));

    let mut log_prob = tape.constant_scalar(F::zero());
    let mut positions = Vec::with_capacity(zs.len());
    for z in zs {
        let (params, h_next) = decode_step(tape, vars, cfg, code, s_prev, s_prev2, h)?;
        h = h_next;
        let z0 = tape.constant_scalar(F::of(z[0]));
        let z1 = tape.constant_scalar(F::of(z[1]));
        // s = σ z + μ with lower-triangular σ
        let sx = {
            let a = tape.mul(params.l00, z0)?;
            let mu0 = tape.elem(params.mu, 0, 0)?;
            tape.add(a, mu0)?
        };
        let sy = {
            let a = tape.mul(params.l10, z0)?;
            let b = tape.mul(params.l11, z1)?;
            let ab = tape.add(a, b)?;
            let mu1 = tape.elem(params.mu, 0, 1)?;
            tape.add(ab, mu1)?
        };
        let s_t = tape.concat_cols(&[sx, sy])?;
        log_prob = accumulate_step_logprob(tape, log_prob, &params, z0, z1)?;
        positions.push(tape.add(s_t, anchor_c)?);
        s_prev2 = s_prev;
        s_prev = s_t;
    }
    Ok(Rollout {
        positions,
        log_prob,
    })
}

/// z = σ⁻¹ (s − μ) by forward substitution on the triangular factor.
fn invert_step<F: Real>(
    tape: &mut Tape<F>,
    params: &StepParams,
    s_t: Var,
) -> Result<(Var, Var), ModelError> {
    let resid = tape.sub(s_t, params.mu)?;
    let r0 = tape.elem(resid, 0, 0)?;
    let r1 = tape.elem(resid, 0, 1)?;
    let z0 = tape.div(r0, params.l00)?;
    let cross = tape.mul(params.l10, z0)?;
    let num = tape.sub(r1, cross)?;
    let z1 = tape.div(num, params.l11)?;
    Ok((z0, z1))
}

fn accumulate_step_logprob<F: Real>(
    tape: &mut Tape<F>,
    acc: Var,
    params: &StepParams,
    z0: Var,
    z1: Var,
) -> Result<Var, ModelError> {
    let z0sq = tape.mul(z0, z0)?;
    let z1sq = tape.mul(z1, z1)?;
    let nsq = tape.add(z0sq, z1sq)?;
    let half_nsq = tape.scale(nsq, F::of(0.5))?;
    let log_det = params.log_det(tape)?;
    let c = tape.constant_scalar(F::of(LOG_2PI));
    let term = tape.add(half_nsq, log_det)?;
    let term = tape.add(term, c)?;
    let neg = tape.neg(term)?;
    Ok(tape.add(acc, neg)?)
}
