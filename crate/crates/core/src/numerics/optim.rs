//! Adam with bias correction and a linear warmup/decay learning-rate
//! schedule.

use serde::{Deserialize, Serialize};

use super::{NumericsError, Real, Tensor};

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    /// First and second moments, one pair per parameter, in the same order
    /// the parameters are handed to `step`.
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(param_shapes: &[Vec<usize>]) -> Self {
        Self {
            step: 0,
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            m: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(
        &mut self,
        params: &mut [Tensor<F>],
        grads: &[Tensor<F>],
        lr: F,
    ) -> Result<(), NumericsError> {
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, pv) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (F::one() - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (F::one() - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Linear ramp 0 → peak over `warmup_steps`, then linear decay to 0 at
/// `total_steps`. Steps outside [0, total_steps] clamp to the endpoint
/// value (0 on both sides).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.min(self.total_steps);
        if step <= self.warmup_steps {
            self.peak_lr * step as f64 / self.warmup_steps as f64
        } else {
            let remain = (self.total_steps - step) as f64;
            let span = (self.total_steps - self.warmup_steps) as f64;
            self.peak_lr * remain / span
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_endpoints_and_midpoint() {
        let s = LrSchedule {
            peak_lr: 1e-3,
            warmup_steps: 100,
            total_steps: 1100,
        };
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(100), 1e-3);
        assert!((s.lr_at(600) - 5e-4).abs() < 1e-15);
        assert_eq!(s.lr_at(1100), 0.0);
        // out of range clamps to the endpoint value
        assert_eq!(s.lr_at(5000), 0.0);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut params = vec![Tensor::<f64>::new(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap()];
        let grads = vec![Tensor::<f64>::zeros(vec![2, 2])];
        let mut st = AdamState::new(&[vec![2, 2]]);
        let before = params[0].clone();
        st.step(&mut params, &grads, 1e-2).unwrap();
        assert_eq!(params[0], before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        // With zero moments, one step moves each weight by -lr·g/(|g|+ε')
        // to first order, i.e. -lr·sign(g) up to ε.
        let mut params = vec![Tensor::<f64>::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap()];
        let grads = vec![Tensor::<f64>::new(vec![1, 3], vec![0.5, -2.0, 1e-3]).unwrap()];
        let mut st = AdamState::new(&[vec![1, 3]]);
        let lr = 1e-2;
        st.step(&mut params, &grads, lr).unwrap();
        for (p, g) in params[0].data().iter().zip(grads[0].data()) {
            let expect = -lr * g / (g.abs() + 1e-8);
            assert!((p - expect).abs() < 1e-9, "p={p} expect={expect}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::<f64>::zeros(vec![2, 2])];
        let grads = vec![Tensor::<f64>::zeros(vec![2, 3])];
        let mut st = AdamState::new(&[vec![2, 2]]);
        assert!(st.step(&mut params, &grads, 1e-2).is_err());
    }
}
