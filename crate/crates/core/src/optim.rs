//! Adam with a linear warmup / linear decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear 0→base over the warmup span, then linear base→0 to the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_ratio: f64, total_steps: usize) -> Result<Self> {
        if base_lr <= 0.0 {
            return Err(Error::Config(format!("base_lr {base_lr} must be positive")));
        }
        if !(0.0..1.0).contains(&warmup_ratio) {
            return Err(Error::Config(format!(
                "warmup_ratio {warmup_ratio} outside [0, 1)"
            )));
        }
        if total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        Ok(LrSchedule {
            base_lr,
            warmup_ratio,
            total_steps,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).floor() as usize
    }

    /// Learning rate at `step ∈ [0, total_steps]`. The peak is exactly
    /// `base_lr` at the end of warmup; step 0 and `total_steps` yield 0
    /// whenever warmup is nonempty.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::IndexOutOfRange {
                what: "schedule step",
                index: step,
                size: self.total_steps,
            });
        }
        let warmup = self.warmup_steps();
        if step <= warmup {
            if warmup == 0 {
                return Ok(self.base_lr);
            }
            return Ok(self.base_lr * step as f64 / warmup as f64);
        }
        let remaining = (self.total_steps - step) as f64;
        let span = (self.total_steps - warmup) as f64;
        Ok(self.base_lr * remaining / span)
    }
}

/// Adam moment buffers for one ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Defaults of the underlying optimizer: β1 0.9, β2 0.999, ε 1e-8.
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &[(String, &Tensor)]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|(_, t)| t.numel()).collect();
        AdamState::new(&sizes)
    }

    /// One bias-corrected Adam update over all parameters. Rejects NaN
    /// gradients and shape drift explicitly.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam_step: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if lr < 0.0 {
            return Err(Error::InvalidArgument(format!("negative learning rate {lr}")));
        }
        self.step += 1;
        let correction1 = 1.0 - self.beta1.powi(self.step as i32);
        let correction2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, (name, tensor)) in params.iter_mut().enumerate() {
            let grad = &grads[idx];
            if grad.len() != tensor.numel() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: tensor.shape().to_vec(),
                    rhs: vec![grad.len()],
                });
            }
            if grad.iter().any(|g| g.is_nan()) {
                return Err(Error::Numerical(format!("NaN gradient for parameter {name}")));
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let values = tensor.values_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_peak() {
        let schedule = LrSchedule::new(2e-5, 0.1, 100).unwrap();
        assert_eq!(schedule.lr_at(0).unwrap(), 0.0);
        assert_eq!(schedule.lr_at(10).unwrap(), 2e-5);
        assert_eq!(schedule.lr_at(100).unwrap(), 0.0);
        assert!(schedule.lr_at(101).is_err());
    }

    #[test]
    fn schedule_is_piecewise_linear_with_max_base_lr() {
        let schedule = LrSchedule::new(1e-3, 0.1, 1000).unwrap();
        let warmup = schedule.warmup_steps();
        let mut max = 0.0f64;
        for step in 0..=1000 {
            let lr = schedule.lr_at(step).unwrap();
            max = max.max(lr);
            // Linearity inside each segment.
            if step + 2 <= warmup || (step >= warmup && step + 2 <= 1000) {
                let a = schedule.lr_at(step).unwrap();
                let b = schedule.lr_at(step + 1).unwrap();
                let c = schedule.lr_at(step + 2).unwrap();
                assert!((2.0 * b - a - c).abs() < 1e-18);
            }
        }
        assert_eq!(max, 1e-3);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut tensor = Tensor::vector(vec![1.0, -2.0]);
        let mut state = AdamState::new(&[2]);
        let mut params = vec![("x".to_string(), &mut tensor)];
        state.step(&mut params, &[vec![0.0, 0.0]], 0.1).unwrap();
        assert_eq!(tensor.values(), &[1.0, -2.0]);

        // After a real step the moments are nonzero; a zero-gradient step
        // decays them geometrically.
        let mut params = vec![("x".to_string(), &mut tensor)];
        state.step(&mut params, &[vec![1.0, 1.0]], 0.0).unwrap();
        let (m_before, v_before) = (state.m[0][0], state.v[0][0]);
        let mut params = vec![("x".to_string(), &mut tensor)];
        state.step(&mut params, &[vec![0.0, 0.0]], 0.0).unwrap();
        assert!((state.m[0][0] - 0.9 * m_before).abs() < 1e-15);
        assert!((state.v[0][0] - 0.999 * v_before).abs() < 1e-15);
    }

    #[test]
    fn first_step_has_closed_form() {
        let mut tensor = Tensor::vector(vec![1.0]);
        let mut state = AdamState::new(&[1]);
        let g = 0.3;
        let mut params = vec![("x".to_string(), &mut tensor)];
        state.step(&mut params, &[vec![g]], 0.1).unwrap();
        // With m = v = 0: update = lr · g / (|g| + ε·sqrt(1−β2)/…) ≈ lr·sign(g).
        let m_hat = (1.0 - 0.9) * g / (1.0 - 0.9);
        let v_hat = (1.0 - 0.999) * g * g / (1.0 - 0.999);
        let expected = 1.0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((tensor.values()[0] - expected).abs() < 1e-15);
        assert!(tensor.values()[0] < 1.0, "update must oppose the gradient");
    }

    #[test]
    fn ten_steps_match_independent_scripted_adam() {
        // f(x) = x² from x = 1 with lr = 0.1; oracle follows the update
        // equations verbatim with scalar arithmetic.
        let mut oracle_x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let mut oracle_path = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * oracle_x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            oracle_x -= lr * m_hat / (v_hat.sqrt() + eps);
            oracle_path.push(oracle_x);
        }

        let mut tensor = Tensor::vector(vec![1.0]);
        let mut state = AdamState::new(&[1]);
        let mut path = Vec::new();
        for _ in 0..10 {
            let g = 2.0 * tensor.values()[0];
            let mut params = vec![("x".to_string(), &mut tensor)];
            state.step(&mut params, &[vec![g]], lr).unwrap();
            path.push(tensor.values()[0]);
        }
        for (a, b) in path.iter().zip(&oracle_path) {
            assert!((a - b).abs() < 1e-15, "{path:?} vs {oracle_path:?}");
        }
    }

    #[test]
    fn adam_descends_a_convex_quadratic() {
        for lr in [1e-2, 1e-3] {
            let mut tensor = Tensor::vector(vec![2.0, -3.0]);
            let mut state = AdamState::new(&[2]);
            let loss = |x: &[f64]| x[0] * x[0] + 2.0 * x[1] * x[1];
            let initial = loss(tensor.values());
            for _ in 0..100 {
                let g = vec![2.0 * tensor.values()[0], 4.0 * tensor.values()[1]];
                let mut params = vec![("x".to_string(), &mut tensor)];
                state.step(&mut params, &[g], lr).unwrap();
            }
            let final_loss = loss(tensor.values());
            assert!(final_loss < initial, "lr {lr}: {initial} -> {final_loss}");
        }
    }

    #[test]
    fn nan_gradient_is_an_explicit_error() {
        let mut tensor = Tensor::vector(vec![1.0]);
        let mut state = AdamState::new(&[1]);
        let mut params = vec![("x".to_string(), &mut tensor)];
        let err = state.step(&mut params, &[vec![f64::NAN]], 0.1).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut tensor = Tensor::vector(vec![1.0, 2.0]);
        let mut state = AdamState::new(&[2]);
        let mut params = vec![("x".to_string(), &mut tensor)];
        assert!(state.step(&mut params, &[vec![0.1]], 0.1).is_err());
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_trajectories() {
        let run = || {
            let mut tensor = Tensor::vector(vec![0.5, 1.5, -0.25]);
            let mut state = AdamState::new(&[3]);
            for step in 0..25 {
                let g: Vec<f64> = tensor
                    .values()
                    .iter()
                    .map(|x| x.sin() + step as f64 * 1e-3)
                    .collect();
                let mut params = vec![("x".to_string(), &mut tensor)];
                state.step(&mut params, &[g], 0.01).unwrap();
            }
            tensor.values().to_vec()
        };
        assert_eq!(run(), run());
    }
}
