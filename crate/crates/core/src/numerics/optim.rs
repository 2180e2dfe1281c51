use serde::{Deserialize, Serialize};

use super::mlp::{ModelParams, ParamGrads};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First-order optimizer state. Moment buffers are allocated on the first
/// step and must keep the same shapes afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update in place. Non-finite gradients are rejected before
    /// anything is touched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return shape_err(format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                grads.len()
            ));
        }
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return shape_err(format!(
                    "tensor {t}: {} parameters, {} gradients",
                    p.len(),
                    g.len()
                ));
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("gradient tensor {t} is not finite")));
            }
        }
        if self.kind == OptimizerKind::Adam {
            if self.m.is_empty() {
                self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                self.v = self.m.clone();
            } else if self.m.len() != grads.len()
                || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len())
            {
                return shape_err("gradient shapes changed between optimizer steps");
            }
        }

        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let t = self.step_count as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * gi;
                        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Updates the backbone and prediction head of `params` from `grads`.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut ModelParams,
    grads: &ParamGrads,
) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.primal_tensors_mut();
    state.step(&mut p, &g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut s = OptimizerState::sgd(0.1);
        let mut p = vec![1.0];
        s.step(&mut [p.as_mut_slice()], &[&[2.0]]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradients_leave_params_alone() {
        let mut s = OptimizerState::adam(0.005);
        let mut p = vec![0.3, -1.2];
        for _ in 0..50 {
            s.step(&mut [p.as_mut_slice()], &[&[0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let lr = 0.005;
        let g = [0.7, -3.0, 1e-3];
        let mut s = OptimizerState::adam(lr);
        let mut p = vec![0.0; 3];
        s.step(&mut [p.as_mut_slice()], &[&g]).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi.abs() - lr).abs() < 1e-7);
        }
    }

    #[test]
    fn non_finite_gradient_leaves_state_unchanged() {
        let mut s = OptimizerState::adam(0.1);
        let mut p = vec![1.0, 2.0];
        s.step(&mut [p.as_mut_slice()], &[&[0.5, 0.5]]).unwrap();
        let before = (s.clone(), p.clone());
        let err = s.step(&mut [p.as_mut_slice()], &[&[f64::NAN, 0.0]]);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(before, (s, p));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = OptimizerState::sgd(0.1);
        let mut p = vec![1.0, 2.0];
        assert!(s.step(&mut [p.as_mut_slice()], &[&[1.0]]).is_err());
    }
}
