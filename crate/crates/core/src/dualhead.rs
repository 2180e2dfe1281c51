//! Dual regression head: a small MLP on frozen embeddings that predicts the
//! multiplier a labeled sample would receive, so unlabeled samples can be
//! scored without labels.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Result};
use crate::losses::dual_head_fit_loss;
use crate::numerics::{
    grad_tensors, init_dual_head, seeded_rng, Matrix, Mlp, ModelParams, OptimizerState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualHeadConfig {
    pub hidden_dims: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DualHeadConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64, 32, 16],
            lr: 1e-2,
            epochs: 200,
            seed: 0,
        }
    }
}

impl DualHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.contains(&0) {
            return input_err("dual head widths must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return input_err("dual head learning rate must be positive");
        }
        Ok(())
    }
}

/// Fit loss before the first and after the last update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualHeadFit {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

fn fit_loss(head: &Mlp, emb: &Matrix, lambdas: &[f64]) -> Result<f64> {
    let pred = head.infer(emb)?.into_vec();
    Ok(dual_head_fit_loss(&pred, lambdas)?.0)
}

/// Trains a fresh head by full-batch Adam on the squared error between
/// predicted and observed multipliers.
pub fn train_dual_head(
    embeddings: &Matrix,
    lambdas: &[f64],
    config: &DualHeadConfig,
) -> Result<(Mlp, DualHeadFit)> {
    config.validate()?;
    if embeddings.rows() == 0 {
        return input_err("no labeled embeddings to fit the dual head on");
    }
    if embeddings.rows() != lambdas.len() {
        return shape_err(format!(
            "{} embeddings but {} multipliers",
            embeddings.rows(),
            lambdas.len()
        ));
    }
    let mut rng = seeded_rng(config.seed, 41);
    let mut head = init_dual_head(embeddings.cols(), &config.hidden_dims, &mut rng)?;
    let mut opt = OptimizerState::adam(config.lr);
    let initial_loss = fit_loss(&head, embeddings, lambdas)?;
    for _ in 0..config.epochs {
        let (out, cache) = head.forward(embeddings)?;
        let (_, g) = dual_head_fit_loss(out.data(), lambdas)?;
        let g = Matrix::column(&g);
        let (grads, _) = head.backward(&cache, &g, false)?;
        let gt = grad_tensors(&grads);
        opt.step(&mut head.tensors_mut(), &gt)?;
    }
    let final_loss = fit_loss(&head, embeddings, lambdas)?;
    Ok((
        head,
        DualHeadFit {
            initial_loss,
            final_loss,
            epochs: config.epochs,
        },
    ))
}

/// One nonnegative score per embedding row.
pub fn predict_duals(head: &Mlp, embeddings: &Matrix) -> Result<Vec<f64>> {
    if let Some(d) = head.in_dim() {
        if d != embeddings.cols() {
            return shape_err(format!(
                "embeddings have {} columns, dual head expects {d}",
                embeddings.cols()
            ));
        }
    }
    Ok(head.infer(embeddings)?.into_vec())
}

/// Embeds `x_labeled` with the current backbone and replaces the model's
/// dual head with one trained on `lambdas`. Backbone and prediction head are
/// only read.
pub fn fit_dual_head(
    params: &mut ModelParams,
    x_labeled: &Matrix,
    lambdas: &[f64],
    config: &DualHeadConfig,
) -> Result<DualHeadFit> {
    let emb = params.embed(x_labeled)?;
    let (head, fit) = train_dual_head(&emb, lambdas, config)?;
    params.dual_head = head;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{init_params, MlpArchitecture};
    use rand::Rng;

    fn random_emb(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed, 99);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_targets_are_fit() {
        let emb = random_emb(40, 6, 1);
        for c in [0.5, 2.0] {
            let (head, _) = train_dual_head(&emb, &vec![c; 40], &DualHeadConfig::default()).unwrap();
            for p in predict_duals(&head, &emb).unwrap() {
                assert!((p - c).abs() <= 0.05 * c.max(1.0), "pred {p} vs {c}");
            }
        }
    }

    #[test]
    fn zero_targets_push_predictions_to_floor() {
        let emb = random_emb(40, 6, 2);
        let (head, _) = train_dual_head(&emb, &[0.0; 40], &DualHeadConfig::default()).unwrap();
        assert!(predict_duals(&head, &emb).unwrap().iter().all(|&p| (0.0..=0.05).contains(&p)));
    }

    #[test]
    fn backbone_is_frozen_and_loss_decreases() {
        let arch = MlpArchitecture::new(3, vec![5], 2);
        let mut params = init_params(&arch, 4).unwrap();
        let before = (params.backbone.clone(), params.pred_head.clone());
        let x = random_emb(30, 3, 3);
        let lambdas: Vec<f64> = (0..30).map(|i| (i % 7) as f64 * 0.3).collect();
        let fit = fit_dual_head(&mut params, &x, &lambdas, &DualHeadConfig::default()).unwrap();
        assert_eq!(before.0, params.backbone);
        assert_eq!(before.1, params.pred_head);
        assert!(fit.final_loss < fit.initial_loss);
    }

    #[test]
    fn predictions_are_pure_and_nonnegative() {
        let emb = random_emb(20, 4, 5);
        let lambdas: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let (head, _) = train_dual_head(&emb, &lambdas, &DualHeadConfig::default()).unwrap();
        let probe = random_emb(50, 4, 6).map(|v| v * 100.0);
        let a = predict_duals(&head, &probe).unwrap();
        assert!(a.iter().all(|&p| p >= 0.0));
        let perm: Vec<usize> = (0..50).rev().collect();
        let b = predict_duals(&head, &probe.select_rows(&perm)).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(b[i], a[j]);
        }
        let dup = probe.select_rows(&[3, 3]);
        let d = predict_duals(&head, &dup).unwrap();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let emb = random_emb(4, 2, 7);
        let cfg = DualHeadConfig::default();
        assert!(train_dual_head(&emb, &[0.0; 3], &cfg).is_err());
        assert!(train_dual_head(&Matrix::zeros(0, 2), &[], &cfg).is_err());
        assert!(train_dual_head(&emb, &[0.0, -1.0, 0.0, 0.0], &cfg).is_err());
        let (head, _) = train_dual_head(&emb, &[0.0; 4], &cfg).unwrap();
        assert!(predict_duals(&head, &Matrix::zeros(2, 3)).is_err());
    }
}
