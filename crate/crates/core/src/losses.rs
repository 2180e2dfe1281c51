//! Per-sample losses and their gradients with respect to model outputs.
//!
//! Values are never averaged here: the constrained problem bounds each
//! sample's loss individually, so callers aggregate as they need.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Supervision attached to a set of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Classes { labels: Vec<usize>, n_classes: usize },
    Values(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            Targets::Classes { .. } => LossKind::CrossEntropy,
            Targets::Values(_) => LossKind::Mse,
        }
    }

    /// Width of the model output these targets supervise.
    pub fn output_dim(&self) -> usize {
        match self {
            Targets::Classes { n_classes, .. } => *n_classes,
            Targets::Values(m) => m.cols(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
            Targets::Values(m) => Targets::Values(m.select_rows(idx)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerSampleLoss {
    pub values: Vec<f64>,
    /// d value_i / d output_i, one row per sample.
    pub grads: Matrix,
}

impl PerSampleLoss {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// `-log softmax(logits)[label]` per row, via log-sum-exp.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<PerSampleLoss> {
    if logits.rows() != labels.len() {
        return shape_err(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        ));
    }
    let c = logits.cols();
    let mut values = Vec::with_capacity(labels.len());
    let mut grads = Matrix::zeros(logits.rows(), c);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return input_err(format!("label {y} at row {i} is outside [0, {c})"));
        }
        let z = logits.row(i);
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("logits row {i} is not finite")));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        // Rounding can push lse - z[y] a hair below zero.
        values.push((lse - z[y]).max(0.0));
        let g = grads.row_mut(i);
        for (gj, zj) in g.iter_mut().zip(z) {
            *gj = (zj - lse).exp();
        }
        g[y] -= 1.0;
    }
    Ok(PerSampleLoss { values, grads })
}

/// Mean over output dimensions of the squared error, per row.
pub fn mse(preds: &Matrix, targets: &Matrix) -> Result<PerSampleLoss> {
    if preds.shape() != targets.shape() {
        return shape_err(format!(
            "predictions {:?} vs targets {:?}",
            preds.shape(),
            targets.shape()
        ));
    }
    let d = preds.cols() as f64;
    let mut values = Vec::with_capacity(preds.rows());
    let mut grads = Matrix::zeros(preds.rows(), preds.cols());
    for i in 0..preds.rows() {
        let mut s = 0.0;
        let g = grads.row_mut(i);
        for ((gj, p), t) in g.iter_mut().zip(preds.row(i)).zip(targets.row(i)) {
            let r = p - t;
            s += r * r;
            *gj = 2.0 * r / d;
        }
        values.push(s / d);
    }
    Ok(PerSampleLoss { values, grads })
}

pub fn per_sample_loss(outputs: &Matrix, targets: &Targets) -> Result<PerSampleLoss> {
    match targets {
        Targets::Classes { labels, .. } => cross_entropy(outputs, labels),
        Targets::Values(t) => mse(outputs, t),
    }
}

/// Mean squared error between dual-head predictions and dual targets, with
/// its gradient w.r.t. the predictions.
pub fn dual_head_fit_loss(predicted: &[f64], lambda_targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != lambda_targets.len() {
        return shape_err(format!(
            "{} predictions but {} targets",
            predicted.len(),
            lambda_targets.len()
        ));
    }
    if let Some(i) = lambda_targets.iter().position(|&l| l < 0.0 || l.is_nan()) {
        return input_err(format!(
            "dual target {i} is {} but duals are nonnegative",
            lambda_targets[i]
        ));
    }
    if predicted.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = predicted.len() as f64;
    let mut loss = 0.0;
    let grads = predicted
        .iter()
        .zip(lambda_targets)
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use rand::Rng;

    fn random_matrix(r: usize, c: usize, seed: u64, scale: f64) -> Matrix {
        let mut rng = seeded_rng(seed, 5);
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect())
            .unwrap()
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let l = cross_entropy(&Matrix::zeros(3, 10), &[0, 4, 9]).unwrap();
        for v in l.values {
            assert!((v - 10f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_true_class() {
        let mut z = Matrix::zeros(1, 4);
        z.set(0, 2, 30.0);
        let l = cross_entropy(&z, &[2]).unwrap();
        assert!(l.values[0] <= 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(matches!(
            cross_entropy(&Matrix::zeros(1, 3), &[3]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn cross_entropy_matches_naive_softmax() {
        let z = random_matrix(20, 6, 1, 4.0);
        let labels: Vec<usize> = (0..20).map(|i| i % 6).collect();
        let l = cross_entropy(&z, &labels).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            let naive = -(row[y].exp() / denom).ln();
            assert!((naive - l.values[i]).abs() <= 1e-12);
            for j in 0..6 {
                let p = row[j].exp() / denom - if j == y { 1.0 } else { 0.0 };
                assert!((p - l.grads.get(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_shift_invariant() {
        let z = random_matrix(10, 5, 2, 3.0);
        let labels: Vec<usize> = (0..10).map(|i| (i * 3) % 5).collect();
        let base = cross_entropy(&z, &labels).unwrap();
        let shifted = cross_entropy(&z.map(|v| v + 123.4), &labels).unwrap();
        for (a, b) in base.values.iter().zip(&shifted.values) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn mse_examples() {
        let p = Matrix::from_rows(&[[3.0]]).unwrap();
        let t = Matrix::from_rows(&[[1.0]]).unwrap();
        let l = mse(&p, &t).unwrap();
        assert_eq!(l.values, vec![4.0]);
        assert_eq!(l.grads.data(), &[4.0]);

        let same = mse(&p, &p).unwrap();
        assert_eq!(same.values, vec![0.0]);
        assert_eq!(same.grads.data(), &[0.0]);

        assert!(mse(&p, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn mse_matches_loop() {
        let p = random_matrix(8, 3, 3, 2.0);
        let t = random_matrix(8, 3, 4, 2.0);
        let l = mse(&p, &t).unwrap();
        for i in 0..8 {
            let mut s = 0.0;
            for j in 0..3 {
                s += (p.get(i, j) - t.get(i, j)).powi(2);
            }
            assert!((s / 3.0 - l.values[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let h = 1e-6;
        let z = random_matrix(4, 3, 7, 2.0);
        let labels = [0, 2, 1, 2];
        let t = random_matrix(4, 3, 8, 2.0);
        let ce = cross_entropy(&z, &labels).unwrap();
        let sq = mse(&z, &t).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut zp = z.clone();
                zp.set(i, j, z.get(i, j) + h);
                let mut zm = z.clone();
                zm.set(i, j, z.get(i, j) - h);
                let fd_ce = (cross_entropy(&zp, &labels).unwrap().values[i]
                    - cross_entropy(&zm, &labels).unwrap().values[i])
                    / (2.0 * h);
                let fd_sq = (mse(&zp, &t).unwrap().values[i] - mse(&zm, &t).unwrap().values[i])
                    / (2.0 * h);
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                assert!(rel(fd_ce, ce.grads.get(i, j)) <= 1e-6);
                assert!(rel(fd_sq, sq.grads.get(i, j)) <= 1e-6);
            }
        }
    }

    #[test]
    fn dual_fit_loss_examples() {
        assert_eq!(dual_head_fit_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        let (l, g) = dual_head_fit_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g, vec![-1.0, -3.0]);
        assert!(matches!(
            dual_head_fit_loss(&[0.0], &[-0.1]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn dual_fit_loss_matches_loop() {
        let mut rng = seeded_rng(3, 3);
        let p: Vec<f64> = (0..17).map(|_| rng.random_range(0.0..4.0)).collect();
        let t: Vec<f64> = (0..17).map(|_| rng.random_range(0.0..4.0)).collect();
        let mut s = 0.0;
        for i in 0..17 {
            s += (p[i] - t[i]) * (p[i] - t[i]);
        }
        assert!((s / 17.0 - dual_head_fit_loss(&p, &t).unwrap().0).abs() <= 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn losses_are_nonnegative(
                vals in proptest::collection::vec(-50.0f64..50.0, 12),
                tgt in proptest::collection::vec(-50.0f64..50.0, 12),
                label in 0usize..4,
            ) {
                let z = Matrix::from_vec(3, 4, vals).unwrap();
                let t = Matrix::from_vec(3, 4, tgt).unwrap();
                let ce = cross_entropy(&z, &[label, 0, 3]).unwrap();
                prop_assert!(ce.values.iter().all(|&v| v >= 0.0));
                let sq = mse(&z, &t).unwrap();
                prop_assert!(sq.values.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
