use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Pool;
use crate::error::{input_err, Result};
use crate::losses::Targets;
use crate::numerics::{seeded_rng, Matrix};

fn default_center_scale() -> f64 {
    2.0
}

/// Isotropic Gaussian classes around fixed centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation.
    pub spread: f64,
    /// Distance of each class center from the origin.
    #[serde(default = "default_center_scale")]
    pub center_scale: f64,
}

/// Deterministic class centers.
///
/// With `dim >= n_classes` class `c` sits at `scale * e_c`. Otherwise the
/// centers form a regular polygon of radius `scale` in the first two
/// coordinates, or a line with spacing `scale` when `dim == 1`.
pub fn blob_centers(n_classes: usize, dim: usize, scale: f64) -> Matrix {
    let mut m = Matrix::zeros(n_classes, dim);
    for c in 0..n_classes {
        if dim >= n_classes {
            m.set(c, c, scale);
        } else if dim >= 2 {
            let a = std::f64::consts::TAU * c as f64 / n_classes as f64;
            m.set(c, 0, scale * a.cos());
            m.set(c, 1, scale * a.sin());
        } else {
            m.set(c, 0, scale * c as f64);
        }
    }
    m
}

pub fn synth_blobs_with(cfg: &BlobConfig, seed: u64) -> Result<Pool> {
    if cfg.n_per_class == 0 || cfg.n_classes == 0 || cfg.dim == 0 {
        return input_err("blob counts and dimension must be at least 1");
    }
    if !(cfg.spread >= 0.0) || !cfg.center_scale.is_finite() {
        return input_err("spread must be nonnegative and the center scale finite");
    }
    let centers = blob_centers(cfg.n_classes, cfg.dim, cfg.center_scale);
    let mut rng = seeded_rng(seed, 21);
    let n = cfg.n_per_class * cfg.n_classes;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut data = vec![0.0; n * cfg.dim];
    let mut labels = vec![0; n];
    for (slot, &k) in order.iter().enumerate() {
        let c = k / cfg.n_per_class;
        labels[slot] = c;
        for j in 0..cfg.dim {
            let z: f64 = rng.sample(StandardNormal);
            data[slot * cfg.dim + j] = centers.get(c, j) + cfg.spread * z;
        }
    }
    let features = Matrix::from_vec(n, cfg.dim, data)?;
    Pool::new(
        features,
        Some(Targets::Classes {
            labels,
            n_classes: cfg.n_classes,
        }),
    )
}

pub fn synth_blobs(
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Pool> {
    synth_blobs_with(
        &BlobConfig {
            n_per_class,
            n_classes,
            dim,
            spread,
            center_scale: default_center_scale(),
        },
        seed,
    )
}

/// Smooth nonlinear regression: `y = sum_j w_j x_j + 0.5 sin(3 x_0) + noise`
/// with `x ~ U(-1, 1)^dim` and `w_j = (j + 1) / dim`.
pub fn synth_regression(n: usize, dim: usize, noise: f64, seed: u64) -> Result<Pool> {
    if n == 0 || dim == 0 {
        return input_err("regression pool needs at least one sample and feature");
    }
    let mut rng = seeded_rng(seed, 22);
    let mut x = Matrix::zeros(n, dim);
    let mut y = Matrix::zeros(n, 1);
    for i in 0..n {
        let mut t = 0.0;
        for j in 0..dim {
            let v = rng.random_range(-1.0..1.0);
            x.set(i, j, v);
            t += (j + 1) as f64 / dim as f64 * v;
        }
        t += 0.5 * (3.0 * x.get(i, 0)).sin();
        let e: f64 = rng.sample(StandardNormal);
        y.set(i, 0, t + noise * e);
    }
    Pool::new(x, Some(Targets::Values(y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sq_dist;

    fn labels(p: &Pool) -> Vec<usize> {
        match p.targets.as_ref().unwrap() {
            Targets::Classes { labels, .. } => labels.clone(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn exact_class_balance_and_reproducible() {
        let p = synth_blobs(25, 4, 3, 0.3, 9).unwrap();
        let l = labels(&p);
        for c in 0..4 {
            assert_eq!(l.iter().filter(|&&v| v == c).count(), 25);
        }
        assert_eq!(p, synth_blobs(25, 4, 3, 0.3, 9).unwrap());
        assert_ne!(p, synth_blobs(25, 4, 3, 0.3, 10).unwrap());
    }

    #[test]
    fn zero_spread_nearest_centroid_is_perfect() {
        for dim in [1, 2, 6] {
            let p = synth_blobs(10, 4, dim, 0.0, 1).unwrap();
            let centers = blob_centers(4, dim, 2.0);
            let l = labels(&p);
            for (i, row) in p.features.iter_rows().enumerate() {
                let nearest = (0..4)
                    .min_by(|&a, &b| {
                        sq_dist(row, centers.row(a)).total_cmp(&sq_dist(row, centers.row(b)))
                    })
                    .unwrap();
                assert_eq!(nearest, l[i]);
            }
        }
    }

    #[test]
    fn regression_shapes() {
        let p = synth_regression(30, 4, 0.1, 2).unwrap();
        assert_eq!(p.features.shape(), (30, 4));
        assert!(matches!(p.targets, Some(Targets::Values(ref m)) if m.shape() == (30, 1)));
    }
}
