//! Pools of samples, loaders, synthetic generators, and pool transforms.

mod idx;
mod synth;
mod tabular;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use synth::{blob_centers, synth_blobs, synth_blobs_with, synth_regression, BlobConfig};
pub use tabular::{load_csv, read_csv_columns};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::losses::Targets;
use crate::numerics::{seeded_rng, Matrix};

/// Features with complete supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Targets) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} targets",
                features.rows(),
                targets.len()
            )));
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            targets: self.targets.select(idx),
        }
    }
}

/// A labeled/unlabeled partition over one feature matrix, plus a held-out
/// test set that no transform touches.
///
/// `provenance[i]` is the index of the original sample that row `i` was
/// derived from; it is the identity until [`clone_redundant`] runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    pub features: Matrix,
    pub targets: Option<Targets>,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Option<Dataset>,
    pub provenance: Vec<usize>,
}

impl Pool {
    /// Everything starts unlabeled.
    pub fn new(features: Matrix, targets: Option<Targets>) -> Result<Self> {
        if let Some(t) = &targets {
            if t.len() != features.rows() {
                return Err(Error::Shape(format!(
                    "{} feature rows but {} targets",
                    features.rows(),
                    t.len()
                )));
            }
        }
        let n = features.rows();
        Ok(Self {
            features,
            targets,
            labeled: Vec::new(),
            unlabeled: (0..n).collect(),
            test: None,
            provenance: (0..n).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_test(mut self, test: Dataset) -> Result<Self> {
        if test.features.cols() != self.dim() {
            return Err(Error::Shape("test features have a different width".into()));
        }
        self.test = Some(test);
        Ok(self)
    }

    fn targets(&self) -> Result<&Targets> {
        self.targets
            .as_ref()
            .ok_or_else(|| Error::Input("pool has no labels".into()))
    }

    pub fn labeled_dataset(&self) -> Result<Dataset> {
        Ok(Dataset {
            features: self.features.select_rows(&self.labeled),
            targets: self.targets()?.select(&self.labeled),
        })
    }

    pub fn unlabeled_features(&self) -> Matrix {
        self.features.select_rows(&self.unlabeled)
    }

    pub fn labeled_features(&self) -> Matrix {
        self.features.select_rows(&self.labeled)
    }

    /// Moves the unlabeled samples at `positions` (indices into `unlabeled`)
    /// to the labeled set. Returns the pool indices that moved.
    pub fn label_positions(&mut self, positions: &[usize]) -> Result<Vec<usize>> {
        let mut take = vec![false; self.unlabeled.len()];
        for &p in positions {
            if p >= take.len() {
                return input_err(format!(
                    "position {p} outside the {} unlabeled samples",
                    take.len()
                ));
            }
            if std::mem::replace(&mut take[p], true) {
                return input_err(format!("position {p} queried twice"));
            }
        }
        let moved: Vec<usize> = positions.iter().map(|&p| self.unlabeled[p]).collect();
        let mut keep = Vec::with_capacity(self.unlabeled.len() - moved.len());
        for (p, &i) in self.unlabeled.iter().enumerate() {
            if !take[p] {
                keep.push(i);
            }
        }
        self.unlabeled = keep;
        self.labeled.extend_from_slice(&moved);
        Ok(moved)
    }

    /// Labeled and unlabeled sets are disjoint, in range, and labels exist
    /// for every labeled index.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &i in self.labeled.iter().chain(&self.unlabeled) {
            if i >= self.len() {
                return input_err(format!("index {i} outside pool of {}", self.len()));
            }
            if std::mem::replace(&mut seen[i], true) {
                return input_err(format!("index {i} appears twice"));
            }
        }
        if !self.labeled.is_empty() {
            self.targets()?;
        }
        if self.provenance.len() != self.len() {
            return input_err("provenance length differs from pool size");
        }
        Ok(())
    }
}

/// Picks `n_initial` samples uniformly without replacement as the labeled
/// set; everything else becomes unlabeled.
pub fn split_initial(pool: &Pool, n_initial: usize, seed: u64) -> Result<Pool> {
    let n = pool.len();
    if n_initial > n {
        return input_err(format!("cannot label {n_initial} of {n} samples"));
    }
    let mut rng = seeded_rng(seed, 11);
    let mut chosen = sample(&mut rng, n, n_initial).into_vec();
    chosen.sort_unstable();
    let mut is_labeled = vec![false; n];
    for &i in &chosen {
        is_labeled[i] = true;
    }
    let mut out = pool.clone();
    out.labeled = chosen;
    out.unlabeled = (0..n).filter(|&i| !is_labeled[i]).collect();
    out.check_invariants()?;
    Ok(out)
}

/// Replicates every sample `factor` times. Copy `c` of sample `i` lands at
/// row `c * n + i`. Labeled samples keep copy 0 labeled and put the other
/// copies in the unlabeled set; unlabeled samples stay unlabeled.
pub fn clone_redundant(pool: &Pool, factor: usize) -> Result<Pool> {
    if factor == 0 {
        return input_err("clone factor must be at least 1");
    }
    let n = pool.len();
    let d = pool.dim();
    let mut data = Vec::with_capacity(n * d * factor);
    for _ in 0..factor {
        data.extend_from_slice(pool.features.data());
    }
    let features = Matrix::from_vec(n * factor, d, data)?;
    let targets = pool.targets.as_ref().map(|t| {
        let idx: Vec<usize> = (0..factor).flat_map(|_| 0..n).collect();
        t.select(&idx)
    });
    let provenance = (0..factor).flat_map(|_| pool.provenance.iter().copied()).collect();
    let labeled = pool.labeled.clone();
    let mut unlabeled = pool.unlabeled.clone();
    for c in 1..factor {
        for &i in &pool.labeled {
            unlabeled.push(c * n + i);
        }
        for &i in &pool.unlabeled {
            unlabeled.push(c * n + i);
        }
    }
    unlabeled.sort_unstable();
    let out = Pool {
        features,
        targets,
        labeled,
        unlabeled,
        test: pool.test.clone(),
        provenance,
    };
    out.check_invariants()?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Minmax,
    #[default]
    Zscore,
    None,
}

/// Smallest variance (or range) used as a divisor.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-column affine transform `(x - offset) / scale`, fitted on one matrix
/// and applied to others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub kind: Normalization,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// z-score uses the population standard deviation.
    pub fn fit(x: &Matrix, kind: Normalization) -> Self {
        let d = x.cols();
        let n = x.rows().max(1) as f64;
        let (offset, scale) = match kind {
            Normalization::None => (vec![0.0; d], vec![1.0; d]),
            Normalization::Zscore => {
                let mut mean = vec![0.0; d];
                for r in x.iter_rows() {
                    for (m, v) in mean.iter_mut().zip(r) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; d];
                for r in x.iter_rows() {
                    for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let scale = var.iter().map(|s| (s / n).max(VARIANCE_FLOOR).sqrt()).collect();
                (mean, scale)
            }
            Normalization::Minmax => {
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for r in x.iter_rows() {
                    for j in 0..d {
                        lo[j] = lo[j].min(r[j]);
                        hi[j] = hi[j].max(r[j]);
                    }
                }
                if x.rows() == 0 {
                    lo.fill(0.0);
                    hi.fill(1.0);
                }
                let scale = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| (h - l).max(VARIANCE_FLOOR))
                    .collect();
                (lo, scale)
            }
        };
        Self {
            kind,
            offset,
            scale,
        }
    }

    pub fn apply(&self, x: &mut Matrix) -> Result<()> {
        if x.cols() != self.offset.len() {
            return Err(Error::Shape(format!(
                "normalizer fitted on {} columns applied to {}",
                self.offset.len(),
                x.cols()
            )));
        }
        let d = x.cols();
        for (k, v) in x.data_mut().iter_mut().enumerate() {
            let j = k % d;
            *v = (*v - self.offset[j]) / self.scale[j];
        }
        Ok(())
    }
}

/// Fits normalization on the pool's features and applies it to both the pool
/// and its test set, so test statistics never leak into the fit.
pub fn normalize_pool(pool: &mut Pool, kind: Normalization) -> Result<Normalizer> {
    let norm = Normalizer::fit(&pool.features, kind);
    norm.apply(&mut pool.features)?;
    if let Some(test) = pool.test.as_mut() {
        norm.apply(&mut test.features)?;
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_pool(n: usize) -> Pool {
        let f = Matrix::from_vec(n, 2, (0..2 * n).map(|v| v as f64).collect()).unwrap();
        let t = Targets::Classes {
            labels: (0..n).map(|i| i % 3).collect(),
            n_classes: 3,
        };
        Pool::new(f, Some(t)).unwrap()
    }

    #[test]
    fn split_initial_sizes_and_reproducibility() {
        let p = toy_pool(10_000);
        let s = split_initial(&p, 100, 3).unwrap();
        assert_eq!(s.labeled.len(), 100);
        assert_eq!(s.unlabeled.len(), 9900);
        assert_eq!(s, split_initial(&p, 100, 3).unwrap());
        assert_ne!(s.labeled, split_initial(&p, 100, 4).unwrap().labeled);

        let all = split_initial(&toy_pool(7), 7, 0).unwrap();
        assert!(all.unlabeled.is_empty());
        assert!(split_initial(&toy_pool(7), 8, 0).is_err());
    }

    #[test]
    fn clone_factor_one_is_identity() {
        let p = split_initial(&toy_pool(12), 4, 1).unwrap();
        assert_eq!(clone_redundant(&p, 1).unwrap(), p);
    }

    #[test]
    fn clone_counts_rows_and_membership() {
        let p = split_initial(&toy_pool(50), 5, 2).unwrap();
        let c = clone_redundant(&p, 10).unwrap();
        assert_eq!(c.len(), 500);
        let mut counts = [0; 50];
        for &src in &c.provenance {
            counts[src] += 1;
        }
        assert!(counts.iter().all(|&k| k == 10));
        for i in 0..500 {
            assert_eq!(c.features.row(i), p.features.row(c.provenance[i]));
        }
        assert_eq!(c.labeled, p.labeled);
        // every labeled sample has 9 copies waiting in the unlabeled set
        for &l in &c.labeled {
            let copies = c.unlabeled.iter().filter(|&&u| c.provenance[u] == l).count();
            assert_eq!(copies, 9);
        }
        assert_eq!(c.labeled.len() + c.unlabeled.len(), 500);
    }

    #[test]
    fn label_positions_moves_samples() {
        let mut p = split_initial(&toy_pool(10), 2, 0).unwrap();
        let u0 = p.unlabeled.clone();
        let moved = p.label_positions(&[3, 0]).unwrap();
        assert_eq!(moved, vec![u0[3], u0[0]]);
        assert_eq!(p.labeled.len(), 4);
        assert_eq!(p.unlabeled.len(), 6);
        p.check_invariants().unwrap();
        assert!(p.label_positions(&[1, 1]).is_err());
        assert!(p.label_positions(&[6]).is_err());
    }

    #[test]
    fn zscore_hand_computed() {
        // column 0: 1,2,3 -> mean 2, population std sqrt(2/3)
        let x = Matrix::from_rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
        let norm = Normalizer::fit(&x, Normalization::Zscore);
        let mut y = x.clone();
        norm.apply(&mut y).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        let expected = [-1.0 / s, 0.0, 0.0, 0.0, 1.0 / s, 0.0];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalization_fitted_on_pool_only() {
        let mut p = toy_pool(4);
        let test = Dataset::new(
            Matrix::from_rows(&[[100.0, 100.0]]).unwrap(),
            Targets::Classes {
                labels: vec![0],
                n_classes: 3,
            },
        )
        .unwrap();
        p = p.with_test(test).unwrap();
        let before = p.features.clone();
        let norm = normalize_pool(&mut p, Normalization::Minmax).unwrap();
        assert_eq!(norm, Normalizer::fit(&before, Normalization::Minmax));
        // test point is far outside the pool range; a leaky fit would map it to 1
        assert!(p.test.as_ref().unwrap().features.get(0, 0) > 1.0);
    }
}
