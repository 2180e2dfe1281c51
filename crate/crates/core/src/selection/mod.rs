//! Query-batch construction. All indices returned here are positions into
//! the unlabeled set handed in, not pool row numbers.

mod kmeans;

pub use kmeans::{kmeans, kmeans_with, ClusterAssignment, KMeansInit, KMeansOptions};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Error, Result};
use crate::numerics::{seeded_rng, sq_dist, Matrix};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ally,
    Random,
    Coreset,
    TopDual,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Ally,
        Strategy::Random,
        Strategy::Coreset,
        Strategy::TopDual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ally => "ally",
            Strategy::Random => "random",
            Strategy::Coreset => "coreset",
            Strategy::TopDual => "top_dual",
        }
    }

    /// Whether the strategy consumes dual-head scores.
    pub fn uses_duals(self) -> bool {
        matches!(self, Strategy::Ally | Strategy::TopDual)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim().to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub indices: Vec<usize>,
    pub strategy: Strategy,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllyOptions {
    /// Spend the `b mod k` leftover budget on the globally highest remaining
    /// duals. Without it a round selects `k * floor(b / k)` samples at most.
    pub fill_remainder: bool,
    pub kmeans: KMeansOptions,
}

impl Default for AllyOptions {
    fn default() -> Self {
        Self {
            fill_remainder: true,
            kmeans: KMeansOptions::default(),
        }
    }
}

fn check_budget(b: usize, n: usize) -> Result<()> {
    if b > n {
        return input_err(format!("budget {b} exceeds {n} unlabeled samples"));
    }
    Ok(())
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return input_err(format!("score {i} is NaN"));
    }
    Ok(())
}

/// Index of the largest score among `candidates` that are still available;
/// the first such index wins ties.
fn argmax_available(candidates: &[usize], scores: &[f64], taken: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &j in candidates {
        if taken[j] {
            continue;
        }
        if best.is_none_or(|b| scores[j] > scores[b] || (scores[j] == scores[b] && j < b)) {
            best = Some(j);
        }
    }
    best
}

/// The `b` highest scores, highest first, lowest index on ties.
pub fn top_dual_select(duals: &[f64], b: usize) -> Result<QueryBatch> {
    check_budget(b, duals.len())?;
    check_scores(duals)?;
    let mut idx: Vec<usize> = (0..duals.len()).collect();
    idx.sort_by(|&a, &c| duals[c].total_cmp(&duals[a]).then(a.cmp(&c)));
    idx.truncate(b);
    Ok(QueryBatch {
        indices: idx,
        strategy: Strategy::TopDual,
    })
}

/// Clusters the unlabeled embeddings into `k` groups and takes the
/// `floor(b / k)` highest predicted duals from each by repeated
/// argmax-and-remove. Clusters smaller than their quota give up all members.
pub fn ally_select(
    embeddings_unlabeled: &Matrix,
    predicted_duals: &[f64],
    b: usize,
    k: usize,
    seed: u64,
) -> Result<QueryBatch> {
    ally_select_with(embeddings_unlabeled, predicted_duals, b, k, seed, &AllyOptions::default())
        .map(|(batch, _)| batch)
}

/// Like [`ally_select`] but with explicit options; also returns the
/// clustering so callers can check per-cluster membership.
pub fn ally_select_with(
    embeddings_unlabeled: &Matrix,
    predicted_duals: &[f64],
    b: usize,
    k: usize,
    seed: u64,
    opts: &AllyOptions,
) -> Result<(QueryBatch, ClusterAssignment)> {
    let n = embeddings_unlabeled.rows();
    if predicted_duals.len() != n {
        return shape_err(format!("{} scores for {n} embeddings", predicted_duals.len()));
    }
    check_budget(b, n)?;
    check_scores(predicted_duals)?;
    if k == 0 || k > b {
        return input_err(format!("cluster count {k} must lie in 1..={b}"));
    }
    let clusters = kmeans_with(embeddings_unlabeled, k, seed, &opts.kmeans)?;
    let quota = b / k;
    let mut taken = vec![false; n];
    let mut indices = Vec::with_capacity(b);
    for members in clusters.members() {
        for _ in 0..quota {
            match argmax_available(&members, predicted_duals, &taken) {
                Some(j) => {
                    taken[j] = true;
                    indices.push(j);
                }
                None => break,
            }
        }
    }
    if opts.fill_remainder && indices.len() < b {
        let all: Vec<usize> = (0..n).collect();
        while indices.len() < b {
            let j = argmax_available(&all, predicted_duals, &taken).expect("b <= n");
            taken[j] = true;
            indices.push(j);
        }
    }
    Ok((
        QueryBatch {
            indices,
            strategy: Strategy::Ally,
        },
        clusters,
    ))
}

/// Uniform sample of `b` of `n` positions without replacement.
pub fn random_select(n_unlabeled: usize, b: usize, seed: u64) -> Result<QueryBatch> {
    check_budget(b, n_unlabeled)?;
    let mut rng = seeded_rng(seed, 51);
    Ok(QueryBatch {
        indices: rand::seq::index::sample(&mut rng, n_unlabeled, b).into_vec(),
        strategy: Strategy::Random,
    })
}

fn min_dist_to(points: &Matrix, centers: &Matrix) -> Vec<f64> {
    let f = |p: &[f64]| {
        centers
            .iter_rows()
            .map(|c| sq_dist(p, c))
            .fold(f64::INFINITY, f64::min)
    };
    #[cfg(feature = "parallel")]
    {
        (0..points.rows()).into_par_iter().map(|i| f(points.row(i))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.iter_rows().map(f).collect()
    }
}

/// Greedy k-center: repeatedly adds the unlabeled point farthest from every
/// labeled or already selected point. With no labeled points the first pick
/// is position 0.
pub fn coreset_select(embeddings_labeled: &Matrix, embeddings_unlabeled: &Matrix, b: usize) -> Result<QueryBatch> {
    let n = embeddings_unlabeled.rows();
    check_budget(b, n)?;
    if embeddings_labeled.rows() > 0 && embeddings_labeled.cols() != embeddings_unlabeled.cols() {
        return shape_err("labeled and unlabeled embeddings differ in width");
    }
    let mut dist = min_dist_to(embeddings_unlabeled, embeddings_labeled);
    let mut indices = Vec::with_capacity(b);
    for _ in 0..b {
        let mut pick = None::<usize>;
        for (j, &d) in dist.iter().enumerate() {
            if d.is_nan() {
                continue;
            }
            if pick.is_none_or(|p| d > dist[p]) {
                pick = Some(j);
            }
        }
        let j = pick.expect("b <= n");
        indices.push(j);
        dist[j] = f64::NAN;
        let c = embeddings_unlabeled.row(j);
        for (i, d) in dist.iter_mut().enumerate() {
            if !d.is_nan() {
                *d = d.min(sq_dist(embeddings_unlabeled.row(i), c));
            }
        }
    }
    Ok(QueryBatch {
        indices,
        strategy: Strategy::Coreset,
    })
}

/// Largest distance from an unlabeled point to its nearest labeled or
/// selected point.
pub fn covering_radius(embeddings_labeled: &Matrix, embeddings_unlabeled: &Matrix, selected: &[usize]) -> Result<f64> {
    let centers = if embeddings_labeled.rows() == 0 {
        embeddings_unlabeled.select_rows(selected)
    } else {
        embeddings_labeled.vstack(&embeddings_unlabeled.select_rows(selected))?
    };
    Ok(min_dist_to(embeddings_unlabeled, &centers)
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Matrix {
        Matrix::from_vec(points.len(), 1, points.to_vec()).unwrap()
    }

    #[test]
    fn coreset_line_examples() {
        let lab = line(&[0.0]);
        let unl = line(&[1.0, 2.0, 3.0]);
        assert_eq!(coreset_select(&lab, &unl, 1).unwrap().indices, vec![2]);
        assert_eq!(coreset_select(&lab, &unl, 2).unwrap().indices, vec![2, 0]);
        let empty = Matrix::zeros(0, 1);
        assert_eq!(coreset_select(&empty, &unl, 1).unwrap().indices, vec![0]);
        assert!(coreset_select(&lab, &unl, 4).is_err());
    }

    #[test]
    fn coreset_skips_labeled_duplicates() {
        let lab = line(&[0.0, 5.0]);
        let unl = line(&[5.0, 0.0, 1.0]);
        let q = coreset_select(&lab, &unl, 2).unwrap();
        assert_eq!(q.indices[0], 2);
    }

    #[test]
    fn ally_degenerate_cases() {
        let emb = line(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let duals = [0.1, 0.9, 0.3, 0.9, 0.2];
        assert_eq!(ally_select(&emb, &duals, 1, 1, 0).unwrap().indices, vec![1]);
        assert_eq!(ally_select(&emb, &duals, 3, 1, 0).unwrap().indices, vec![1, 3, 2]);
        assert!(ally_select(&emb, &duals, 6, 1, 0).is_err());
        assert!(ally_select(&emb, &duals, 2, 3, 0).is_err());
    }

    #[test]
    fn ally_one_per_cluster_is_cluster_argmax() {
        let emb = Matrix::from_rows(&[[0.0], [0.1], [0.2], [10.0], [10.1], [20.0], [20.3]]).unwrap();
        let duals = [0.5, 0.7, 0.1, 0.2, 0.1, 0.0, 0.3];
        let (q, cl) = ally_select_with(&emb, &duals, 3, 3, 1, &AllyOptions::default()).unwrap();
        let mut got = q.indices.clone();
        got.sort_unstable();
        assert_eq!(got, vec![1, 3, 6]);
        let members = cl.members();
        assert!(members.iter().all(|m| m.iter().filter(|j| got.contains(j)).count() == 1));
    }

    #[test]
    fn remainder_fill() {
        let emb = Matrix::from_rows(&[[0.0], [0.1], [10.0], [10.1], [10.2]]).unwrap();
        let duals = [0.1, 0.2, 0.9, 0.8, 0.7];
        let opts = AllyOptions {
            fill_remainder: false,
            ..AllyOptions::default()
        };
        let (q, _) = ally_select_with(&emb, &duals, 3, 2, 0, &opts).unwrap();
        assert_eq!(q.len(), 2);
        let q = ally_select(&emb, &duals, 3, 2, 0).unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(q.indices[2], 3);
    }

    #[test]
    fn top_dual_and_random() {
        assert_eq!(top_dual_select(&[0.3, 0.5, 0.5, 0.1], 2).unwrap().indices, vec![1, 2]);
        let q = random_select(10, 10, 3).unwrap();
        let mut s = q.indices.clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(random_select(50, 7, 1).unwrap(), random_select(50, 7, 1).unwrap());
        assert!(random_select(3, 4, 0).is_err());
    }

    #[test]
    fn random_single_pick_is_uniform() {
        let trials = 10_000;
        let mut counts = [0usize; 10];
        for s in 0..trials {
            counts[random_select(10, 1, s).unwrap().indices[0]] += 1;
        }
        let p = 0.1;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("top-dual".parse::<Strategy>().unwrap(), Strategy::TopDual);
        assert!("badge".parse::<Strategy>().is_err());
    }
}
