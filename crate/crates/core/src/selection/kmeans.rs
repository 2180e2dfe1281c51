use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::numerics::{seeded_rng, sq_dist, Matrix};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMeansInit {
    /// D²-weighted seeding.
    #[default]
    PlusPlus,
    /// `k` distinct points drawn uniformly.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansOptions {
    pub init: KMeansInit,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            init: KMeansInit::PlusPlus,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step; the last entry equals `inertia`.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Member indices of every cluster, each list ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignment.iter().enumerate() {
            m[c].push(i);
        }
        m
    }
}

/// Nearest centroid per point (lowest index on ties) and its squared distance.
fn nearest(p: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    #[cfg(feature = "parallel")]
    {
        (0..points.rows())
            .into_par_iter()
            .map(|i| nearest(points.row(i), centroids))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.iter_rows().map(|p| nearest(p, centroids)).collect()
    }
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn seed_centroids<R: Rng>(points: &Matrix, k: usize, init: KMeansInit, rng: &mut R) -> Matrix {
    let n = points.rows();
    let chosen: Vec<usize> = match init {
        KMeansInit::Uniform => rand::seq::index::sample(rng, n, k).into_vec(),
        KMeansInit::PlusPlus => {
            let mut chosen = vec![rng.random_range(0..n)];
            let mut d2: Vec<f64> = points
                .iter_rows()
                .map(|p| sq_dist(p, points.row(chosen[0])))
                .collect();
            while chosen.len() < k {
                let total: f64 = d2.iter().sum();
                let next = if total > 0.0 {
                    let mut r = rng.random_range(0.0..total);
                    let mut pick = argmax_first(&d2);
                    for (i, &w) in d2.iter().enumerate() {
                        if w > 0.0 {
                            if r < w {
                                pick = i;
                                break;
                            }
                            r -= w;
                        }
                    }
                    pick
                } else {
                    // every point coincides with a chosen center
                    rng.random_range(0..n)
                };
                chosen.push(next);
                for (i, p) in points.iter_rows().enumerate() {
                    d2[i] = d2[i].min(sq_dist(p, points.row(next)));
                }
            }
            chosen
        }
    };
    points.select_rows(&chosen)
}

/// Lloyd's algorithm from k-means++ seeding.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterAssignment> {
    kmeans_with(
        points,
        k,
        seed,
        &KMeansOptions {
            max_iters,
            tol,
            ..KMeansOptions::default()
        },
    )
}

/// Lloyd iterations until the largest centroid shift drops below `tol` or
/// `max_iters` updates have run. A cluster left empty by an update is
/// re-seeded at the point farthest from its own centroid. The returned
/// assignment is always nearest-centroid for the returned centroids.
pub fn kmeans_with(points: &Matrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusterAssignment> {
    let n = points.rows();
    if k == 0 {
        return input_err("k must be at least 1");
    }
    if k > n {
        return input_err(format!("cannot form {k} clusters from {n} points"));
    }
    if !points.is_finite() {
        return input_err("points contain non-finite values");
    }
    let d = points.cols();
    let mut rng = seeded_rng(seed, 61);
    let mut centroids = seed_centroids(points, k, opts.init, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;

    loop {
        let near = assign(points, &centroids);
        trace.push(near.iter().map(|&(_, d)| d).sum());
        if iterations >= opts.max_iters {
            return Ok(finish(centroids, near, trace, iterations));
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in near.iter().enumerate() {
            counts[c] += 1;
            sums.row_mut(c)
                .iter_mut()
                .zip(points.row(i))
                .for_each(|(s, &x)| *s += x);
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                next.row_mut(c)
                    .iter_mut()
                    .zip(sums.row(c))
                    .for_each(|(m, &s)| *m = s * inv);
            }
        }
        if counts.contains(&0) {
            let mut dist: Vec<f64> = near
                .iter()
                .enumerate()
                .map(|(i, &(c, _))| sq_dist(points.row(i), next.row(c)))
                .collect();
            for c in (0..k).filter(|&c| counts[c] == 0) {
                let far = argmax_first(&dist);
                next.row_mut(c).copy_from_slice(points.row(far));
                dist[far] = 0.0;
            }
        }
        let shift = centroids
            .iter_rows()
            .zip(next.iter_rows())
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max)
            .sqrt();
        centroids = next;
        if shift < opts.tol {
            let near = assign(points, &centroids);
            trace.push(near.iter().map(|&(_, d)| d).sum());
            return Ok(finish(centroids, near, trace, iterations));
        }
    }
}

fn finish(centroids: Matrix, near: Vec<(usize, f64)>, trace: Vec<f64>, iterations: usize) -> ClusterAssignment {
    ClusterAssignment {
        centroids,
        inertia: *trace.last().expect("at least one assignment"),
        assignment: near.into_iter().map(|(c, _)| c).collect(),
        inertia_trace: trace,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn cloud(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed, 99);
        Matrix::from_vec(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let p = cloud(50, 3, 1);
        let r = kmeans(&p, 1, 0, 100, 1e-9).unwrap();
        for j in 0..3 {
            let mean: f64 = (0..50).map(|i| p.get(i, j)).sum::<f64>() / 50.0;
            assert!((r.centroids.get(0, j) - mean).abs() < 1e-12);
        }
        let total: f64 = p.iter_rows().map(|row| sq_dist(row, r.centroids.row(0))).sum();
        assert!((r.inertia - total).abs() < 1e-9);
    }

    #[test]
    fn separated_blobs_are_split_exactly() {
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        let mut rng = seeded_rng(3, 99);
        for i in 0..60 {
            let c = if i % 3 == 0 { 10.0 } else { -10.0 };
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            rows.push([c + nx, ny]);
            truth.push(usize::from(c > 0.0));
        }
        let p = Matrix::from_rows(&rows).unwrap();
        for seed in 0..10 {
            let r = kmeans(&p, 2, seed, 100, 1e-9).unwrap();
            let flip = r.assignment[0] != truth[0];
            for (a, t) in r.assignment.iter().zip(&truth) {
                assert_eq!(*a != *t, flip);
            }
        }
    }

    #[test]
    fn one_point_per_cluster() {
        let p = cloud(12, 2, 2);
        let r = kmeans(&p, 12, 5, 100, 1e-12).unwrap();
        assert!(r.inertia < 1e-20);
        let mut seen = r.assignment.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn inertia_never_increases_and_assignment_is_nearest() {
        for seed in 0..20 {
            let p = cloud(80, 4, seed);
            let r = kmeans_with(
                &p,
                7,
                seed,
                &KMeansOptions {
                    init: if seed % 2 == 0 { KMeansInit::PlusPlus } else { KMeansInit::Uniform },
                    ..KMeansOptions::default()
                },
            )
            .unwrap();
            for w in r.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", r.inertia_trace);
            }
            for (i, &c) in r.assignment.iter().enumerate() {
                assert_eq!(nearest(p.row(i), &r.centroids).0, c);
            }
        }
    }

    #[test]
    fn duplicates_and_errors() {
        let p = Matrix::from_rows(&[[1.0, 1.0]; 5]).unwrap();
        let r = kmeans(&p, 3, 0, 10, 1e-9).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert!(kmeans(&p, 6, 0, 10, 1e-9).is_err());
        assert!(kmeans(&p, 0, 0, 10, 1e-9).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let p = cloud(100, 3, 9);
        assert_eq!(kmeans(&p, 5, 4, 50, 1e-9).unwrap(), kmeans(&p, 5, 4, 50, 1e-9).unwrap());
    }
}
