use serde::{Deserialize, Serialize};

use super::config::{load_dataset, ExperimentConfig};
use super::experiment::{run_on_pool, write_outputs, CurvePoint, ExperimentResult, MetricName};
use super::output::{write_curves_csv, write_json};
use crate::data::Pool;
use crate::error::{Error, Result};
use crate::selection::Strategy;

/// Cluster counts actually swept: the requested ones plus 1 and `budget`,
/// sorted and deduplicated.
pub fn sweep_k_values(requested: &[usize], budget: usize) -> Result<Vec<usize>> {
    if let Some(&k) = requested.iter().find(|&&k| k == 0 || k > budget) {
        return Err(Error::Config(format!("cluster count {k} must lie in 1..={budget}")));
    }
    let mut ks: Vec<usize> = requested.iter().copied().chain([1, budget]).collect();
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

#[derive(Clone, Debug)]
pub struct ClusterSweep {
    pub runs: Vec<(usize, ExperimentResult)>,
    pub points: Vec<CurvePoint>,
}

impl ClusterSweep {
    pub fn run_for(&self, k: usize) -> Option<&ExperimentResult> {
        self.runs.iter().find(|(kk, _)| *kk == k).map(|(_, r)| r)
    }
}

/// ALLY with every cluster count on shared seeds.
pub fn sweep_clusters_on_pool(pool: &Pool, config: &ExperimentConfig, k_values: &[usize]) -> Result<ClusterSweep> {
    let ks = sweep_k_values(k_values, config.budget)?;
    let mut runs = Vec::with_capacity(ks.len());
    let mut points = Vec::new();
    for k in ks {
        let cfg = ExperimentConfig {
            strategies: vec![Strategy::Ally],
            k_clusters: Some(k),
            output_dir: config.output_dir.join(format!("k_{k}")),
            ..config.clone()
        };
        let r = run_on_pool(pool, &cfg, 1)?;
        points.extend(r.points.iter().map(|p| CurvePoint { k, ..p.clone() }));
        runs.push((k, r));
    }
    Ok(ClusterSweep { runs, points })
}

/// Runs the sweep and writes one output directory per `k` plus a combined
/// `curves.csv` at the top level.
pub fn sweep_clusters(config: &ExperimentConfig, k_values: &[usize]) -> Result<ClusterSweep> {
    config.validate()?;
    let pool = load_dataset(&config.dataset, config.normalization)?;
    let sweep = sweep_clusters_on_pool(&pool, config, k_values)?;
    for (_, r) in &sweep.runs {
        write_outputs(&r.meta.config, r)?;
    }
    write_curves_csv(&config.output_dir.join("curves.csv"), &sweep.points)?;
    Ok(sweep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundancyRow {
    pub seed: u64,
    /// Mean over rounds after the first query of (ALLY - random), signed so
    /// that positive means ALLY is better.
    pub gap_original: f64,
    pub gap_cloned: f64,
    pub final_gap_original: f64,
    pub final_gap_cloned: f64,
    /// Selected rows that duplicated an already labeled sample, on the cloned pool.
    pub duplicates_ally: usize,
    pub duplicates_random: usize,
}

#[derive(Clone, Debug)]
pub struct RedundancySweep {
    pub factor: usize,
    pub rows: Vec<RedundancyRow>,
    pub original: ExperimentResult,
    pub cloned: ExperimentResult,
}

fn gaps(result: &ExperimentResult) -> Vec<(u64, f64, f64)> {
    let sign = match result.points.first().map(|p| p.metric_name) {
        Some(MetricName::Mse) => -1.0,
        _ => 1.0,
    };
    let ally = result.per_seed(Strategy::Ally);
    let random = result.per_seed(Strategy::Random);
    ally.iter()
        .filter_map(|(s, a)| {
            let r = &random.iter().find(|(rs, _)| rs == s)?.1;
            let n = a.len().min(r.len());
            if n == 0 {
                return None;
            }
            let diffs: Vec<f64> = (0..n).map(|t| sign * (a[t] - r[t])).collect();
            let later = if n > 1 { &diffs[1..] } else { &diffs[..] };
            let mean = later.iter().sum::<f64>() / later.len() as f64;
            Some((*s, mean, diffs[n - 1]))
        })
        .collect()
}

/// ALLY and random on the pool as given and with every sample replicated
/// `factor` times after the initial split.
pub fn sweep_redundancy_on_pool(pool: &Pool, config: &ExperimentConfig, factor: usize) -> Result<RedundancySweep> {
    if factor == 0 {
        return Err(Error::Config("clone factor must be at least 1".into()));
    }
    let cfg = ExperimentConfig {
        strategies: vec![Strategy::Ally, Strategy::Random],
        ..config.clone()
    };
    let original = run_on_pool(pool, &cfg, 1)?;
    let cloned = run_on_pool(pool, &cfg, factor)?;
    let go = gaps(&original);
    let gc = gaps(&cloned);
    let dup = |st: Strategy, seed: u64| {
        cloned
            .meta
            .cells
            .iter()
            .find(|c| c.strategy == st && c.seed == seed)
            .map_or(0, |c| c.duplicates_selected)
    };
    let rows = go
        .iter()
        .filter_map(|&(seed, g, fg)| {
            let &(_, c, fc) = gc.iter().find(|(s, _, _)| *s == seed)?;
            Some(RedundancyRow {
                seed,
                gap_original: g,
                gap_cloned: c,
                final_gap_original: fg,
                final_gap_cloned: fc,
                duplicates_ally: dup(Strategy::Ally, seed),
                duplicates_random: dup(Strategy::Random, seed),
            })
        })
        .collect();
    Ok(RedundancySweep {
        factor,
        rows,
        original,
        cloned,
    })
}

/// Runs the comparison and writes `original/`, `cloned/` and
/// `redundancy.json` under `output_dir`.
pub fn sweep_redundancy(config: &ExperimentConfig, factor: usize) -> Result<RedundancySweep> {
    config.validate()?;
    let pool = load_dataset(&config.dataset, config.normalization)?;
    let sweep = sweep_redundancy_on_pool(&pool, config, factor)?;
    for (name, r) in [("original", &sweep.original), ("cloned", &sweep.cloned)] {
        let cfg = ExperimentConfig {
            output_dir: config.output_dir.join(name),
            ..r.meta.config.clone()
        };
        write_outputs(&cfg, r)?;
    }
    write_json(&config.output_dir.join("redundancy.json"), &sweep.rows)?;
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_values_include_endpoints() {
        assert_eq!(sweep_k_values(&[5, 3, 5], 10).unwrap(), vec![1, 3, 5, 10]);
        assert_eq!(sweep_k_values(&[], 1).unwrap(), vec![1]);
        assert!(sweep_k_values(&[11], 10).is_err());
    }
}
