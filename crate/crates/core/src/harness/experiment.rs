use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{load_dataset, ExperimentConfig};
use super::output::{summarize, write_cell_csv, write_curves_csv, write_json, write_summary_csv, SummaryRow};
use crate::data::{clone_redundant, split_initial, Pool};
use crate::dualhead::{predict_duals, train_dual_head, DualHeadConfig};
use crate::error::{input_err, Error, Result};
use crate::losses::{per_sample_loss, Targets};
use crate::numerics::ModelParams;
use crate::pdcl::{pdcl_train, TrainReport};
use crate::selection::{
    ally_select_with, coreset_select, random_select, top_dual_select, QueryBatch, Strategy,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    Mse,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Accuracy => "accuracy",
            MetricName::Mse => "mse",
        }
    }
}

/// Test metric of the model trained at the start of a round, on the labeled
/// set that round started with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: Strategy,
    pub seed: u64,
    pub round: usize,
    pub n_labeled: usize,
    pub metric_name: MetricName,
    pub metric_value: f64,
    /// Cluster count used by ALLY; 0 for strategies that do not cluster.
    pub k: usize,
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub pool: Pool,
    pub point: CurvePoint,
    pub report: TrainReport,
    pub params: ModelParams,
    /// Positions into the round's unlabeled set.
    pub batch: QueryBatch,
    /// Pool rows that moved to the labeled set.
    pub moved: Vec<usize>,
    /// Moved rows whose original sample was already labeled (or appears
    /// earlier in the same batch).
    pub duplicates_selected: usize,
}

/// Seed for round `round` of experiment seed `seed`; shared by every
/// strategy so round 0 trains the same model for all of them.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(round as u64)
}

/// Accuracy for class targets, mean per-sample squared error for values.
pub fn evaluate(params: &ModelParams, pool: &Pool) -> Result<(MetricName, f64)> {
    let test = pool
        .test
        .as_ref()
        .ok_or_else(|| Error::Input("pool has no test set".into()))?;
    let out = params.predict(&test.features)?;
    match &test.targets {
        Targets::Classes { labels, .. } => {
            let correct = out
                .iter_rows()
                .zip(labels)
                .filter(|(row, &l)| {
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    best == l
                })
                .count();
            Ok((MetricName::Accuracy, correct as f64 / labels.len().max(1) as f64))
        }
        t @ Targets::Values(_) => Ok((MetricName::Mse, per_sample_loss(&out, t)?.mean())),
    }
}

/// One query-label-retrain step: trains from scratch on the current labeled
/// set, evaluates, scores the unlabeled set with `strategy`, and labels the
/// chosen batch from the stored targets.
pub fn al_round(
    pool: &Pool,
    config: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
    round: usize,
) -> Result<RoundOutcome> {
    let rs = round_seed(seed, round);
    let data = pool.labeled_dataset()?;
    let arch = config.architecture(pool.dim(), data.targets.output_dim());
    let trained = pdcl_train(&data, &arch, &config.pdcl, rs)?;
    let mut params = trained.params;
    let mut report = trained.report;
    let (metric_name, metric_value) = evaluate(&params, pool)?;

    let n_u = pool.unlabeled.len();
    let b = config.budget.min(n_u);
    let mut k_used = 0;
    let batch = if b == 0 {
        QueryBatch {
            indices: Vec::new(),
            strategy,
        }
    } else {
        let emb_u = params.embed(&pool.unlabeled_features())?;
        match strategy {
            Strategy::Random => random_select(n_u, b, rs)?,
            Strategy::Coreset => coreset_select(&params.embed(&pool.labeled_features())?, &emb_u, b)?,
            Strategy::Ally | Strategy::TopDual => {
                let train_x = data.features.select_rows(&report.train_indices);
                let emb_l = params.embed(&train_x)?;
                let head_cfg = DualHeadConfig {
                    seed: rs,
                    ..config.dual_head.clone()
                };
                let (head, fit) = train_dual_head(&emb_l, &trained.dual.lambdas, &head_cfg)?;
                let duals = predict_duals(&head, &emb_u)?;
                params.dual_head = head;
                report.dual_head = Some(fit);
                if strategy == Strategy::Ally {
                    k_used = config.k().min(b);
                    ally_select_with(&emb_u, &duals, b, k_used, rs, &config.ally)?.0
                } else {
                    top_dual_select(&duals, b)?
                }
            }
        }
    };

    let mut next = pool.clone();
    let mut seen: HashSet<usize> = pool.labeled.iter().map(|&i| pool.provenance[i]).collect();
    let moved = next.label_positions(&batch.indices)?;
    let duplicates_selected = moved
        .iter()
        .filter(|&&i| !seen.insert(pool.provenance[i]))
        .count();
    next.check_invariants()?;
    Ok(RoundOutcome {
        point: CurvePoint {
            strategy,
            seed,
            round,
            n_labeled: pool.labeled.len(),
            metric_name,
            metric_value,
            k: k_used,
        },
        pool: next,
        report,
        params,
        batch,
        moved,
        duplicates_selected,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    pub strategy: Strategy,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub violation_fractions: Vec<f64>,
    pub stopped_epochs: Vec<usize>,
    pub dual_head_trained: Vec<bool>,
    pub duplicates_selected: usize,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub points: Vec<CurvePoint>,
    pub meta: CellMeta,
}

/// All rounds for one (strategy, seed). `clone_factor > 1` replicates the
/// pool after the initial split. Failures are captured in the metadata
/// together with the rounds that completed.
pub fn run_cell(base: &Pool, config: &ExperimentConfig, strategy: Strategy, seed: u64, clone_factor: usize) -> CellResult {
    let mut meta = CellMeta {
        strategy,
        seed,
        ok: true,
        error: None,
        violation_fractions: Vec::new(),
        stopped_epochs: Vec::new(),
        dual_head_trained: Vec::new(),
        duplicates_selected: 0,
    };
    let mut points = Vec::new();
    let result = (|| -> Result<()> {
        let mut pool = split_initial(base, config.initial_labeled, seed)?;
        if clone_factor > 1 {
            pool = clone_redundant(&pool, clone_factor)?;
        }
        for round in 0..config.n_rounds {
            let out = al_round(&pool, config, strategy, seed, round)
                .map_err(|e| e.context(format!("{strategy} seed {seed} round {round}")))?;
            meta.violation_fractions.push(out.report.violation_fraction);
            meta.stopped_epochs.push(out.report.stopped_epoch);
            meta.dual_head_trained.push(out.report.dual_head.is_some());
            meta.duplicates_selected += out.duplicates_selected;
            points.push(out.point);
            let exhausted = pool.unlabeled.is_empty();
            pool = out.pool;
            if exhausted {
                break;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        meta.ok = false;
        meta.error = Some(e.to_string());
    }
    CellResult { points, meta }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub wall_time_secs: f64,
    pub clone_factor: usize,
    pub cells: Vec<CellMeta>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub points: Vec<CurvePoint>,
    pub summary: Vec<SummaryRow>,
    pub meta: RunMeta,
}

impl ExperimentResult {
    pub fn failures(&self) -> Vec<&CellMeta> {
        self.meta.cells.iter().filter(|c| !c.ok).collect()
    }

    /// Across-seed mean per round for one strategy.
    pub fn mean_curve(&self, strategy: Strategy) -> Vec<f64> {
        self.summary
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| r.mean)
            .collect()
    }

    /// Metric per seed and round for one strategy: `out[seed_pos][round]`.
    pub fn per_seed(&self, strategy: Strategy) -> Vec<(u64, Vec<f64>)> {
        let mut seeds: Vec<u64> = self
            .points
            .iter()
            .filter(|p| p.strategy == strategy)
            .map(|p| p.seed)
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
            .into_iter()
            .map(|s| {
                let mut pts: Vec<&CurvePoint> = self
                    .points
                    .iter()
                    .filter(|p| p.strategy == strategy && p.seed == s)
                    .collect();
                pts.sort_by_key(|p| p.round);
                (s, pts.iter().map(|p| p.metric_value).collect())
            })
            .collect()
    }
}

/// Runs every (strategy, seed) cell on an already loaded pool, without
/// writing files.
pub fn run_on_pool(base: &Pool, config: &ExperimentConfig, clone_factor: usize) -> Result<ExperimentResult> {
    config.validate()?;
    if base.targets.is_none() {
        return input_err("experiment pool has no labels to reveal");
    }
    let start = Instant::now();
    let cells: Vec<(Strategy, u64)> = config
        .strategies
        .iter()
        .flat_map(|&s| config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    #[cfg(feature = "parallel")]
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|&(s, seed)| run_cell(base, config, s, seed, clone_factor))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<CellResult> = cells
        .iter()
        .map(|&(s, seed)| run_cell(base, config, s, seed, clone_factor))
        .collect();
    let points: Vec<CurvePoint> = results.iter().flat_map(|r| r.points.clone()).collect();
    let summary = summarize(&points);
    Ok(ExperimentResult {
        summary,
        points,
        meta: RunMeta {
            config_hash: config.hash(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            clone_factor,
            cells: results.into_iter().map(|r| r.meta).collect(),
            config: config.clone(),
        },
    })
}

/// Loads the dataset, runs all cells, and writes `curves.csv`,
/// `summary.csv`, `meta.json` and one CSV per cell under `output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let pool = load_dataset(&config.dataset, config.normalization)?;
    let result = run_on_pool(&pool, config, 1)?;
    write_outputs(config, &result)?;
    Ok(result)
}

pub fn write_outputs(config: &ExperimentConfig, result: &ExperimentResult) -> Result<()> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir.join("cells"))?;
    for cell in &result.meta.cells {
        let pts: Vec<CurvePoint> = result
            .points
            .iter()
            .filter(|p| p.strategy == cell.strategy && p.seed == cell.seed)
            .cloned()
            .collect();
        write_cell_csv(&dir.join("cells").join(format!("{}_seed{}.csv", cell.strategy, cell.seed)), &pts)?;
    }
    write_curves_csv(&dir.join("curves.csv"), &result.points)?;
    write_summary_csv(&dir.join("summary.csv"), &result.summary)?;
    write_json(&dir.join("meta.json"), &result.meta)?;
    Ok(())
}
