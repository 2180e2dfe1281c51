use super::config::{load_dataset, ExperimentConfig};
use super::experiment::round_seed;
use super::output::write_json;
use crate::data::{split_initial, Pool};
use crate::dualhead::{train_dual_head, DualHeadConfig};
use crate::error::{input_err, Result};
use crate::generate::{ascend_input, bottom_decile, write_pgm_grid, write_score_csv, AscentConfig, ClipRange, Trajectory};
use crate::numerics::ModelParams;
use crate::pdcl::pdcl_train;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct GenerationOutcome {
    pub params: ModelParams,
    pub trajectories: Vec<Trajectory>,
    /// Pool rows the trajectories started from.
    pub start_rows: Vec<usize>,
    pub ascent: AscentConfig,
}

/// Trains on the initial labeled set of `seed`, fits the dual head, and runs
/// ascent from the lowest-scoring unlabeled inputs (bottom decile, lowest
/// first).
pub fn generate_on_pool(pool: &Pool, config: &ExperimentConfig, seed: u64) -> Result<GenerationOutcome> {
    let pool = split_initial(pool, config.initial_labeled, seed)?;
    if pool.unlabeled.is_empty() {
        return input_err("no unlabeled inputs to start from");
    }
    let rs = round_seed(seed, 0);
    let data = pool.labeled_dataset()?;
    let arch = config.architecture(pool.dim(), data.targets.output_dim());
    let trained = pdcl_train(&data, &arch, &config.pdcl, rs)?;
    let mut params = trained.params;
    let emb = params.embed(&data.features.select_rows(&trained.report.train_indices))?;
    let head_cfg = DualHeadConfig {
        seed: rs,
        ..config.dual_head.clone()
    };
    params.dual_head = train_dual_head(&emb, &trained.dual.lambdas, &head_cfg)?.0;

    let xu = pool.unlabeled_features();
    let scores = params.dual_scores(&params.embed(&xu)?)?;
    let mut low = bottom_decile(&params, &xu)?;
    low.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    low.truncate(config.generate.n_trajectories);

    let mut ascent = config.generate.ascent.clone();
    if config.generate.clip_to_data {
        ascent.clip_range = ClipRange::from_data(&pool.features);
    }
    let run = |&p: &usize| ascend_input(&params, xu.row(p), &ascent);
    #[cfg(feature = "parallel")]
    let trajectories = low.par_iter().map(run).collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let trajectories = low.iter().map(run).collect::<Result<Vec<_>>>()?;
    Ok(GenerationOutcome {
        start_rows: low.iter().map(|&p| pool.unlabeled[p]).collect(),
        params,
        trajectories,
        ascent,
    })
}

/// Writes `scores.csv`, `trajectories.json` and, when an image shape is
/// configured, `grid.pgm` (one row per trajectory, one column per snapshot).
pub fn run_generation(config: &ExperimentConfig) -> Result<GenerationOutcome> {
    config.validate()?;
    let pool = load_dataset(&config.dataset, config.normalization)?;
    let out = generate_on_pool(&pool, config, config.seeds[0])?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    write_score_csv(dir.join("scores.csv"), &out.trajectories)?;
    write_json(&dir.join("trajectories.json"), &out.trajectories)?;
    if let Some([rows, cols]) = config.generate.image_shape {
        let per_row = out.trajectories.iter().map(|t| t.snapshots.len()).max().unwrap_or(0);
        if per_row > 0 {
            let mut images = Vec::new();
            for t in &out.trajectories {
                for k in 0..per_row {
                    let s = &t.snapshots[k.min(t.snapshots.len() - 1)];
                    images.push(s.x.clone());
                }
            }
            let (lo, hi) = (
                out.ascent.clip_range.lo.iter().copied().fold(f64::INFINITY, f64::min),
                out.ascent.clip_range.hi.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            );
            write_pgm_grid(dir.join("grid.pgm"), &images, rows, cols, per_row, lo, hi)?;
        }
    }
    Ok(out)
}
