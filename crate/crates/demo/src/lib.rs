//! Browser demo: sensitivity of a constrained problem, batch selection on 2-D
//! blobs, and dual-score ascent. Every operation returns JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ally_core::data::{split_initial, synth_blobs, Pool};
use ally_core::dualhead::{fit_dual_head, DualHeadConfig};
use ally_core::duality::{solve_instance, ConvexInstance};
use ally_core::generate::{ascend_input, AscentConfig, ClipRange};
use ally_core::losses::Targets;
use ally_core::numerics::{Matrix, MlpArchitecture, ModelParams};
use ally_core::pdcl::{pdcl_train, PdclConfig};
use ally_core::selection::{ally_select_with, coreset_select, AllyOptions};
use ally_core::Result;

#[derive(Debug, Serialize)]
pub struct SensitivityPoint {
    pub epsilon: f64,
    pub p_star: f64,
    pub lambda_star: f64,
    /// Central difference of `p_star` in `epsilon`; NaN at the ends.
    pub slope: f64,
}

/// `min (theta - target)^2 s.t. theta^2 <= eps` solved on a grid of levels.
pub fn sensitivity_curve(target: f64, eps_max: f64, n: usize) -> Result<Vec<SensitivityPoint>> {
    let n = n.clamp(3, 500);
    let eps: Vec<f64> = (1..=n).map(|i| eps_max * i as f64 / n as f64).collect();
    let sols = eps
        .iter()
        .map(|&e| solve_instance(&ConvexInstance::scalar(target, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..n)
        .map(|i| {
            let slope = if i == 0 || i + 1 == n {
                f64::NAN
            } else {
                (sols[i + 1].p_star - sols[i - 1].p_star) / (eps[i + 1] - eps[i - 1])
            };
            SensitivityPoint {
                epsilon: eps[i],
                p_star: sols[i].p_star,
                lambda_star: sols[i].dual_opt[0],
                slope,
            }
        })
        .collect())
}

#[derive(Debug, Serialize)]
pub struct DemoPoint {
    pub x: f64,
    pub y: f64,
    pub class: usize,
    pub labeled: bool,
    pub score: f64,
}

#[derive(Debug, Serialize)]
pub struct Selection {
    /// Indices into the point list.
    pub selected: Vec<usize>,
    /// Cluster of each unlabeled point (ALLY only).
    pub clusters: Vec<(usize, usize)>,
}

#[derive(Debug, Serialize)]
pub struct Path {
    pub points: Vec<[f64; 2]>,
    pub scores: Vec<f64>,
}

/// A small classifier trained with constraints on 2-D blobs, plus its dual head.
pub struct Scene {
    pool: Pool,
    params: ModelParams,
}

impl Scene {
    pub fn new(seed: u64, spread: f64, n_labeled: usize) -> Result<Self> {
        let pool = split_initial(&synth_blobs(80, 3, 2, spread, seed)?, n_labeled, seed)?;
        let data = pool.labeled_dataset()?;
        let arch = MlpArchitecture {
            dual_hidden_dims: vec![16, 8],
            ..MlpArchitecture::new(2, vec![16, 16], 3)
        };
        let cfg = PdclConfig {
            max_iters: 150,
            validation_fraction: 0.0,
            ..PdclConfig::default()
        };
        let out = pdcl_train(&data, &arch, &cfg, seed)?;
        let mut params = out.params;
        let x_train = data.features.select_rows(&out.report.train_indices);
        let head = DualHeadConfig {
            hidden_dims: vec![16, 8],
            epochs: 300,
            seed,
            ..DualHeadConfig::default()
        };
        fit_dual_head(&mut params, &x_train, &out.dual.lambdas, &head)?;
        Ok(Self { pool, params })
    }

    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.params.dual_scores(&self.params.embed(x)?)
    }

    pub fn points(&self) -> Result<Vec<DemoPoint>> {
        let scores = self.score(&self.pool.features)?;
        let labels = match &self.pool.targets {
            Some(Targets::Classes { labels, .. }) => labels.clone(),
            _ => vec![0; self.pool.len()],
        };
        let mut labeled = vec![false; self.pool.len()];
        self.pool.labeled.iter().for_each(|&i| labeled[i] = true);
        Ok((0..self.pool.len())
            .map(|i| {
                let r = self.pool.features.row(i);
                DemoPoint {
                    x: r[0],
                    y: r[1],
                    class: labels[i],
                    labeled: labeled[i],
                    score: scores[i],
                }
            })
            .collect())
    }

    /// `strategy` is "ally" or "coreset"; selection runs in embedding space.
    pub fn select(&self, strategy: &str, budget: usize, k: usize) -> Result<Selection> {
        let emb_u = self.params.embed(&self.pool.unlabeled_features())?;
        let budget = budget.min(self.pool.unlabeled.len());
        let (local, clusters) = match strategy {
            "coreset" => {
                let emb_l = self.params.embed(&self.pool.labeled_features())?;
                (coreset_select(&emb_l, &emb_u, budget)?.indices, Vec::new())
            }
            _ => {
                let duals = self.params.dual_scores(&emb_u)?;
                let (batch, assign) = ally_select_with(&emb_u, &duals, budget, k.clamp(1, budget), 0, &AllyOptions::default())?;
                let clusters = assign
                    .assignment
                    .iter()
                    .enumerate()
                    .map(|(p, &c)| (self.pool.unlabeled[p], c))
                    .collect();
                (batch.indices, clusters)
            }
        };
        Ok(Selection {
            selected: local.iter().map(|&p| self.pool.unlabeled[p]).collect(),
            clusters,
        })
    }

    pub fn ascend(&self, x: f64, y: f64, step: f64, steps: usize) -> Result<Path> {
        let cfg = AscentConfig {
            step_size: step,
            n_steps: steps.min(5000),
            clip_range: ClipRange::from_data(&self.pool.features),
            snapshot_every: 1,
            stall_patience: 0,
        };
        let t = ascend_input(&self.params, &[x, y], &cfg)?;
        Ok(Path {
            points: t.snapshots.iter().map(|s| [s.x[0], s.x[1]]).collect(),
            scores: t.snapshots.iter().map(|s| s.score).collect(),
        })
    }
}

fn js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = sensitivityCurve)]
pub fn sensitivity_curve_js(target: f64, eps_max: f64, n: usize) -> std::result::Result<String, JsError> {
    js(sensitivity_curve(target, eps_max, n))
}

#[wasm_bindgen]
pub struct Demo(Scene);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, spread: f64, n_labeled: usize) -> std::result::Result<Demo, JsError> {
        Scene::new(seed as u64, spread, n_labeled)
            .map(Demo)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn points(&self) -> std::result::Result<String, JsError> {
        js(self.0.points())
    }

    pub fn select(&self, strategy: &str, budget: usize, k: usize) -> std::result::Result<String, JsError> {
        js(self.0.select(strategy, budget, k))
    }

    pub fn ascend(&self, x: f64, y: f64, step: f64, steps: usize) -> std::result::Result<String, JsError> {
        js(self.0.ascend(x, y, step, steps))
    }

    /// Dual scores on an `n x n` grid over the box, row-major from the top.
    #[wasm_bindgen(js_name = scoreGrid)]
    pub fn score_grid(&self, x0: f64, x1: f64, y0: f64, y1: f64, n: usize) -> std::result::Result<String, JsError> {
        let n = n.clamp(2, 200);
        let mut m = Matrix::zeros(n * n, 2);
        for r in 0..n {
            for c in 0..n {
                let row = m.row_mut(r * n + c);
                row[0] = x0 + (x1 - x0) * c as f64 / (n - 1) as f64;
                row[1] = y1 - (y1 - y0) * r as f64 / (n - 1) as f64;
            }
        }
        js(self.0.score(&m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_slope_matches_minus_lambda() {
        let pts = sensitivity_curve(2.0, 3.0, 60).unwrap();
        for p in &pts[1..pts.len() - 1] {
            let exact = if p.epsilon.sqrt() < 2.0 { 2.0 / p.epsilon.sqrt() - 1.0 } else { 0.0 };
            assert!((p.lambda_star - exact).abs() < 1e-6, "{p:?}");
            assert!((p.slope + p.lambda_star).abs() < 0.05 * p.lambda_star.max(1.0), "{p:?}");
        }
    }

    #[test]
    fn scene_selects_disjoint_unlabeled_points() {
        let s = Scene::new(3, 0.6, 12).unwrap();
        let pts = s.points().unwrap();
        assert_eq!(pts.iter().filter(|p| p.labeled).count(), 12);
        for strategy in ["ally", "coreset"] {
            let sel = s.select(strategy, 10, 4).unwrap();
            assert_eq!(sel.selected.len(), 10);
            let mut u = sel.selected.clone();
            u.sort_unstable();
            u.dedup();
            assert_eq!(u.len(), 10);
            assert!(sel.selected.iter().all(|&i| !pts[i].labeled));
        }
    }

    #[test]
    fn ascent_path_does_not_lose_score() {
        let s = Scene::new(1, 0.6, 12).unwrap();
        let p = s.ascend(0.0, 0.0, 0.05, 100).unwrap();
        assert_eq!(p.points.len(), p.scores.len());
        assert!(p.scores.last().unwrap() >= &(p.scores[0] - 1e-9));
        let json = serde_json::to_string(&s.select("ally", 5, 5).unwrap()).unwrap();
        assert!(json.contains("selected"));
    }
}
