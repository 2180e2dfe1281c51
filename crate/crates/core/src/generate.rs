//! Gradient ascent on inputs to raise the predicted dual, turning
//! low-scoring samples into ones the dual head rates as informative.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Error, Result};
use crate::numerics::{Matrix, ModelParams};

/// Box constraint on inputs. A single-entry `lo`/`hi` applies to every
/// feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ClipRange {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    /// Per-feature minimum and maximum of `x`.
    pub fn from_data(x: &Matrix) -> Self {
        let mut lo = vec![f64::INFINITY; x.cols()];
        let mut hi = vec![f64::NEG_INFINITY; x.cols()];
        for row in x.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Self { lo, hi }
    }

    fn bounds(&self, j: usize) -> (f64, f64) {
        let pick = |v: &[f64]| if v.len() == 1 { v[0] } else { v[j] };
        (pick(&self.lo), pick(&self.hi))
    }

    fn validate(&self, dim: usize) -> Result<()> {
        for v in [&self.lo, &self.hi] {
            if v.len() != 1 && v.len() != dim {
                return shape_err(format!("clip bounds have {} entries for {dim} features", v.len()));
            }
        }
        for j in 0..dim {
            let (lo, hi) = self.bounds(j);
            if !(lo < hi) {
                return input_err(format!("clip range for feature {j} is [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(j, &v)| {
            let (lo, hi) = self.bounds(j);
            (lo..=hi).contains(&v)
        })
    }
}

impl Default for ClipRange {
    fn default() -> Self {
        Self::uniform(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscentConfig {
    pub step_size: f64,
    pub n_steps: usize,
    pub clip_range: ClipRange,
    pub snapshot_every: usize,
    /// Stop after this many consecutive steps without a new best score;
    /// 0 never stops early.
    pub stall_patience: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            n_steps: 200,
            clip_range: ClipRange::default(),
            snapshot_every: 10,
            stall_patience: 0,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return input_err("step size must be finite and nonnegative");
        }
        if self.snapshot_every == 0 {
            return input_err("snapshot_every must be at least 1");
        }
        self.clip_range.validate(dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub x: Vec<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Step 0, every `snapshot_every`-th step, and the last step taken.
    pub snapshots: Vec<Snapshot>,
    pub steps_taken: usize,
    /// Set when ascent stopped on the patience rule or ended below its start.
    pub stalled: bool,
    /// Why the run was cut short by a non-finite value, if it was.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn initial_score(&self) -> f64 {
        self.snapshots.first().map_or(f64::NAN, |s| s.score)
    }

    pub fn final_score(&self) -> f64 {
        self.snapshots.last().map_or(f64::NAN, |s| s.score)
    }
}

/// Predicted dual of a single input and its exact gradient w.r.t. the input,
/// backpropagated through the dual head and the backbone.
pub fn input_gradient(params: &ModelParams, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = params.input_dim();
    if x.len() != d {
        return shape_err(format!("input has {} features, model expects {d}", x.len()));
    }
    let xm = Matrix::from_vec(1, d, x.to_vec())?;
    let (emb, bcache) = params.backbone.forward(&xm)?;
    let (score, hcache) = params.dual_head.forward(&emb)?;
    let one = Matrix::from_vec(1, 1, vec![1.0])?;
    let (_, g_emb) = params.dual_head.backward(&hcache, &one, true)?;
    let g_emb = g_emb.expect("requested");
    let (_, g_x) = params.backbone.backward(&bcache, &g_emb, true)?;
    Ok((score.get(0, 0), g_x.expect("requested").into_vec()))
}

/// Plain projected ascent `x <- clip(x + step * grad)`.
pub fn ascend_input(params: &ModelParams, x0: &[f64], cfg: &AscentConfig) -> Result<Trajectory> {
    cfg.validate(x0.len())?;
    let clip = |x: &mut [f64]| {
        for (j, v) in x.iter_mut().enumerate() {
            let (lo, hi) = cfg.clip_range.bounds(j);
            *v = v.clamp(lo, hi);
        }
    };
    let mut x = x0.to_vec();
    clip(&mut x);
    let (mut score, mut grad) = input_gradient(params, &x)?;
    let mut traj = Trajectory {
        snapshots: vec![Snapshot {
            step: 0,
            x: x.clone(),
            score,
        }],
        steps_taken: 0,
        stalled: false,
        aborted: None,
    };
    if !score.is_finite() {
        traj.aborted = Some("initial score is not finite".into());
        return Ok(traj);
    }
    let initial = score;
    let mut best = score;
    let mut since_best = 0;
    for step in 1..=cfg.n_steps {
        for (v, g) in x.iter_mut().zip(&grad) {
            *v += cfg.step_size * g;
        }
        clip(&mut x);
        let (s, g) = input_gradient(params, &x)?;
        if !s.is_finite() || g.iter().any(|v| !v.is_finite()) {
            traj.aborted = Some(format!("non-finite score or gradient at step {step}"));
            break;
        }
        score = s;
        grad = g;
        traj.steps_taken = step;
        let last = step == cfg.n_steps;
        if score > best {
            best = score;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let stop = cfg.stall_patience > 0 && since_best >= cfg.stall_patience;
        if step % cfg.snapshot_every == 0 || last || stop {
            traj.snapshots.push(Snapshot {
                step,
                x: x.clone(),
                score,
            });
        }
        if stop {
            traj.stalled = true;
            break;
        }
    }
    if traj.final_score() < initial {
        traj.stalled = true;
    }
    Ok(traj)
}

/// Rows whose predicted dual is at or below the 10th percentile.
pub fn bottom_decile(params: &ModelParams, x: &Matrix) -> Result<Vec<usize>> {
    let scores = params.dual_scores(&params.embed(x)?)?;
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[(sorted.len() - 1) / 10];
    Ok((0..scores.len()).filter(|&i| scores[i] <= cut).collect())
}

/// Writes equally sized grayscale images as one binary PGM (P5) grid.
/// Values are mapped linearly from `[lo, hi]` to `0..=255`.
pub fn write_pgm_grid(
    path: impl AsRef<Path>,
    images: &[Vec<f64>],
    rows: usize,
    cols: usize,
    grid_cols: usize,
    lo: f64,
    hi: f64,
) -> Result<()> {
    if images.is_empty() || grid_cols == 0 || !(lo < hi) {
        return input_err("need at least one image, one grid column and lo < hi");
    }
    if let Some(i) = images.iter().position(|im| im.len() != rows * cols) {
        return shape_err(format!("image {i} is not {rows}x{cols}"));
    }
    let grid_rows = images.len().div_ceil(grid_cols);
    let (w, h) = (grid_cols * cols, grid_rows * rows);
    let mut px = vec![0u8; w * h];
    for (k, im) in images.iter().enumerate() {
        let (gr, gc) = (k / grid_cols, k % grid_cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = ((im[r * cols + c] - lo) / (hi - lo)).clamp(0.0, 1.0);
                px[(gr * rows + r) * w + gc * cols + c] = (v * 255.0).round() as u8;
            }
        }
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{w} {h}\n255\n")?;
    f.write_all(&px)?;
    Ok(())
}

/// `trajectory,step,score` rows for every snapshot.
pub fn write_score_csv(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_record(["trajectory", "step", "score"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for (t, traj) in trajectories.iter().enumerate() {
        for s in &traj.snapshots {
            w.write_record([t.to_string(), s.step.to_string(), s.score.to_string()])
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{init_params, Activation, Dense, Mlp, MlpArchitecture};
    use rand::Rng;

    fn random_params(seed: u64) -> ModelParams {
        let mut arch = MlpArchitecture::new(4, vec![6, 5], 3);
        arch.activation = Activation::Identity;
        arch.dual_hidden_dims = vec![7, 4];
        let mut p = init_params(&arch, seed).unwrap();
        // smooth backbone so finite differences are well defined everywhere
        for l in p.backbone.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = 0.1);
        }
        p
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::numerics::seeded_rng(3, 99);
        for seed in 0..10 {
            let p = random_params(seed);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = input_gradient(&p, &x).unwrap();
            for j in 0..4 {
                let h = 1e-6;
                let mut a = x.clone();
                let mut b = x.clone();
                a[j] += h;
                b[j] -= h;
                let fd = (input_gradient(&p, &a).unwrap().0 - input_gradient(&p, &b).unwrap().0) / (2.0 * h);
                let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-8);
                assert!(rel <= 1e-5 || (fd - g[j]).abs() < 1e-10, "fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn constant_head_has_zero_gradient() {
        let mut p = random_params(1);
        for l in p.dual_head.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let (s, g) = input_gradient(&p, &[0.3, -0.2, 0.5, 0.1]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(s > 0.0);
    }

    #[test]
    fn prediction_head_does_not_matter() {
        let p = random_params(2);
        let mut q = p.clone();
        for l in q.pred_head.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w += 0.7);
        }
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(input_gradient(&p, &x).unwrap(), input_gradient(&q, &x).unwrap());
    }

    /// Identity backbone and score `softplus(w x)`; on a box the maximiser is
    /// the upper bound when `w > 0`.
    fn toy_params(w: f64) -> ModelParams {
        let head = Dense::new(1, 1, Activation::Identity, vec![1.0], vec![0.0]).unwrap();
        let dual = Dense::new(1, 1, Activation::Softplus, vec![w], vec![0.0]).unwrap();
        ModelParams {
            backbone: Mlp::identity(),
            pred_head: Mlp::new(vec![head]).unwrap(),
            dual_head: Mlp::new(vec![dual]).unwrap(),
        }
    }

    #[test]
    fn ascent_reaches_the_box_maximiser() {
        let p = toy_params(2.0);
        let cfg = AscentConfig {
            clip_range: ClipRange::uniform(-1.0, 0.7),
            ..AscentConfig::default()
        };
        let t = ascend_input(&p, &[-0.5], &cfg).unwrap();
        assert!((t.snapshots.last().unwrap().x[0] - 0.7).abs() < 1e-3);
        assert!(!t.stalled);
        for w in t.snapshots.windows(2) {
            assert!(w[1].score >= w[0].score);
        }
        assert!(t.snapshots.iter().all(|s| cfg.clip_range.contains(&s.x)));
    }

    /// Interior maximiser: two relu units form a tent peaking at x = 0.4.
    #[test]
    fn ascent_finds_interior_peak() {
        // h1 = relu(x - 0.4), h2 = relu(0.4 - x); score = softplus(-(h1 + h2))
        let l1 = Dense::new(1, 2, Activation::Relu, vec![1.0, -1.0], vec![-0.4, 0.4]).unwrap();
        let l2 = Dense::new(2, 1, Activation::Softplus, vec![-1.0, -1.0], vec![0.0]).unwrap();
        let head = Dense::new(1, 1, Activation::Identity, vec![1.0], vec![0.0]).unwrap();
        let p = ModelParams {
            backbone: Mlp::identity(),
            pred_head: Mlp::new(vec![head]).unwrap(),
            dual_head: Mlp::new(vec![l1, l2]).unwrap(),
        };
        let cfg = AscentConfig {
            step_size: 0.001,
            n_steps: 1500,
            ..AscentConfig::default()
        };
        let t = ascend_input(&p, &[0.9], &cfg).unwrap();
        assert!((t.snapshots.last().unwrap().x[0] - 0.4).abs() < 1e-3);
        assert!(t.final_score() > t.initial_score());
    }

    #[test]
    fn zero_step_is_constant_and_deterministic() {
        let p = random_params(4);
        let x0 = [0.2, 0.4, 0.6, 0.8];
        let cfg = AscentConfig {
            step_size: 0.0,
            n_steps: 20,
            ..AscentConfig::default()
        };
        let t = ascend_input(&p, &x0, &cfg).unwrap();
        assert!(t.snapshots.iter().all(|s| s.x == x0));
        let cfg = AscentConfig::default();
        assert_eq!(ascend_input(&p, &x0, &cfg).unwrap(), ascend_input(&p, &x0, &cfg).unwrap());
    }

    #[test]
    fn pgm_and_csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![vec![0.0, 1.0, 0.5, 0.25]; 3];
        let p = dir.path().join("g.pgm");
        write_pgm_grid(&p, &imgs, 2, 2, 2, 0.0, 1.0).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 16);
        assert_eq!(&bytes[header.len()..header.len() + 2], &[0, 255]);
        let t = ascend_input(&toy_params(1.0), &[0.1], &AscentConfig::default()).unwrap();
        let c = dir.path().join("s.csv");
        write_score_csv(&c, std::slice::from_ref(&t)).unwrap();
        let text = fs::read_to_string(&c).unwrap();
        assert_eq!(text.lines().count(), 1 + t.snapshots.len());
    }
}
