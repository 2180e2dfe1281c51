//! Primal-dual constrained learning.
//!
//! Each labeled sample `i` carries the constraint `loss_i(theta) <= eps_i` and
//! a multiplier `lambda_i >= 0`. Training alternates primal descent on the
//! empirical Lagrangian
//!
//! ```text
//! L(theta, lambda) = 1/N * sum_i [ loss_i(theta) + lambda_i * (loss_i(theta) - eps_i) ]
//! ```
//!
//! with projected ascent `lambda_i <- max(0, lambda_i + eta_d * s_i)` on the
//! slacks `s_i = loss_i(theta) - eps_i`. The same loss serves as objective and
//! constraint: cross-entropy for class targets, mean squared error for values.
//!
//! One iteration is `primal_steps` passes over the training split in shuffled
//! minibatches, followed by one full-batch slack evaluation and dual update.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dualhead::DualHeadFit;
use crate::error::{input_err, shape_err, Error, Result};
use crate::losses::per_sample_loss;
use crate::numerics::{
    backward_lagrangian, forward, init_params, optimizer_step, seeded_rng, MlpArchitecture,
    ModelParams, OptimizerKind, OptimizerState,
};

/// Constraint level: one value broadcast to every sample, or one per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Scalar(f64),
    PerSample(Vec<f64>),
}

impl Epsilon {
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        let v = match self {
            Epsilon::Scalar(e) => vec![*e; n],
            Epsilon::PerSample(v) if v.len() == n => v.clone(),
            Epsilon::PerSample(v) => {
                return shape_err(format!("{} constraint levels for {n} samples", v.len()))
            }
        };
        if v.iter().any(|e| e.is_nan()) {
            return input_err("constraint level is NaN");
        }
        Ok(v)
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::Scalar(0.2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdclConfig {
    /// Primal learning rate.
    pub eta_p: f64,
    /// Dual learning rate.
    pub eta_d: f64,
    /// Maximum number of outer iterations.
    pub max_iters: usize,
    /// Primal passes over the training split per iteration.
    pub primal_steps: usize,
    pub epsilon: Epsilon,
    /// Iterations without validation improvement before stopping.
    pub patience: usize,
    /// Share of the labeled set held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    pub batch_size: usize,
    pub primal_optimizer: OptimizerKind,
    /// Keep every iteration's slack vector in the report.
    pub record_history: bool,
}

impl Default for PdclConfig {
    fn default() -> Self {
        Self {
            eta_p: 0.005,
            eta_d: 0.05,
            max_iters: 200,
            primal_steps: 1,
            epsilon: Epsilon::default(),
            patience: 6,
            validation_fraction: 0.1,
            batch_size: 64,
            primal_optimizer: OptimizerKind::Adam,
            record_history: false,
        }
    }
}

impl PdclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_p > 0.0 && self.eta_p.is_finite()) {
            return input_err("eta_p must be positive");
        }
        if !(self.eta_d > 0.0 && self.eta_d.is_finite()) {
            return input_err("eta_d must be positive");
        }
        if self.max_iters == 0 || self.primal_steps == 0 || self.batch_size == 0 {
            return input_err("max_iters, primal_steps and batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return input_err("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Multipliers, constraint levels and the most recent slacks, one entry per
/// training sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambdas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub slacks: Vec<f64>,
}

impl DualState {
    pub fn zeros(epsilons: Vec<f64>) -> Self {
        let n = epsilons.len();
        Self {
            lambdas: vec![0.0; n],
            epsilons,
            slacks: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss after each iteration's primal phase.
    pub objective_trace: Vec<f64>,
    /// Empirical Lagrangian at the same point, before the dual update.
    pub lagrangian_trace: Vec<f64>,
    /// Mean validation loss; empty when no validation split is used.
    pub validation_trace: Vec<f64>,
    pub final_slacks: Vec<f64>,
    /// Share of training constraints with positive slack at the end.
    pub violation_fraction: f64,
    /// Number of completed iterations.
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    pub final_dual: DualState,
    /// Indices into the training dataset, in dual order.
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slack_history: Vec<Vec<f64>>,
    /// Filled by the active-learning loop when a dual head was fitted.
    #[serde(default)]
    pub dual_head: Option<DualHeadFit>,
}

#[derive(Clone, Debug)]
pub struct PdclOutcome {
    pub params: ModelParams,
    pub dual: DualState,
    pub report: TrainReport,
}

fn check_data(params: &ModelParams, data: &Dataset) -> Result<()> {
    if data.features.cols() != params.input_dim() {
        return shape_err(format!(
            "data has {} features, model expects {}",
            data.features.cols(),
            params.input_dim()
        ));
    }
    Ok(())
}

fn losses(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    check_data(params, data)?;
    let out = forward(params, &data.features)?.outputs;
    Ok(per_sample_loss(&out, &data.targets)?.values)
}

/// `lambda * (loss - eps)`, reading `0 * anything` as 0 so infinite levels
/// with zero multipliers stay finite.
#[inline]
fn penalty(lambda: f64, loss: f64, eps: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda * (loss - eps)
    }
}

fn lagrangian_from_losses(loss: &[f64], dual: &DualState) -> f64 {
    lagrangian_terms(loss, loss, dual)
}

fn lagrangian_terms(objective: &[f64], constraint: &[f64], dual: &DualState) -> f64 {
    let n = objective.len() as f64;
    objective
        .iter()
        .zip(constraint)
        .zip(&dual.lambdas)
        .zip(&dual.epsilons)
        .map(|(((&l, &c), &lam), &e)| l + penalty(lam, c, e))
        .sum::<f64>()
        / n
}

/// The Lagrangian from precomputed per-sample objective and constraint
/// losses, for callers whose constraint loss differs from the objective.
pub fn lagrangian_from_parts(objective: &[f64], constraint: &[f64], dual: &DualState) -> Result<f64> {
    let n = objective.len();
    if n == 0 || constraint.len() != n || dual.len() != n || dual.epsilons.len() != n {
        return shape_err("objective, constraint and dual lengths must agree and be nonzero");
    }
    Ok(lagrangian_terms(objective, constraint, dual))
}

pub fn empirical_lagrangian(params: &ModelParams, data: &Dataset, dual: &DualState) -> Result<f64> {
    if dual.len() != data.len() || dual.epsilons.len() != data.len() {
        return shape_err(format!(
            "dual state has {} entries for {} samples",
            dual.len(),
            data.len()
        ));
    }
    if data.is_empty() {
        return input_err("empty dataset");
    }
    Ok(lagrangian_from_losses(&losses(params, data)?, dual))
}

/// `s_i = loss_i - eps_i`; positive means the constraint is violated.
pub fn compute_slacks(params: &ModelParams, data: &Dataset, epsilons: &[f64]) -> Result<Vec<f64>> {
    if epsilons.len() != data.len() {
        return shape_err(format!(
            "{} constraint levels for {} samples",
            epsilons.len(),
            data.len()
        ));
    }
    Ok(losses(params, data)?
        .into_iter()
        .zip(epsilons)
        .map(|(l, e)| l - e)
        .collect())
}

/// Projected ascent: `lambda_i <- max(0, lambda_i + eta_d * s_i)`.
pub fn dual_step(dual: &DualState, slacks: &[f64], eta_d: f64) -> Result<DualState> {
    if slacks.len() != dual.len() {
        return shape_err(format!(
            "{} slacks for {} multipliers",
            slacks.len(),
            dual.len()
        ));
    }
    let lambdas = dual
        .lambdas
        .iter()
        .zip(slacks)
        .map(|(&l, &s)| (l + eta_d * s).max(0.0))
        .collect();
    Ok(DualState {
        lambdas,
        epsilons: dual.epsilons.clone(),
        slacks: slacks.to_vec(),
    })
}

fn split_validation(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64) * fraction).floor() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    if n_val == 0 {
        return ((0..n).collect(), Vec::new());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Run {
    params: ModelParams,
    dual: DualState,
    report: TrainReport,
}

fn train(
    data: &Dataset,
    arch: &MlpArchitecture,
    config: &PdclConfig,
    seed: u64,
    constrained: bool,
) -> Result<Run> {
    config.validate()?;
    arch.validate()?;
    if data.is_empty() {
        return input_err("labeled set is empty");
    }
    if arch.input_dim != data.features.cols() || arch.output_dim != data.targets.output_dim() {
        return shape_err(format!(
            "architecture {}->{} does not fit data with {} features and {} outputs",
            arch.input_dim,
            arch.output_dim,
            data.features.cols(),
            data.targets.output_dim()
        ));
    }

    let all_eps = config.epsilon.resolve(data.len())?;
    let mut split_rng = seeded_rng(seed, 31);
    let (train_idx, val_idx) = split_validation(data.len(), config.validation_fraction, &mut split_rng);
    let train_set = data.subset(&train_idx);
    let val_set = (!val_idx.is_empty()).then(|| data.subset(&val_idx));
    let eps: Vec<f64> = train_idx.iter().map(|&i| all_eps[i]).collect();

    let mut params = init_params(arch, seed)?;
    let mut opt = OptimizerState::new(config.primal_optimizer, config.eta_p);
    let mut dual = DualState::zeros(eps);
    let mut order_rng = seeded_rng(seed, 32);

    let mut report = TrainReport {
        objective_trace: Vec::new(),
        lagrangian_trace: Vec::new(),
        validation_trace: Vec::new(),
        final_slacks: Vec::new(),
        violation_fraction: 0.0,
        stopped_epoch: 0,
        early_stopped: false,
        final_dual: dual.clone(),
        train_indices: train_idx.clone(),
        validation_indices: val_idx.clone(),
        slack_history: Vec::new(),
        dual_head: None,
    };

    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;

    for iter in 1..=config.max_iters {
        for _ in 0..config.primal_steps {
            order.shuffle(&mut order_rng);
            for chunk in order.chunks(config.batch_size) {
                let batch = train_set.subset(chunk);
                let fwd = forward(&params, &batch.features)?;
                let loss = per_sample_loss(&fwd.outputs, &batch.targets)?;
                let mut g = loss.grads;
                let b = chunk.len() as f64;
                for (r, &i) in chunk.iter().enumerate() {
                    let w = if constrained {
                        (1.0 + dual.lambdas[i]) / b
                    } else {
                        1.0 / b
                    };
                    g.row_mut(r).iter_mut().for_each(|v| *v *= w);
                }
                let grads = backward_lagrangian(&params, &fwd.cache, &g)?;
                if let Err(e) = optimizer_step(&mut opt, &mut params, &grads) {
                    return match e {
                        Error::Numeric(_) => {
                            report.final_dual = dual;
                            Err(Error::Diverged {
                                iteration: iter,
                                report: Box::new(report),
                            })
                        }
                        other => Err(other),
                    };
                }
            }
        }

        let loss = losses(&params, &train_set)?;
        let lag = lagrangian_from_losses(&loss, &dual);
        let obj = mean(&loss);
        if !lag.is_finite() || !obj.is_finite() {
            report.final_dual = dual;
            return Err(Error::Diverged {
                iteration: iter,
                report: Box::new(report),
            });
        }
        let slacks: Vec<f64> = loss.iter().zip(&dual.epsilons).map(|(l, e)| l - e).collect();
        if constrained {
            dual = dual_step(&dual, &slacks, config.eta_d)?;
        } else {
            dual.slacks.clone_from(&slacks);
        }
        report.objective_trace.push(obj);
        report.lagrangian_trace.push(lag);
        if config.record_history {
            report.slack_history.push(slacks.clone());
        }
        report.final_slacks = slacks;
        report.stopped_epoch = iter;

        if let Some(val) = &val_set {
            let v = mean(&losses(&params, val)?);
            report.validation_trace.push(v);
            if v < best_val {
                best_val = v;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    report.early_stopped = true;
                    break;
                }
            }
        }
    }

    report.violation_fraction =
        report.final_slacks.iter().filter(|&&s| s > 0.0).count() as f64 / n as f64;
    report.final_dual = dual.clone();
    Ok(Run {
        params,
        dual,
        report,
    })
}

/// Trains from a fresh initialization (seeded by `seed`) with multipliers
/// starting at zero. Early stopping monitors the mean validation loss; the
/// returned parameters and multipliers are those at the stopping point.
pub fn pdcl_train(
    data: &Dataset,
    arch: &MlpArchitecture,
    config: &PdclConfig,
    seed: u64,
) -> Result<PdclOutcome> {
    let run = train(data, arch, config, seed, true)?;
    Ok(PdclOutcome {
        params: run.params,
        dual: run.dual,
        report: run.report,
    })
}

/// Plain empirical risk minimization with the same batching, optimizer and
/// stopping rule; multipliers stay at zero.
pub fn erm_train(
    data: &Dataset,
    arch: &MlpArchitecture,
    config: &PdclConfig,
    seed: u64,
) -> Result<(ModelParams, TrainReport)> {
    let run = train(data, arch, config, seed, false)?;
    Ok((run.params, run.report))
}
