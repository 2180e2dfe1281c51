//! Constrained least squares with exact primal and dual optima.
//!
//! ```text
//! minimize    f0(theta) = 1/m * |A theta - y|^2
//! subject to  (c_j' theta - z_j)^2 <= eps_j      j = 1..q
//! ```
//!
//! Each quadratic constraint is the pair of half-spaces
//! `|c_j' theta - z_j| <= sqrt(eps_j)`, so the primal is a strictly convex QP
//! solved by a primal active-set method from a strictly feasible start. A
//! half-space multiplier `mu_j` maps back to the quadratic constraint's
//! multiplier through `lambda_j = mu_j / (2 sqrt(eps_j))`.
//!
//! The dual function has a closed form: for fixed `lambda >= 0` the
//! Lagrangian is a quadratic in `theta` minimized by solving
//!
//! ```text
//! [2/m A'A + 2 sum_j lambda_j c_j c_j'] theta = 2/m A'y + 2 sum_j lambda_j z_j c_j
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Error, Result};
use crate::numerics::{seeded_rng, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    ConstrainedScalarLs,
    ConstrainedMultiLs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexInstance {
    pub kind: InstanceKind,
    /// Objective design, `m x p`.
    pub a: Matrix,
    pub y: Vec<f64>,
    /// Constraint directions, `q x p`.
    pub c: Matrix,
    pub z: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// A point with every constraint strictly satisfied, if known.
    pub feasible_hint: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktSolution {
    pub primal_opt: Vec<f64>,
    pub dual_opt: Vec<f64>,
    pub p_star: f64,
    pub d_star: f64,
    pub active: Vec<bool>,
    /// Constraint values minus bounds at the optimum (`<= 0` when feasible).
    pub slacks: Vec<f64>,
    /// Infinity norm of the Lagrangian gradient at `(theta*, lambda*)`.
    pub stationarity_residual: f64,
    /// `max_j |lambda_j * s_j|`.
    pub complementary_residual: f64,
    pub iterations: usize,
}

impl KktSolution {
    pub fn gap(&self) -> f64 {
        (self.p_star - self.d_star).abs()
    }
}

fn dm(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

impl ConvexInstance {
    /// `minimize (theta - target)^2` subject to `theta^2 <= eps`.
    pub fn scalar(target: f64, eps: f64) -> Self {
        Self {
            kind: InstanceKind::ConstrainedScalarLs,
            a: Matrix::from_vec(1, 1, vec![1.0]).expect("1x1"),
            y: vec![target],
            c: Matrix::from_vec(1, 1, vec![1.0]).expect("1x1"),
            z: vec![0.0],
            epsilon: vec![eps],
            feasible_hint: Some(vec![0.0]),
        }
    }

    /// Constrained empirical risk of an affine regressor `w'x + b` under
    /// squared error: the objective averages the per-sample losses and each
    /// sample's loss is bounded by its own level.
    pub fn from_regression(x: &Matrix, y: &[f64], eps: &[f64], feasible_hint: Option<Vec<f64>>) -> Result<Self> {
        if x.rows() != y.len() || y.len() != eps.len() {
            return shape_err("features, targets and levels must have one row per sample");
        }
        let p = x.cols() + 1;
        let mut a = Matrix::zeros(x.rows(), p);
        for i in 0..x.rows() {
            a.row_mut(i)[..p - 1].copy_from_slice(x.row(i));
            a.set(i, p - 1, 1.0);
        }
        Ok(Self {
            kind: InstanceKind::ConstrainedMultiLs,
            c: a.clone(),
            a,
            y: y.to_vec(),
            z: y.to_vec(),
            epsilon: eps.to_vec(),
            feasible_hint,
        })
    }

    pub fn n_params(&self) -> usize {
        self.a.cols()
    }

    pub fn n_constraints(&self) -> usize {
        self.c.rows()
    }

    pub fn with_epsilon(&self, j: usize, eps: f64) -> Self {
        let mut out = self.clone();
        out.epsilon[j] = eps;
        out
    }

    fn validate(&self) -> Result<()> {
        let (m, p) = self.a.shape();
        if m == 0 || p == 0 {
            return shape_err("objective design must be non-empty");
        }
        if self.y.len() != m {
            return shape_err(format!("{} objective targets for {m} rows", self.y.len()));
        }
        if self.c.cols() != p && self.c.rows() > 0 {
            return shape_err(format!("constraint rows have {} columns, expected {p}", self.c.cols()));
        }
        if self.z.len() != self.c.rows() || self.epsilon.len() != self.c.rows() {
            return shape_err("one target and one level per constraint required");
        }
        if let Some(h) = &self.feasible_hint {
            if h.len() != p {
                return shape_err(format!("feasible hint has {} entries, expected {p}", h.len()));
            }
        }
        if let Some(j) = self.epsilon.iter().position(|&e| !(e > 0.0)) {
            return Err(Error::Infeasible(format!(
                "constraint {j} has level {} <= 0: strict feasibility fails",
                self.epsilon[j]
            )));
        }
        Ok(())
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        let m = self.a.rows() as f64;
        self.a
            .iter_rows()
            .zip(&self.y)
            .map(|(r, &t)| {
                let e = crate::numerics::dot(r, theta) - t;
                e * e
            })
            .sum::<f64>()
            / m
    }

    /// `(c_j' theta - z_j)^2 - eps_j` for every constraint.
    pub fn constraint_slacks(&self, theta: &[f64]) -> Vec<f64> {
        self.c
            .iter_rows()
            .zip(&self.z)
            .zip(&self.epsilon)
            .map(|((r, &z), &e)| {
                let v = crate::numerics::dot(r, theta) - z;
                v * v - e
            })
            .collect()
    }

    pub fn lagrangian(&self, theta: &[f64], lambda: &[f64]) -> f64 {
        self.objective(theta)
            + self
                .constraint_slacks(theta)
                .iter()
                .zip(lambda)
                .map(|(s, l)| l * s)
                .sum::<f64>()
    }

    fn strictly_feasible(&self, theta: &[f64]) -> bool {
        self.constraint_slacks(theta).iter().all(|&s| s < 0.0)
    }

    /// The hint if it is strictly feasible, otherwise the least-squares
    /// solution of `C theta = z`.
    fn start_point(&self) -> Result<Vec<f64>> {
        if let Some(h) = &self.feasible_hint {
            if self.strictly_feasible(h) {
                return Ok(h.clone());
            }
        }
        let p = self.n_params();
        if self.n_constraints() == 0 {
            return Ok(vec![0.0; p]);
        }
        let c = dm(&self.c);
        let z = DVector::from_column_slice(&self.z);
        let svd = c.svd(true, true);
        let theta = svd
            .solve(&z, 1e-12)
            .map_err(|e| Error::Numeric(format!("least-squares start failed: {e}")))?;
        let theta: Vec<f64> = theta.iter().copied().collect();
        if self.strictly_feasible(&theta) {
            Ok(theta)
        } else {
            Err(Error::Infeasible(
                "no strictly feasible point found: strict feasibility (Slater) assumption violated".into(),
            ))
        }
    }

    fn hessian(&self) -> DMatrix<f64> {
        let a = dm(&self.a);
        let m = self.a.rows() as f64;
        a.transpose() * &a * (2.0 / m)
    }

    fn linear_term(&self) -> DVector<f64> {
        let a = dm(&self.a);
        let m = self.a.rows() as f64;
        -(a.transpose() * DVector::from_column_slice(&self.y)) * (2.0 / m)
    }
}

/// Half-space `g' theta <= h` for constraint `j`; `upper` picks the
/// `c_j' theta - z_j <= sqrt(eps_j)` side.
fn half_space(inst: &ConvexInstance, j: usize, upper: bool) -> (DVector<f64>, f64) {
    let c = DVector::from_column_slice(inst.c.row(j));
    let r = inst.epsilon[j].sqrt();
    if upper {
        (c, inst.z[j] + r)
    } else {
        (-c, r - inst.z[j])
    }
}

/// Minimizer of the Lagrangian in `theta` and the dual function value.
pub fn dual_function(inst: &ConvexInstance, lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
    inst.validate()?;
    if lambda.len() != inst.n_constraints() {
        return shape_err(format!("{} multipliers for {} constraints", lambda.len(), inst.n_constraints()));
    }
    if let Some(j) = lambda.iter().position(|&l| !(l >= 0.0)) {
        return input_err(format!("multiplier {j} is {} but must be nonnegative", lambda[j]));
    }
    let mut h = inst.hessian();
    let mut rhs = -inst.linear_term();
    for (j, &l) in lambda.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let c = DVector::from_column_slice(inst.c.row(j));
        h += &c * c.transpose() * (2.0 * l);
        rhs += c * (2.0 * l * inst.z[j]);
    }
    let theta = h
        .cholesky()
        .ok_or_else(|| Error::Numeric("Lagrangian Hessian is not positive definite".into()))?
        .solve(&rhs);
    let theta: Vec<f64> = theta.iter().copied().collect();
    Ok((inst.lagrangian(&theta, lambda), theta))
}

/// Solves the equality-constrained step problem on the working set.
fn eqp(hess: &DMatrix<f64>, grad: &DVector<f64>, rows: &[DVector<f64>]) -> Result<(DVector<f64>, DVector<f64>)> {
    let p = hess.nrows();
    let w = rows.len();
    let mut k = DMatrix::zeros(p + w, p + w);
    k.view_mut((0, 0), (p, p)).copy_from(hess);
    for (i, g) in rows.iter().enumerate() {
        for r in 0..p {
            k[(r, p + i)] = g[r];
            k[(p + i, r)] = g[r];
        }
    }
    let mut rhs = DVector::zeros(p + w);
    rhs.rows_mut(0, p).copy_from(&(-grad));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("working-set KKT system is singular".into()))?;
    Ok((sol.rows(0, p).into_owned(), sol.rows(p, w).into_owned()))
}

/// Exact primal and dual optima.
pub fn solve_instance(inst: &ConvexInstance) -> Result<KktSolution> {
    inst.validate()?;
    let p = inst.n_params();
    let q = inst.n_constraints();
    let hess = inst.hessian();
    if hess.clone().cholesky().is_none() {
        return input_err("objective is not strictly convex: A needs full column rank");
    }
    let lin = inst.linear_term();
    let halves: Vec<(DVector<f64>, f64)> = (0..q)
        .flat_map(|j| [half_space(inst, j, true), half_space(inst, j, false)])
        .collect();

    let mut theta = DVector::from_vec(inst.start_point()?);
    let mut working: Vec<usize> = Vec::new();
    let scale = 1.0 + hess.amax() + lin.amax();
    let max_iters = 50 * (2 * q + p + 1);
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > max_iters {
            return Err(Error::Numeric(format!("active-set method did not converge in {max_iters} steps")));
        }
        let grad = &hess * &theta + &lin;
        let rows: Vec<DVector<f64>> = working.iter().map(|&i| halves[i].0.clone()).collect();
        let (step, mu) = eqp(&hess, &grad, &rows)?;
        if step.amax() <= 1e-13 * scale * (1.0 + theta.amax()) {
            match mu.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
                Some((pos, &m)) if m < -1e-13 * scale => {
                    working.remove(pos);
                }
                _ => break,
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            for (i, (g, h)) in halves.iter().enumerate() {
                if working.contains(&i) {
                    continue;
                }
                let gp = g.dot(&step);
                if gp > 0.0 {
                    let t = ((h - g.dot(&theta)) / gp).max(0.0);
                    if t < alpha {
                        alpha = t;
                        blocking = Some(i);
                    }
                }
            }
            theta += &step * alpha;
            if let Some(i) = blocking {
                working.push(i);
            }
        }
    }

    // Polish: the optimum is the exact solution of the final working-set system.
    let rows: Vec<DVector<f64>> = working.iter().map(|&i| halves[i].0.clone()).collect();
    let rhs_h: Vec<f64> = working.iter().map(|&i| halves[i].1).collect();
    let theta = polish(&hess, &lin, &rows, &rhs_h).unwrap_or(theta);
    let mu = {
        // H theta + lin + G' mu = 0, solved in the least-squares sense
        let grad = &hess * &theta + &lin;
        if rows.is_empty() {
            DVector::zeros(0)
        } else {
            let g = DMatrix::from_columns(&rows);
            let gtg = g.transpose() * &g;
            gtg.lu()
                .solve(&(-(g.transpose() * grad)))
                .ok_or_else(|| Error::Numeric("active constraint normals are dependent".into()))?
        }
    };

    let theta_v: Vec<f64> = theta.iter().copied().collect();
    let mut lambda = vec![0.0; q];
    let mut active = vec![false; q];
    for (pos, &i) in working.iter().enumerate() {
        let j = i / 2;
        active[j] = true;
        lambda[j] += mu[pos].max(0.0) / (2.0 * inst.epsilon[j].sqrt());
    }
    let slacks = inst.constraint_slacks(&theta_v);
    let p_star = inst.objective(&theta_v);
    let (d_star, _) = dual_function(inst, &lambda)?;

    let mut lag_grad = &hess * &theta + &lin;
    for j in 0..q {
        if lambda[j] > 0.0 {
            let c = DVector::from_column_slice(inst.c.row(j));
            let r = c.dot(&theta) - inst.z[j];
            lag_grad += c * (2.0 * lambda[j] * r);
        }
    }
    let complementary_residual = lambda
        .iter()
        .zip(&slacks)
        .map(|(l, s)| (l * s).abs())
        .fold(0.0, f64::max);
    Ok(KktSolution {
        primal_opt: theta_v,
        dual_opt: lambda,
        p_star,
        d_star,
        active,
        slacks,
        stationarity_residual: lag_grad.amax(),
        complementary_residual,
        iterations,
    })
}

/// Minimizes the objective with the working-set rows held at equality.
fn polish(hess: &DMatrix<f64>, lin: &DVector<f64>, rows: &[DVector<f64>], rhs_h: &[f64]) -> Option<DVector<f64>> {
    let p = hess.nrows();
    let w = rows.len();
    let mut k = DMatrix::zeros(p + w, p + w);
    k.view_mut((0, 0), (p, p)).copy_from(hess);
    let mut rhs = DVector::zeros(p + w);
    rhs.rows_mut(0, p).copy_from(&(-lin));
    for (i, g) in rows.iter().enumerate() {
        for r in 0..p {
            k[(r, p + i)] = g[r];
            k[(p + i, r)] = g[r];
        }
        rhs[p + i] = rhs_h[i];
    }
    k.lu().solve(&rhs).map(|s| s.rows(0, p).into_owned())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub constraint: usize,
    pub numeric_derivative: f64,
    pub lambda_star: f64,
    /// `|numeric_derivative + lambda_star|`.
    pub abs_error: f64,
}

/// Central difference of the optimal value in `eps_j` against `-lambda_j*`.
/// Refuses points where the active set differs at `eps_j +- h`, since the
/// optimal value need not be differentiable there.
pub fn sensitivity_check(inst: &ConvexInstance, constraint_index: usize, h: f64) -> Result<Sensitivity> {
    let j = constraint_index;
    if j >= inst.n_constraints() {
        return input_err(format!("constraint {j} does not exist"));
    }
    let eps = inst.epsilon[j];
    if !(h > 0.0 && h < eps) {
        return input_err(format!("step {h} must lie in (0, {eps})"));
    }
    let base = solve_instance(inst)?;
    let up = solve_instance(&inst.with_epsilon(j, eps + h))?;
    let down = solve_instance(&inst.with_epsilon(j, eps - h))?;
    if up.active != base.active || down.active != base.active {
        return Err(Error::Numeric(format!(
            "active set changes within +-{h} of constraint {j}'s level"
        )));
    }
    let numeric = (up.p_star - down.p_star) / (2.0 * h);
    let lambda = base.dual_opt[j];
    Ok(Sensitivity {
        constraint: j,
        numeric_derivative: numeric,
        lambda_star: lambda,
        abs_error: (numeric + lambda).abs(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakDualityProbe {
    pub dual_value: f64,
    pub p_star: f64,
}

/// Evaluates the dual function at a trial multiplier and checks it does not
/// exceed the primal optimum.
pub fn weak_duality_probe(inst: &ConvexInstance, lambda_trial: &[f64]) -> Result<WeakDualityProbe> {
    let (dual_value, _) = dual_function(inst, lambda_trial)?;
    let p_star = solve_instance(inst)?.p_star;
    if dual_value > p_star + 1e-10 * p_star.abs().max(1.0) {
        return Err(Error::Contract(format!(
            "dual value {dual_value} exceeds primal optimum {p_star}"
        )));
    }
    Ok(WeakDualityProbe { dual_value, p_star })
}

/// Random strictly feasible instance: a planted point `theta0` satisfies
/// every constraint with a positive margin, while the objective targets pull
/// the unconstrained optimum away so some constraints bind.
pub fn random_instance(seed: u64, n_params: usize, n_rows: usize, n_constraints: usize) -> Result<ConvexInstance> {
    if n_params == 0 || n_rows < n_params {
        return input_err("need at least as many objective rows as parameters");
    }
    let mut rng = seeded_rng(seed, 71);
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };
    let a = Matrix::from_vec(n_rows, n_params, gauss(n_rows * n_params))?;
    let c = Matrix::from_vec(n_constraints, n_params, gauss(n_constraints * n_params))?;
    let theta0 = gauss(n_params);
    let y: Vec<f64> = gauss(n_rows).into_iter().map(|v| 3.0 * v).collect();
    let noise = gauss(n_constraints);
    let margins: Vec<f64> = (0..n_constraints).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut z = Vec::with_capacity(n_constraints);
    let mut eps = Vec::with_capacity(n_constraints);
    for j in 0..n_constraints {
        let v = crate::numerics::dot(c.row(j), &theta0);
        let zj = v + 0.3 * noise[j];
        z.push(zj);
        eps.push((v - zj).powi(2) + margins[j]);
    }
    Ok(ConvexInstance {
        kind: if n_params == 1 {
            InstanceKind::ConstrainedScalarLs
        } else {
            InstanceKind::ConstrainedMultiLs
        },
        a,
        y,
        c,
        z,
        epsilon: eps,
        feasible_hint: Some(theta0),
    })
}

/// Whether every inactive constraint keeps a slack margin and every active
/// one a multiplier margin; finite differences are only meaningful away from
/// active-set changes.
pub fn is_nondegenerate(inst: &ConvexInstance, sol: &KktSolution, margin: f64) -> bool {
    sol.active.iter().enumerate().all(|(j, &a)| {
        if a {
            sol.dual_opt[j] > margin
        } else {
            -sol.slacks[j] > margin * inst.epsilon[j].max(1.0)
        }
    })
}

/// `count` random nondegenerate instances with at least one binding
/// constraint, drawn from consecutive seeds starting at `seed`.
pub fn random_suite(count: usize, seed: u64) -> Result<Vec<ConvexInstance>> {
    let mut out = Vec::with_capacity(count);
    let mut s = seed;
    while out.len() < count {
        let mut rng = seeded_rng(s, 72);
        let p = rng.random_range(1..=5);
        let m = p + rng.random_range(0..=8);
        let q = rng.random_range(1..=6);
        let inst = random_instance(s, p, m, q)?;
        s += 1;
        if let Ok(sol) = solve_instance(&inst) {
            if sol.active.iter().any(|&a| a) && is_nondegenerate(&inst, &sol, 1e-3) {
                out.push(inst);
            }
        }
        if s > seed + 100 * count as u64 + 100 {
            return Err(Error::Numeric("could not draw enough nondegenerate instances".into()));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub index: usize,
    pub n_params: usize,
    pub n_constraints: usize,
    pub p_star: f64,
    pub d_star: f64,
    pub gap: f64,
    pub complementary_residual: f64,
    pub stationarity_residual: f64,
    pub sensitivities: Vec<Sensitivity>,
    /// Largest `D(lambda) - P*` over the random trials (should be <= 0).
    pub weak_duality_max_excess: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub step: f64,
    pub instances: Vec<InstanceReport>,
    pub all_pass: bool,
}

/// Runs the gap, complementary slackness, sensitivity and weak-duality
/// checks on a random suite.
pub fn verify_suite(count: usize, seed: u64, h: f64, dual_trials: usize) -> Result<VerificationReport> {
    let suite = random_suite(count, seed)?;
    let mut instances = Vec::with_capacity(count);
    let mut rng = seeded_rng(seed, 73);
    for (index, inst) in suite.iter().enumerate() {
        let sol = solve_instance(inst)?;
        let mut sensitivities = Vec::new();
        let mut pass = sol.gap() <= 1e-8 && sol.complementary_residual <= 1e-8;
        for j in 0..inst.n_constraints() {
            let s = sensitivity_check(inst, j, h)?;
            pass &= if s.lambda_star > 0.0 {
                s.abs_error <= 1e-3 * s.lambda_star.max(1.0)
            } else {
                s.numeric_derivative.abs() <= 1e-6
            };
            sensitivities.push(s);
        }
        let mut excess = f64::NEG_INFINITY;
        for _ in 0..dual_trials {
            let trial: Vec<f64> = (0..inst.n_constraints())
                .map(|j| rng.random_range(0.0..3.0) * (1.0 + sol.dual_opt[j]))
                .collect();
            let (d, _) = dual_function(inst, &trial)?;
            excess = excess.max(d - sol.p_star);
        }
        pass &= excess <= 1e-10;
        instances.push(InstanceReport {
            index,
            n_params: inst.n_params(),
            n_constraints: inst.n_constraints(),
            p_star: sol.p_star,
            d_star: sol.d_star,
            gap: sol.gap(),
            complementary_residual: sol.complementary_residual,
            stationarity_residual: sol.stationarity_residual,
            sensitivities,
            weak_duality_max_excess: excess,
            pass,
        });
    }
    let all_pass = instances.iter().all(|r| r.pass);
    Ok(VerificationReport {
        seed,
        step: h,
        instances,
        all_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_binding_constraint() {
        let s = solve_instance(&ConvexInstance::scalar(2.0, 1.0)).unwrap();
        assert!((s.primal_opt[0] - 1.0).abs() < 1e-12);
        assert!((s.dual_opt[0] - 1.0).abs() < 1e-12);
        assert!((s.p_star - 1.0).abs() < 1e-12);
        assert!(s.gap() < 1e-12);
    }

    #[test]
    fn scalar_inactive_constraint() {
        let s = solve_instance(&ConvexInstance::scalar(2.0, 9.0)).unwrap();
        assert!((s.primal_opt[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.dual_opt[0], 0.0);
        assert!(s.p_star.abs() < 1e-20);
    }

    #[test]
    fn scalar_sensitivity_matches_closed_form() {
        // P*(eps) = (sqrt(eps) - 2)^2, so dP*/deps = 1 - 2/sqrt(eps).
        let inst = ConvexInstance::scalar(2.0, 1.0);
        let s = sensitivity_check(&inst, 0, 1e-4).unwrap();
        assert!((s.numeric_derivative + 1.0).abs() < 1e-6);
        for eps in [0.25, 0.5, 2.0, 3.0] {
            let s = sensitivity_check(&ConvexInstance::scalar(2.0, eps), 0, 1e-4).unwrap();
            assert!((s.numeric_derivative - (1.0 - 2.0 / eps.sqrt())).abs() < 1e-7);
            assert!(s.abs_error < 1e-7);
        }
        let inactive = sensitivity_check(&ConvexInstance::scalar(2.0, 9.0), 0, 1e-4).unwrap();
        assert!(inactive.numeric_derivative.abs() < 1e-8);
        let tight = solve_instance(&inst.with_epsilon(0, 1.0 - 1e-4)).unwrap();
        assert!(tight.p_star > 1.0);
    }

    #[test]
    fn sensitivity_rejects_active_set_change() {
        // unconstrained optimum theta = 2 sits exactly on the boundary at eps = 4
        let inst = ConvexInstance::scalar(2.0, 4.0);
        assert!(sensitivity_check(&inst, 0, 1e-4).is_err());
        assert!(sensitivity_check(&inst, 0, 5.0).is_err());
    }

    #[test]
    fn infeasible_levels_are_named() {
        match solve_instance(&ConvexInstance::scalar(2.0, 0.0)) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("strict feasibility")),
            other => panic!("{other:?}"),
        }
        // two constraints that cannot hold together: |theta| <= 0.1 and |theta - 1| <= 0.1
        let inst = ConvexInstance {
            kind: InstanceKind::ConstrainedScalarLs,
            a: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            y: vec![0.0],
            c: Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap(),
            z: vec![0.0, 1.0],
            epsilon: vec![0.01, 0.01],
            feasible_hint: None,
        };
        assert!(matches!(solve_instance(&inst), Err(Error::Infeasible(_))));
    }

    #[test]
    fn weak_duality_examples() {
        let inst = ConvexInstance::scalar(2.0, 1.0);
        let at_opt = weak_duality_probe(&inst, &[1.0]).unwrap();
        assert!((at_opt.dual_value - at_opt.p_star).abs() < 1e-12);
        let zero = weak_duality_probe(&inst, &[0.0]).unwrap();
        assert!(zero.dual_value.abs() < 1e-15);
        assert!(weak_duality_probe(&inst, &[-1.0]).is_err());
    }

    /// Brute-force grid oracle for a two-parameter instance.
    #[test]
    fn multi_constraint_matches_grid_search() {
        let inst = random_instance(3, 2, 6, 3).unwrap();
        let sol = solve_instance(&inst).unwrap();
        assert!(sol.gap() <= 1e-8);
        let mut best = f64::INFINITY;
        let (cx, cy) = (sol.primal_opt[0], sol.primal_opt[1]);
        let n = 400;
        for i in 0..=n {
            for k in 0..=n {
                let t = [cx - 0.05 + 0.1 * i as f64 / n as f64, cy - 0.05 + 0.1 * k as f64 / n as f64];
                if inst.constraint_slacks(&t).iter().all(|&s| s <= 0.0) {
                    best = best.min(inst.objective(&t));
                }
            }
        }
        assert!(sol.p_star <= best + 1e-12);
        assert!(best - sol.p_star < 1e-2, "grid {best} vs {} at {:?}, active {:?}", sol.p_star, sol.primal_opt, sol.active);
    }

    #[test]
    fn random_suite_is_tight() {
        for inst in random_suite(10, 5).unwrap() {
            let sol = solve_instance(&inst).unwrap();
            assert!(sol.gap() <= 1e-8, "gap {}", sol.gap());
            assert!(sol.complementary_residual <= 1e-8);
            assert!(sol.stationarity_residual <= 1e-8);
            assert!(sol.slacks.iter().all(|&s| s <= 1e-10));
        }
    }

    #[test]
    fn regression_instance_layout() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let inst = ConvexInstance::from_regression(&x, &[0.5, 1.0], &[1.0, 1.0], None).unwrap();
        assert_eq!(inst.a.row(1), &[2.0, 1.0]);
        assert_eq!(inst.c, inst.a);
        // theta = (0.5, 0) fits both samples exactly
        assert!(inst.objective(&[0.5, 0.0]).abs() < 1e-15);
    }
}
