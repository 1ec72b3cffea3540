//! Objective evaluation, reference optima, relative-error curves, the
//! convergence bounds and the per-iteration cost model.
//!
//! Squared loss is `½(u − y)²`, so the objective here is `1/n` times the
//! residual form `½‖Xθ − y‖²`. Relative errors are invariant to that scaling.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{operator_norm, partition_features, Dataset};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::losses::LossKind;
use crate::regularizers::{RegAssignment, RegKind};
use crate::solver::{baseline_until, step_sizes_from_theorem, HistoryRow, SolverConfig, TheoremConstants};

pub const RELATIVE_ERROR_FLOOR: f64 = -16.0;

/// Iteration cap of the long baseline run used as a generic reference.
pub const REFERENCE_MAX_ITERATIONS: usize = 200_000;
const REFERENCE_WINDOW: usize = 100;
const REFERENCE_TOL: f64 = 1e-12;

/// `(1/n) Σ_i ℓ(x_iᵀθ, y_i) + Σ_j r_j(θ_j)`.
pub fn objective<F: Float>(dataset: &Dataset<F>, loss: LossKind, reg: &RegAssignment, theta: ArrayView1<F>) -> Result<F> {
    if theta.len() != dataset.d() {
        return Err(Error::param(format!("theta has {} entries, expected {}", theta.len(), dataset.d())));
    }
    let margins = dataset.x().dot(&theta);
    let mut total = F::zero();
    for (&u, &y) in margins.iter().zip(dataset.y().iter()) {
        total += loss.value(u, y)?;
    }
    Ok(total / F::cast(dataset.n()) + regularizer_value(reg, theta)?)
}

fn regularizer_value<F: Float>(reg: &RegAssignment, theta: ArrayView1<F>) -> Result<F> {
    match reg {
        RegAssignment::Uniform(k) => k.value(theta),
        RegAssignment::PerAgent(ks) => reg.value(&partition_features(theta.len(), ks.len())?, theta),
    }
}

fn per_coordinate(reg: &RegAssignment, d: usize) -> Result<Vec<RegKind>> {
    Ok(match reg {
        RegAssignment::Uniform(k) => vec![*k; d],
        RegAssignment::PerAgent(ks) => reg.per_coordinate(&partition_features(d, ks.len())?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMethod {
    NormalEquations,
    /// Minimum-norm least-squares solution for singular systems.
    PseudoInverse,
    Newton,
    LongRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum<F> {
    pub theta: Array1<F>,
    pub value: F,
    pub method: ReferenceMethod,
    /// False when the iterative method hit its cap; `theta` is then the best point found.
    pub converged: bool,
    pub iterations: usize,
}

/// High-accuracy minimizer of the objective.
///
/// Squared loss with zero or squared-ℓ2 penalties uses the normal equations,
/// logistic loss with those penalties uses damped Newton, and everything else
/// falls back to a long single-agent run that stops once the objective moves
/// less than `1e−12` over 100 rounds.
pub fn reference_optimum<F: Float>(dataset: &Dataset<F>, loss: LossKind, reg: &RegAssignment) -> Result<ReferenceOptimum<F>> {
    let kinds = per_coordinate(reg, dataset.d())?;
    let smooth_reg: Option<Vec<f64>> = kinds
        .iter()
        .map(|k| match *k {
            RegKind::Zero => Some(0.0),
            RegKind::SquaredL2 { mu } => Some(mu),
            RegKind::L1 { .. } => None,
        })
        .collect();
    let (theta, method, converged, iterations) = match (loss, smooth_reg) {
        (LossKind::Squared, Some(mu)) => {
            let (theta, method) = normal_equations(dataset, &mu);
            (theta, method, true, 0)
        }
        (LossKind::Logistic, Some(mu)) => {
            let (theta, converged, iterations) = logistic_newton(dataset, &mu);
            (theta, ReferenceMethod::Newton, converged, iterations)
        }
        _ => return long_run(dataset, loss, reg),
    };
    let theta: Array1<F> = theta.iter().map(|&v| F::cast(v)).collect();
    let value = objective(dataset, loss, reg, theta.view())?;
    Ok(ReferenceOptimum {
        theta,
        value,
        method,
        converged,
        iterations,
    })
}

fn design_f64<F: Float>(dataset: &Dataset<F>) -> DMatrix<f64> {
    let x = dataset.x();
    DMatrix::from_fn(dataset.n(), dataset.d(), |i, j| x[[i, j]].to_f64_lossy())
}

fn normal_equations<F: Float>(dataset: &Dataset<F>, mu: &[f64]) -> (Vec<f64>, ReferenceMethod) {
    let n = dataset.n() as f64;
    let x = design_f64(dataset);
    let y = DVector::from_iterator(dataset.n(), dataset.y().iter().map(|v| v.to_f64_lossy()));
    let mut a = x.transpose() * &x / n;
    for (i, &m) in mu.iter().enumerate() {
        a[(i, i)] += m;
    }
    let b = x.transpose() * y / n;
    if let Some(chol) = a.clone().cholesky() {
        let theta = chol.solve(&b);
        if theta.iter().all(|v| v.is_finite()) {
            return (theta.iter().copied().collect(), ReferenceMethod::NormalEquations);
        }
    }
    let svd = a.svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-12;
    let theta = svd.solve(&b, cutoff).expect("both singular factors were requested");
    (theta.iter().copied().collect(), ReferenceMethod::PseudoInverse)
}

fn logistic_newton<F: Float>(dataset: &Dataset<F>, mu: &[f64]) -> (Vec<f64>, bool, usize) {
    const MAX_ITER: usize = 200;
    let n = dataset.n();
    let d = dataset.d();
    let x = design_f64(dataset);
    let y: Vec<f64> = dataset.y().iter().map(|v| v.to_f64_lossy()).collect();
    let value = |theta: &DVector<f64>| {
        let u = &x * theta;
        let data: f64 = u.iter().zip(&y).map(|(&u, &y)| softplus(-y * u)).sum::<f64>() / n as f64;
        data + 0.5 * theta.iter().zip(mu).map(|(t, m)| m * t * t).sum::<f64>()
    };
    let mut theta = DVector::zeros(d);
    let mut f = value(&theta);
    for it in 1..=MAX_ITER {
        let u = &x * &theta;
        let mut g_scale = DVector::zeros(n);
        let mut weights = DVector::zeros(n);
        for i in 0..n {
            let p = sigmoid(y[i] * u[i]);
            g_scale[i] = -y[i] * (1.0 - p) / n as f64;
            weights[i] = p * (1.0 - p) / n as f64;
        }
        let mut grad = x.transpose() * &g_scale;
        let mut weighted = x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let mut hess = x.transpose() * weighted;
        for j in 0..d {
            grad[j] += mu[j] * theta[j];
            hess[(j, j)] += mu[j];
        }
        let gnorm = grad.norm();
        if gnorm <= 1e-13 * (1.0 + f.abs()) {
            return (theta.iter().copied().collect(), true, it - 1);
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => {
                let svd = hess.svd(true, true);
                let cutoff = svd.singular_values.max() * 1e-14;
                svd.solve(&grad, cutoff).expect("both singular factors were requested")
            }
        };
        let slope = grad.dot(&step);
        // Half the squared Newton decrement estimates the remaining suboptimality.
        if slope / 2.0 <= 1e-20 * (1.0 + f.abs()) {
            return (theta.iter().copied().collect(), true, it - 1);
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta - &step * alpha;
            let fc = value(&cand);
            if fc <= f - 1e-4 * alpha * slope {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No further decrease representable: a stationary point to working precision.
            return (theta.iter().copied().collect(), gnorm <= 1e-8, it);
        }
    }
    (theta.iter().copied().collect(), false, MAX_ITER)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn long_run<F: Float>(dataset: &Dataset<F>, loss: LossKind, reg: &RegAssignment) -> Result<ReferenceOptimum<F>> {
    let chi = operator_norm(dataset.x()).chi.to_f64_lossy().max(f64::MIN_POSITIVE);
    let step = dataset.n() as f64 / chi;
    let config = SolverConfig {
        tau: Some(step),
        sigma: Some(step),
        chi: Some(chi),
        ..SolverConfig::new(REFERENCE_MAX_ITERATIONS)
    };
    let mut previous: Option<F> = None;
    let mut best: Option<(F, Array1<F>)> = None;
    let mut converged = false;
    let mut failure = None;
    let result = baseline_until(dataset, loss, reg, &config, |t, agents| {
        if t % REFERENCE_WINDOW != 0 {
            return true;
        }
        let theta = &agents[0].theta;
        let value = match objective(dataset, loss, reg, theta.view()) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                return false;
            }
        };
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, theta.clone()));
        }
        let done = previous.is_some_and(|p| (p - value).abs() <= F::tolerance(REFERENCE_TOL) * value.abs().max(F::one()));
        previous = Some(value);
        if done {
            converged = true;
        }
        !done
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let bar_value = objective(dataset, loss, reg, result.theta_bar.view())?;
    let (value, theta) = match best {
        Some((v, th)) if v <= bar_value => (v, th),
        _ => (bar_value, result.theta_bar.clone()),
    };
    Ok(ReferenceOptimum {
        theta,
        value,
        method: ReferenceMethod::LongRun,
        converged,
        iterations: result.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveSource {
    /// Objective at the ergodic average.
    Ergodic,
    LastIterate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorPoint {
    pub t: usize,
    pub log10_rel_err: f64,
    /// Set when `L_t ≤ L_*` and the value was replaced by the floor.
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorCurve {
    pub points: Vec<RelativeErrorPoint>,
    pub clipped: bool,
}

impl RelativeErrorCurve {
    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.log10_rel_err)
    }
}

/// `log10((L_t − L_*)/(L_0 − L_*))`, floored at [`RELATIVE_ERROR_FLOOR`].
pub fn log10_relative_error(l_t: f64, l0: f64, l_star: f64) -> Result<(f64, bool)> {
    if !(l0 > l_star) {
        return Err(Error::MetricUndefined(format!("L_0 = {l0} does not exceed L_* = {l_star}")));
    }
    let gap = l_t - l_star;
    if !(gap > 0.0) {
        return Ok((RELATIVE_ERROR_FLOOR, true));
    }
    let v = (gap / (l0 - l_star)).log10();
    Ok(if v < RELATIVE_ERROR_FLOOR {
        (RELATIVE_ERROR_FLOOR, true)
    } else {
        (v, false)
    })
}

/// Relative error of the ergodic objective column.
pub fn relative_error_curve(history: &[HistoryRow], l0: f64, l_star: f64) -> Result<RelativeErrorCurve> {
    relative_error_curve_of(history, CurveSource::Ergodic, l0, l_star)
}

pub fn relative_error_curve_of(
    history: &[HistoryRow],
    source: CurveSource,
    l0: f64,
    l_star: f64,
) -> Result<RelativeErrorCurve> {
    let mut points = Vec::with_capacity(history.len());
    for row in history {
        let l_t = match source {
            CurveSource::Ergodic => row.objective,
            CurveSource::LastIterate => row.objective_last,
        };
        let (log10_rel_err, clipped) = log10_relative_error(l_t, l0, l_star)?;
        points.push(RelativeErrorPoint {
            t: row.t,
            log10_rel_err,
            clipped,
        });
    }
    let clipped = points.iter().any(|p| p.clipped);
    Ok(RelativeErrorCurve { points, clipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundModel {
    Lipschitz,
    SqrtLipschitz,
}

/// Smallest `T` for which the square-root-Lipschitz bound applies, `2mnρ²/σ`.
pub fn sqrt_lipschitz_min_rounds(c: &TheoremConstants) -> Result<f64> {
    let sigma = step_sizes_from_theorem::<f64>(c)?.sigma;
    Ok(2.0 * c.m as f64 * c.n as f64 * c.rho * c.rho / sigma)
}

/// Right-hand side of the ergodic convergence bound after `t` rounds, with
/// `l_hat` the optimal objective value.
///
/// Lipschitz: `L̂ + 2(χ+D)Rρ√(1+2χ²/δ²) / ((n/m)^{1/2} T)`.
/// Square-root Lipschitz: `(1 + 2(χ+D)Rρ√(·)/(m^{1/2} n^{3/2} T)) (L̂ + (χ+D)Rρ√(·)/((n/m)^{1/2} T))`,
/// valid for `T ≥ 2mnρ²/σ`.
pub fn theorem_bound(model: BoundModel, c: &TheoremConstants, t: usize, l_hat: f64) -> Result<f64> {
    if t < 1 {
        return Err(Error::param("the bound needs T >= 1"));
    }
    c.validate()?;
    let (n, m, t_f) = (c.n as f64, c.m as f64, t as f64);
    let core = c.coupling_norm() * c.r * c.rho * c.consensus_factor();
    let additive = core / ((n / m).sqrt() * t_f);
    match model {
        BoundModel::Lipschitz => Ok(l_hat + 2.0 * additive),
        BoundModel::SqrtLipschitz => {
            let min_rounds = sqrt_lipschitz_min_rounds(c)?;
            if t_f < min_rounds {
                return Err(Error::BoundNotApplicable(format!("T = {t} is below 2mn rho^2 / sigma = {min_rounds}")));
            }
            let factor = 1.0 + 2.0 * core / (m.sqrt() * n.powf(1.5) * t_f);
            Ok(factor * (l_hat + additive))
        }
    }
}

/// Per-iteration operation counts of the distributed and single-agent
/// iterations for non-regularized least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub max_degree: usize,
    /// Features per agent, `⌈d/m⌉`.
    pub block: usize,
    /// Set when `m` does not divide `d`.
    pub uneven: bool,
    /// Set when the `3(d/m)` least-squares saving was applied.
    pub least_squares_deduction: bool,
    /// `n(4(d/m) + 2Δ + 7) + 5(d/m)`
    pub flops_per_agent_per_iter: u64,
    /// `n(4d + 1) + 5d`
    pub flops_single_agent_per_iter: u64,
    /// Distributed over single-agent count: one distributed round in baseline iterations.
    pub ratio: f64,
}

impl CostModel {
    /// Position of round `t` on the work-normalized axis.
    pub fn work_units(&self, t: usize) -> f64 {
        self.ratio * t as f64
    }
}

pub fn cost_model(n: usize, d: usize, m: usize, max_degree: usize) -> Result<CostModel> {
    cost_model_with(n, d, m, max_degree, false)
}

/// As [`cost_model`]; `least_squares_deduction` removes `3(d/m)` from the
/// distributed count.
pub fn cost_model_with(n: usize, d: usize, m: usize, max_degree: usize, least_squares_deduction: bool) -> Result<CostModel> {
    if n == 0 || d == 0 || m == 0 {
        return Err(Error::param("cost model needs positive n, d and m"));
    }
    let block = d.div_ceil(m);
    let (n64, b64, d64) = (n as u64, block as u64, d as u64);
    let mut distributed = n64 * (4 * b64 + 2 * max_degree as u64 + 7) + 5 * b64;
    if least_squares_deduction {
        distributed -= 3 * b64;
    }
    let single = n64 * (4 * d64 + 1) + 5 * d64;
    Ok(CostModel {
        n,
        d,
        m,
        max_degree,
        block,
        uneven: !d.is_multiple_of(m),
        least_squares_deduction,
        flops_per_agent_per_iter: distributed,
        flops_single_agent_per_iter: single,
        ratio: distributed as f64 / single as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: usize,
    pub work_units: f64,
    pub objective: f64,
    pub log10_rel_err: f64,
    pub consensus_residual: f64,
    pub cum_flops: u64,
    pub cum_floats_sent: u64,
}

/// Curve rows from a run history; `ratio` scales rounds to work units.
pub fn curve_rows(history: &[HistoryRow], ratio: f64, l0: f64, l_star: f64) -> Result<Vec<CurveRow>> {
    let curve = relative_error_curve(history, l0, l_star)?;
    Ok(history
        .iter()
        .zip(curve.points)
        .map(|(h, p)| CurveRow {
            t: h.t,
            work_units: ratio * h.t as f64,
            objective: h.objective,
            log10_rel_err: p.log10_rel_err,
            consensus_residual: h.consensus_residual,
            cum_flops: h.cum_flops,
            cum_floats_sent: h.cum_floats_sent,
        })
        .collect())
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Gradient of the smooth part of the objective (squared loss, no ℓ1 term),
/// used to certify stationarity of reference points.
pub fn smooth_gradient<F: Float>(dataset: &Dataset<F>, loss: LossKind, reg: &RegAssignment, theta: ArrayView1<F>) -> Result<Array1<F>> {
    let margins = dataset.x().dot(&theta);
    let mut scale = Array1::zeros(dataset.n());
    for (i, (&u, &y)) in margins.iter().zip(dataset.y().iter()).enumerate() {
        scale[i] = loss.grad(u, y)? / F::cast(dataset.n());
    }
    let mut g = dataset.x().t().dot(&scale);
    for (j, kind) in per_coordinate(reg, dataset.d())?.into_iter().enumerate() {
        match kind {
            RegKind::Zero => {}
            RegKind::SquaredL2 { mu } => g[j] += F::cast(mu) * theta[j],
            RegKind::L1 { .. } => return Err(Error::param("l1 penalty has no gradient")),
        }
    }
    Ok(g)
}
