//! Feature-distributed primal-dual iterations.
//!
//! Agent `j` owns the primal block `θ_j`, a consensus multiplier column `v_j`
//! and its own copy `λ_j` of the dual variable. Agent 0 additionally holds the
//! responses and performs the coordinate-wise conjugate step.

mod agent;
mod engine;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;

pub use agent::{AgentState, Inbox, Message, MessageKind};
pub(crate) use engine::baseline_until;
pub use engine::{baseline_single_agent, run, run_with_observer, HistoryRow, Problem, RunResult, SolverConfig};

/// Constants the step-size rule and the convergence bounds are stated in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    /// Bound on the minimizer norm.
    pub r: f64,
    /// Bound on `‖X‖`.
    pub chi: f64,
    /// Lower bound on the Laplacian's second eigenvalue (`∞` for one agent).
    pub delta: f64,
    /// Upper bound on `‖L‖`.
    pub laplacian_bound: f64,
    pub rho: f64,
    pub m: usize,
    pub n: usize,
}

impl TheoremConstants {
    /// `√(1 + 2χ²/δ²)`
    pub fn consensus_factor(&self) -> f64 {
        (1.0 + 2.0 * self.chi * self.chi / (self.delta * self.delta)).sqrt()
    }

    /// Bound on `‖K‖ n`, i.e. `χ + D`.
    pub fn coupling_norm(&self) -> f64 {
        self.chi + self.laplacian_bound
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r > 0.0
            && self.rho > 0.0
            && self.chi >= 0.0
            && self.laplacian_bound >= 0.0
            && self.coupling_norm() > 0.0
            && self.delta > 0.0
            && self.m >= 1
            && self.n >= 1
            && [self.r, self.rho, self.chi, self.laplacian_bound].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid step-size constants {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes<F> {
    pub tau: F,
    pub sigma: F,
}

impl<F: Float> StepSizes<F> {
    /// `τσ((χ + D)/n)²`, which must not exceed 1.
    pub fn coupling_product(&self, chi: f64, laplacian_bound: f64, n: usize) -> f64 {
        let k = (chi + laplacian_bound) / n as f64;
        self.tau.to_f64_lossy() * self.sigma.to_f64_lossy() * k * k
    }

    pub fn satisfies_coupling_bound(&self, chi: f64, laplacian_bound: f64, n: usize) -> bool {
        self.coupling_product(chi, laplacian_bound, n) <= 1.0 + 1e-12
    }
}

/// `σ = √m n^{3/2} ρ / ((χ + D) R √(1 + 2χ²/δ²))`, `τ = n² / ((χ + D)² σ)`.
pub fn step_sizes_from_theorem<F: Float>(c: &TheoremConstants) -> Result<StepSizes<F>> {
    c.validate()?;
    let n = c.n as f64;
    let k = c.coupling_norm();
    let sigma = (c.m as f64).sqrt() * n.powf(1.5) * c.rho / (k * c.r * c.consensus_factor());
    let tau = n * n / (k * k * sigma);
    Ok(StepSizes {
        tau: F::cast(tau),
        sigma: F::cast(sigma),
    })
}
