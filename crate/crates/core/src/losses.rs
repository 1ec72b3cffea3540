//! Sample losses `ℓ(u, y)` acting on a linear predictor `u = xᵀθ`.
//!
//! Besides values and derivatives, every loss reports which growth class it
//! belongs to (Lipschitz and/or square-root Lipschitz) and exposes the scalar
//! solve that the leader agent performs for each dual coordinate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;

/// Loss family. Parameters are stored in `f64` and cast on use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossKind {
    /// `½(u − y)²`
    Squared,
    /// `|u − y|`
    Absolute,
    /// `log(1 + exp(−y u))` with `y ∈ {−1, +1}`
    Logistic,
    /// Huber loss of the residual `u − y` with threshold `kappa`.
    Huber { kappa: f64 },
}

pub const DEFAULT_HUBER_KAPPA: f64 = 1.0;

/// Which growth conditions a loss satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossClass {
    Lipschitz,
    SqrtLipschitz,
    Both,
}

/// Growth constants of a loss.
///
/// `lipschitz` bounds `|∂ℓ/∂u|`; `sqrt_lipschitz` bounds `|∂ℓ/∂u| / √ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub class: LossClass,
    pub lipschitz: Option<f64>,
    pub sqrt_lipschitz: Option<f64>,
}

impl LipschitzReport {
    /// Constant for the requested model, if the loss belongs to it.
    pub fn rho(&self, class: LossClass) -> Option<f64> {
        match class {
            LossClass::Lipschitz => self.lipschitz,
            LossClass::SqrtLipschitz => self.sqrt_lipschitz,
            LossClass::Both => None,
        }
    }

    /// The constant used to pick step sizes: the Lipschitz one when available.
    pub fn step_rho(&self) -> f64 {
        self.lipschitz.or(self.sqrt_lipschitz).unwrap()
    }
}

fn check_finite<F: Float>(u: F, y: F) -> Result<()> {
    if u.is_finite() && y.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("non-finite loss argument (u={u}, y={y})")))
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus<F: Float>(z: F) -> F {
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

impl LossKind {
    pub fn huber(kappa: f64) -> Result<Self> {
        if kappa > 0.0 && kappa.is_finite() {
            Ok(LossKind::Huber { kappa })
        } else {
            Err(Error::param(format!("huber threshold must be positive, got {kappa}")))
        }
    }

    fn check_label<F: Float>(&self, y: F) -> Result<()> {
        if matches!(self, LossKind::Logistic) && y.abs() != F::one() {
            return Err(Error::domain(format!("logistic loss expects labels in {{-1, +1}}, got {y}")));
        }
        Ok(())
    }

    pub fn value<F: Float>(&self, u: F, y: F) -> Result<F> {
        check_finite(u, y)?;
        self.check_label(y)?;
        Ok(self.value_unchecked(u, y))
    }

    pub(crate) fn value_unchecked<F: Float>(&self, u: F, y: F) -> F {
        let half = F::cast(0.5);
        match *self {
            LossKind::Squared => half * (u - y) * (u - y),
            LossKind::Absolute => (u - y).abs(),
            LossKind::Logistic => softplus(-y * u),
            LossKind::Huber { kappa } => {
                let k = F::cast(kappa);
                let r = (u - y).abs();
                if r <= k {
                    half * r * r
                } else {
                    k * r - half * k * k
                }
            }
        }
    }

    /// `∂ℓ/∂u`. The absolute loss selects the subgradient 0 at `u = y`.
    pub fn grad<F: Float>(&self, u: F, y: F) -> Result<F> {
        check_finite(u, y)?;
        self.check_label(y)?;
        Ok(self.grad_unchecked(u, y))
    }

    pub(crate) fn grad_unchecked<F: Float>(&self, u: F, y: F) -> F {
        match *self {
            LossKind::Squared => u - y,
            LossKind::Absolute => {
                let r = u - y;
                if r > F::zero() {
                    F::one()
                } else if r < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            }
            LossKind::Logistic => -y * sigmoid(-y * u),
            LossKind::Huber { kappa } => {
                let k = F::cast(kappa);
                (u - y).max(-k).min(k)
            }
        }
    }

    /// `∂²ℓ/∂u²` where it exists (0 at kinks).
    fn curvature<F: Float>(&self, u: F, y: F) -> F {
        match *self {
            LossKind::Squared => F::one(),
            LossKind::Absolute => F::zero(),
            LossKind::Logistic => {
                let p = sigmoid(-y * u);
                p * (F::one() - p)
            }
            LossKind::Huber { kappa } => {
                if (u - y).abs() < F::cast(kappa) {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }

    pub fn lipschitz_report(&self) -> LipschitzReport {
        let sqrt2 = std::f64::consts::SQRT_2;
        match *self {
            LossKind::Squared => LipschitzReport {
                class: LossClass::SqrtLipschitz,
                lipschitz: None,
                sqrt_lipschitz: Some(sqrt2),
            },
            LossKind::Absolute | LossKind::Logistic => LipschitzReport {
                class: LossClass::Lipschitz,
                lipschitz: Some(1.0),
                sqrt_lipschitz: None,
            },
            // Quadratic zone gives |r| ≤ ρ|r|/√2; linear zone is tightest at |r| = κ.
            LossKind::Huber { kappa } => LipschitzReport {
                class: LossClass::Both,
                lipschitz: Some(kappa),
                sqrt_lipschitz: Some(sqrt2),
            },
        }
    }

    /// Solves `argmin_λ (1/n) ℓ((n/σ)(a − λ), y) + λ²/(2σ)`.
    ///
    /// Equivalently, evaluates the proximal map of `σ · (1/n) ℓ*(·, y)` at `a`.
    /// The stationarity function `λ − ℓ'((n/σ)(a − λ), y)` is increasing, so a
    /// safeguarded Newton iteration inside a sign-change bracket converges; at a
    /// kink of `ℓ` the bracket collapses onto the jump.
    pub fn dual_coordinate_update<F: Float>(&self, a: F, y: F, sigma: F, n: usize) -> Result<F> {
        if !(sigma > F::zero()) || n == 0 {
            return Err(Error::param(format!("need sigma > 0 and n >= 1 (sigma={sigma}, n={n})")));
        }
        check_finite(a, y)?;
        self.check_label(y)?;

        let scale = F::cast(n) / sigma;
        let stationarity = |lambda: F| lambda - self.grad_unchecked(scale * (a - lambda), y);
        let slope = |lambda: F| F::one() + scale * self.curvature(scale * (a - lambda), y);
        let tol = F::tolerance(1e-12);
        let converged = |lambda: F, phi: F| phi.abs() / sigma <= tol * lambda.abs().max(F::one());

        // Closed form for the squared loss seeds Newton exactly.
        if let LossKind::Squared = self {
            let lambda = (F::cast(n) * a - sigma * y) / (F::cast(n) + sigma);
            if converged(lambda, stationarity(lambda)) {
                return Ok(lambda);
            }
        }

        let rho = self.lipschitz_report().lipschitz.unwrap_or(1.0).max(1.0);
        let mut lo = -F::cast(rho);
        let mut hi = F::cast(rho);
        let mut widenings = 0;
        while stationarity(lo) > F::zero() || stationarity(hi) < F::zero() {
            if stationarity(lo) > F::zero() {
                lo *= F::cast(2.0);
            }
            if stationarity(hi) < F::zero() {
                hi *= F::cast(2.0);
            }
            widenings += 1;
            if widenings > 2000 || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::ScalarSolver {
                    iterations: widenings,
                    lo: lo.to_f64_lossy(),
                    hi: hi.to_f64_lossy(),
                });
            }
        }

        const MAX_ITER: usize = 100;
        let two = F::cast(2.0);
        let mut x = (lo + hi) / two;
        let mut dx_old = hi - lo;
        for _ in 0..MAX_ITER {
            let phi = stationarity(x);
            if converged(x, phi) {
                return Ok(x);
            }
            if phi < F::zero() {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= F::epsilon() * two * x.abs().max(F::one()) {
                return Ok((lo + hi) / two);
            }
            let dphi = slope(x);
            let newton = x - phi / dphi;
            let slow = (two * phi).abs() > (dx_old * dphi).abs();
            let next = if !(newton > lo && newton < hi) || slow {
                (lo + hi) / two
            } else {
                newton
            };
            dx_old = (next - x).abs();
            x = next;
        }
        Err(Error::ScalarSolver {
            iterations: MAX_ITER,
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
        })
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Squared => write!(f, "squared"),
            LossKind::Absolute => write!(f, "absolute"),
            LossKind::Logistic => write!(f, "logistic"),
            LossKind::Huber { kappa } => write!(f, "huber:{kappa}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.trim().split_once(':') {
            Some((name, arg)) => (name, Some(arg)),
            None => (s.trim(), None),
        };
        match (name, arg) {
            ("squared", None) => Ok(LossKind::Squared),
            ("absolute", None) => Ok(LossKind::Absolute),
            ("logistic", None) => Ok(LossKind::Logistic),
            ("huber", None) => LossKind::huber(DEFAULT_HUBER_KAPPA),
            ("huber", Some(k)) => {
                let kappa = k.parse::<f64>().map_err(|e| Error::param(format!("huber threshold {k:?}: {e}")))?;
                LossKind::huber(kappa)
            }
            _ => Err(Error::param(format!("unknown loss {s:?}"))),
        }
    }
}

impl TryFrom<String> for LossKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossKind> for String {
    fn from(k: LossKind) -> String {
        k.to_string()
    }
}

/// `f(x) = ½ a x² + b x + c` with `a > 0`; conjugate `f*(s) = (s − b)²/(2a) − c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPotential {
    pub curvature: f64,
    pub slope: f64,
    pub offset: f64,
}

impl QuadraticPotential {
    pub fn new(curvature: f64, slope: f64, offset: f64) -> Result<Self> {
        if curvature > 0.0 && slope.is_finite() && offset.is_finite() {
            Ok(Self { curvature, slope, offset })
        } else {
            Err(Error::param("quadratic potential needs positive curvature"))
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        0.5 * self.curvature * x * x + self.slope * x + self.offset
    }

    pub fn grad(&self, x: f64) -> f64 {
        self.curvature * x + self.slope
    }

    pub fn conjugate(&self, s: f64) -> f64 {
        let t = s - self.slope;
        t * t / (2.0 * self.curvature) - self.offset
    }
}

/// Uniform grid over a dual interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl DualGrid {
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        let step = if self.points > 1 {
            (self.hi - self.lo) / (self.points - 1) as f64
        } else {
            0.0
        };
        (0..self.points).map(move |k| self.lo + step * k as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualLowerBoundGap {
    pub lhs: f64,
    pub rhs: f64,
}

/// Both sides of `max_v ⟨u,v⟩ − f₁*(v) − f₂*(v) ≥ f₁(u) − f₂*(∇f₁(u))`,
/// with the maximum taken over `grid`.
pub fn dual_lower_bound_gap(f1: &QuadraticPotential, f2: &QuadraticPotential, u: f64, grid: &DualGrid) -> DualLowerBoundGap {
    let lhs = grid
        .iter()
        .map(|v| u * v - f1.conjugate(v) - f2.conjugate(v))
        .fold(f64::NEG_INFINITY, f64::max);
    let rhs = f1.value(u) - f2.conjugate(f1.grad(u));
    DualLowerBoundGap { lhs, rhs }
}
