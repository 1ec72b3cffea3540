//! Agent-separable regularizers with closed-form proximal maps.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use crate::data::FeaturePartition;
use crate::error::{Error, Result};
use crate::float::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RegKind {
    Zero,
    /// `w ‖θ‖₁`
    L1 { weight: f64 },
    /// `(μ/2) ‖θ‖²`
    SquaredL2 { mu: f64 },
}

impl RegKind {
    pub fn value<F: Float>(&self, u: ArrayView1<F>) -> Result<F> {
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("non-finite regularizer argument"));
        }
        Ok(match *self {
            RegKind::Zero => F::zero(),
            RegKind::L1 { weight } => F::cast(weight) * u.iter().fold(F::zero(), |acc, x| acc + x.abs()),
            RegKind::SquaredL2 { mu } => F::cast(0.5 * mu) * u.dot(&u),
        })
    }

    /// `prox_{τ r}(x)` for a single coordinate.
    #[inline]
    pub fn prox_scalar<F: Float>(&self, x: F, tau: F) -> F {
        match *self {
            RegKind::Zero => x,
            RegKind::L1 { weight } => {
                let t = tau * F::cast(weight);
                if x > t {
                    x - t
                } else if x < -t {
                    x + t
                } else {
                    F::zero()
                }
            }
            RegKind::SquaredL2 { mu } => x / (F::one() + tau * F::cast(mu)),
        }
    }

    pub fn prox<F: Float>(&self, u: ArrayView1<F>, tau: F) -> Array1<F> {
        u.mapv(|x| self.prox_scalar(x, tau))
    }

    pub fn prox_inplace<F: Float>(&self, mut u: ArrayViewMut1<F>, tau: F) {
        if !matches!(self, RegKind::Zero) {
            u.mapv_inplace(|x| self.prox_scalar(x, tau));
        }
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegKind::Zero => write!(f, "zero"),
            RegKind::L1 { weight } => write!(f, "l1:{weight}"),
            RegKind::SquaredL2 { mu } => write!(f, "sql2:{mu}"),
        }
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "zero" {
            return Ok(RegKind::Zero);
        }
        let (name, arg) = s.split_once(':').ok_or_else(|| Error::param(format!("unknown regularizer {s:?}")))?;
        let w: f64 = arg
            .parse()
            .map_err(|e| Error::param(format!("regularizer weight {arg:?}: {e}")))?;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::param(format!("regularizer weight must be nonnegative, got {w}")));
        }
        match name {
            "l1" => Ok(RegKind::L1 { weight: w }),
            "sql2" => Ok(RegKind::SquaredL2 { mu: w }),
            _ => Err(Error::param(format!("unknown regularizer {s:?}"))),
        }
    }
}

impl TryFrom<String> for RegKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RegKind> for String {
    fn from(k: RegKind) -> String {
        k.to_string()
    }
}

/// Regularizer choice for a whole run: one kind for everybody or one per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegAssignment {
    Uniform(RegKind),
    PerAgent(Vec<RegKind>),
}

impl Default for RegAssignment {
    fn default() -> Self {
        RegAssignment::Uniform(RegKind::Zero)
    }
}

impl From<RegKind> for RegAssignment {
    fn from(k: RegKind) -> Self {
        RegAssignment::Uniform(k)
    }
}

impl RegAssignment {
    /// Kind used by `agent`.
    pub fn for_agent(&self, agent: usize) -> RegKind {
        match self {
            RegAssignment::Uniform(k) => *k,
            RegAssignment::PerAgent(ks) => ks[agent],
        }
    }

    pub fn check(&self, m: usize) -> Result<()> {
        match self {
            RegAssignment::PerAgent(ks) if ks.len() != m => Err(Error::param(format!(
                "{} per-agent regularizers given for {m} agents",
                ks.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_uniform(&self) -> bool {
        match self {
            RegAssignment::Uniform(_) => true,
            RegAssignment::PerAgent(ks) => ks.windows(2).all(|w| w[0] == w[1]),
        }
    }

    /// `Σ_j r_j(θ_j)`.
    pub fn value<F: Float>(&self, partition: &FeaturePartition, theta: ArrayView1<F>) -> Result<F> {
        self.check(partition.m())?;
        let mut total = F::zero();
        for (j, block) in partition.blocks().iter().enumerate() {
            total += self.for_agent(j).value(theta.slice(ndarray::s![block.clone()]))?;
        }
        Ok(total)
    }

    /// Per-coordinate kinds, expanded against `partition`.
    pub fn per_coordinate(&self, partition: &FeaturePartition) -> Vec<RegKind> {
        let mut out = Vec::with_capacity(partition.d());
        for (j, block) in partition.blocks().iter().enumerate() {
            out.extend(std::iter::repeat_n(self.for_agent(j), block.len()));
        }
        out
    }
}
