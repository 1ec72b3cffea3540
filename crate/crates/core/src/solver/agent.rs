use std::sync::Arc;

use ndarray::{Array1, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::losses::LossKind;
use crate::regularizers::RegKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    /// The sender's current dual copy `λ_j`.
    Lambda,
    /// The sender's extrapolated multiplier `2 v_{j,t+1} − v_{j,t}`.
    ExtrapolatedV,
}

impl MessageKind {
    fn name(self) -> &'static str {
        match self {
            MessageKind::Lambda => "lambda",
            MessageKind::ExtrapolatedV => "extrapolated-v",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message<F> {
    pub from: usize,
    pub kind: MessageKind,
    /// Shared read-only copy; one allocation serves every recipient.
    pub payload: Arc<Array1<F>>,
}

/// One slot per neighbor and message kind. Slots are emptied when consumed,
/// so a round that skips a delivery surfaces as a protocol error.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbox<F> {
    neighbors: Vec<usize>,
    lambda: Vec<Option<Arc<Array1<F>>>>,
    extrapolated_v: Vec<Option<Arc<Array1<F>>>>,
}

impl<F: Float> Inbox<F> {
    fn new(neighbors: &[usize]) -> Self {
        Self {
            neighbors: neighbors.to_vec(),
            lambda: vec![None; neighbors.len()],
            extrapolated_v: vec![None; neighbors.len()],
        }
    }

    pub fn deliver(&mut self, msg: Message<F>) -> Result<()> {
        let slot = self
            .neighbors
            .iter()
            .position(|&k| k == msg.from)
            .ok_or_else(|| Error::param(format!("message from non-neighbor {}", msg.from)))?;
        match msg.kind {
            MessageKind::Lambda => self.lambda[slot] = Some(msg.payload),
            MessageKind::ExtrapolatedV => self.extrapolated_v[slot] = Some(msg.payload),
        }
        Ok(())
    }

    fn take_all(&mut self, agent: usize, kind: MessageKind) -> Result<Vec<Arc<Array1<F>>>> {
        let slots = match kind {
            MessageKind::Lambda => &mut self.lambda,
            MessageKind::ExtrapolatedV => &mut self.extrapolated_v,
        };
        if let Some(missing) = slots.iter().position(Option::is_none) {
            return Err(Error::Protocol {
                agent,
                neighbor: self.neighbors[missing],
                kind: kind.name(),
            });
        }
        Ok(slots.iter_mut().map(|s| s.take().unwrap()).collect())
    }
}

/// Local iterates of one agent.
///
/// FLOPs are tallied per update rule: one multiply or one add per unit, a
/// length-k inner product accumulated into a starting value costs `2k`, and
/// scalar step factors (computed once per round), proximal branches and the
/// leader's scalar conjugate solves are not counted.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState<F> {
    pub id: usize,
    pub neighbors: Vec<usize>,
    pub theta: Array1<F>,
    /// `2 θ_{t+1} − θ_t`
    pub theta_extrapolated: Array1<F>,
    pub v: Array1<F>,
    /// `2 v_{t+1} − v_t`
    pub v_extrapolated: Array1<F>,
    pub lambda: Array1<F>,
    pub ergodic_theta_sum: Array1<F>,
    pub ergodic_v_sum: Array1<F>,
    pub ergodic_lambda_sum: Array1<F>,
    pub inbox: Inbox<F>,
    /// Cumulative FLOPs performed by this agent.
    pub flops: u64,
}

impl<F: Float> AgentState<F> {
    /// All iterates zero; the inbox holds the (zero) initial duals of the neighbors.
    pub fn new(id: usize, neighbors: &[usize], block_len: usize, n: usize) -> Self {
        let mut inbox = Inbox::new(neighbors);
        let zeros = Arc::new(Array1::zeros(n));
        for &k in neighbors {
            inbox
                .deliver(Message {
                    from: k,
                    kind: MessageKind::Lambda,
                    payload: Arc::clone(&zeros),
                })
                .unwrap();
        }
        Self {
            id,
            neighbors: neighbors.to_vec(),
            theta: Array1::zeros(block_len),
            theta_extrapolated: Array1::zeros(block_len),
            v: Array1::zeros(n),
            v_extrapolated: Array1::zeros(n),
            lambda: Array1::zeros(n),
            ergodic_theta_sum: Array1::zeros(block_len),
            ergodic_v_sum: Array1::zeros(n),
            ergodic_lambda_sum: Array1::zeros(n),
            inbox,
            flops: 0,
        }
    }

    pub fn degree(&self) -> usize {
        self.neighbors.len()
    }

    /// `θ_{j,t+1} = prox_{τ r_j}(θ_{j,t} − (τ/n) X_jᵀ λ_{j,t})`, also forming the
    /// extrapolation and the ergodic sum.
    pub fn primal_update_theta(&mut self, x_j: ArrayView2<F>, reg: RegKind, tau: F, n: usize) {
        let step = tau / F::cast(n);
        let grad = x_j.t().dot(&self.lambda);
        let two = F::cast(2.0);
        Zip::from(&mut self.theta)
            .and(&mut self.theta_extrapolated)
            .and(&mut self.ergodic_theta_sum)
            .and(&grad)
            .for_each(|theta, extra, sum, &g| {
                let next = reg.prox_scalar(*theta - step * g, tau);
                *extra = two * next - *theta;
                *theta = next;
                *sum += next;
            });
        let (rows, cols) = x_j.dim();
        self.flops += (2 * rows * cols + 5 * cols) as u64;
    }

    /// `v_{j,t+1} = v_{j,t} − (τ/n) Σ_{j'∼j} (λ_{j,t} − λ_{j',t})`, consuming
    /// the neighbors' `λ_{j',t}` from the inbox.
    pub fn primal_update_v(&mut self, tau: F, n: usize) -> Result<()> {
        let neighbor_lambdas = self.inbox.take_all(self.id, MessageKind::Lambda)?;
        let step = tau / F::cast(n);
        let mut laplacian_row = &self.lambda * F::cast(self.degree());
        for other in &neighbor_lambdas {
            laplacian_row -= other.as_ref();
        }
        Zip::from(&mut self.v)
            .and(&mut self.v_extrapolated)
            .and(&laplacian_row)
            .for_each(|v, extra, &s| {
                let shift = step * s;
                let next = *v - shift;
                *extra = next - shift;
                *v = next;
            });
        self.flops += (self.lambda.len() * (self.degree() + 4)) as u64;
        Ok(())
    }

    /// Pre-conjugate dual point
    /// `λ_{j,t} + (σ/n) X_j(2θ_{j,t+1} − θ_{j,t}) + (σ/n) Σ_{j'∼j} [2(v_{j,t+1} − v_{j',t+1}) − v_{j,t} + v_{j',t}]`.
    fn dual_ascent_point(&mut self, x_j: ArrayView2<F>, sigma: F, n: usize) -> Result<Array1<F>> {
        let neighbor_v = self.inbox.take_all(self.id, MessageKind::ExtrapolatedV)?;
        let step = sigma / F::cast(n);
        let mut coupling = &self.v_extrapolated * F::cast(self.degree());
        for other in &neighbor_v {
            coupling -= other.as_ref();
        }
        let w = self.theta_extrapolated.view();
        let mut out = self.lambda.clone();
        Zip::from(&mut out).and(x_j.rows()).and(&coupling).for_each(|lambda, row, &c| {
            let mut acc = c;
            for (&a, &b) in row.iter().zip(w.iter()) {
                acc += a * b;
            }
            *lambda += step * acc;
        });
        let (rows, cols) = x_j.dim();
        self.flops += (rows * (2 * cols + self.degree() + 3)) as u64;
        Ok(out)
    }

    /// Follower dual step (agents other than the leader): a plain ascent step.
    pub fn dual_update_follower(&mut self, x_j: ArrayView2<F>, sigma: F, n: usize) -> Result<()> {
        self.lambda = self.dual_ascent_point(x_j, sigma, n)?;
        Ok(())
    }

    /// Leader dual step: ascent to the intermediate point, then the
    /// coordinate-wise conjugate proximal solve against the responses.
    pub fn dual_update_leader(
        &mut self,
        x_1: ArrayView2<F>,
        y: ArrayView1<F>,
        loss: LossKind,
        sigma: F,
        n: usize,
    ) -> Result<()> {
        let half = self.dual_ascent_point(x_1, sigma, n)?;
        if half.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: 0,
                agent: self.id,
                variable: "lambda",
            });
        }
        let mut next = Array1::zeros(half.len());
        for (i, (out, (&a, &yi))) in next.iter_mut().zip(half.iter().zip(y.iter())).enumerate() {
            *out = loss
                .dual_coordinate_update(a, yi, sigma, n)
                .map_err(|e| Error::Coordinate {
                    coordinate: i,
                    source: Box::new(e),
                })?;
        }
        self.lambda = next;
        Ok(())
    }

    /// Dual step of the single-agent baseline: no multiplier term.
    pub(crate) fn dual_update_baseline(
        &mut self,
        x: ArrayView2<F>,
        y: ArrayView1<F>,
        loss: LossKind,
        sigma: F,
        n: usize,
    ) -> Result<()> {
        let step = sigma / F::cast(n);
        let w = self.theta_extrapolated.view();
        let mut next = Array1::zeros(self.lambda.len());
        for (i, ((out, row), (&lam, &yi))) in next
            .iter_mut()
            .zip(x.rows())
            .zip(self.lambda.iter().zip(y.iter()))
            .enumerate()
        {
            let mut acc = F::zero();
            for (&a, &b) in row.iter().zip(w.iter()) {
                acc += a * b;
            }
            let point = lam + step * acc;
            if !point.is_finite() {
                return Err(Error::Divergence {
                    iteration: 0,
                    agent: self.id,
                    variable: "lambda",
                });
            }
            *out = loss
                .dual_coordinate_update(point, yi, sigma, n)
                .map_err(|e| Error::Coordinate {
                    coordinate: i,
                    source: Box::new(e),
                })?;
        }
        self.lambda = next;
        let (rows, cols) = x.dim();
        self.flops += (rows * (2 * cols + 2)) as u64;
        Ok(())
    }

    pub(crate) fn accumulate_duals(&mut self) {
        self.ergodic_v_sum += &self.v;
        self.ergodic_lambda_sum += &self.lambda;
    }

    /// First non-finite iterate, if any.
    pub(crate) fn non_finite(&self) -> Option<&'static str> {
        let bad = |a: &Array1<F>| a.iter().any(|x| !x.is_finite());
        if bad(&self.theta) {
            Some("theta")
        } else if bad(&self.v) {
            Some("v")
        } else if bad(&self.lambda) {
            Some("lambda")
        } else {
            None
        }
    }
}
