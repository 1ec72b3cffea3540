use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{AgentState, Message, MessageKind};
use super::{step_sizes_from_theorem, StepSizes, TheoremConstants};
use crate::data::{estimate_r, operator_norm, partition_features, Dataset, FeaturePartition};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{GraphFamily, NetworkGraph};
use crate::losses::LossKind;
use crate::metrics;
use crate::regularizers::RegAssignment;

/// Everything a run reads but never mutates.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a, F> {
    pub dataset: &'a Dataset<F>,
    pub partition: &'a FeaturePartition,
    pub graph: &'a NetworkGraph,
    pub loss: LossKind,
    pub reg: &'a RegAssignment,
}

impl<F: Float> Problem<'_, F> {
    fn check(&self) -> Result<()> {
        if self.graph.m() != self.partition.m() {
            return Err(Error::param(format!(
                "graph has {} agents but the partition has {} blocks",
                self.graph.m(),
                self.partition.m()
            )));
        }
        if self.partition.d() != self.dataset.d() {
            return Err(Error::param(format!(
                "partition covers {} features, dataset has {}",
                self.partition.d(),
                self.dataset.d()
            )));
        }
        self.reg.check(self.partition.m())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of rounds `T`.
    pub iterations: usize,
    /// Record a history row every this many rounds.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Additional rounds at which to record a history row.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Minimizer radius used by the step-size rule; estimated when absent.
    #[serde(default)]
    pub r: Option<f64>,
    /// Design-norm bound; computed by power iteration when absent.
    #[serde(default)]
    pub chi: Option<f64>,
    /// Worker threads used inside each phase.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl SolverConfig {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            checkpoint_every: None,
            checkpoints: Vec::new(),
            tau: None,
            sigma: None,
            r: None,
            chi: None,
            workers: 1,
        }
    }

    /// Rounds at which history is recorded: 0, every checkpoint and `T`.
    pub fn checkpoint_set(&self) -> BTreeSet<usize> {
        let t = self.iterations;
        let mut set: BTreeSet<usize> = self.checkpoints.iter().copied().filter(|&c| c <= t).collect();
        if let Some(every) = self.checkpoint_every.filter(|&e| e > 0) {
            set.extend((every..=t).step_by(every));
        }
        set.insert(0);
        set.insert(t);
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub t: usize,
    /// Objective at the ergodic average `θ̄_t` (at `θ = 0` for `t = 0`).
    pub objective: f64,
    pub objective_last: f64,
    pub consensus_residual: f64,
    /// Cumulative FLOPs of the busiest agent.
    pub cum_flops: u64,
    pub cum_floats_sent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult<F> {
    pub history: Vec<HistoryRow>,
    /// Ergodic average over the rounds performed.
    pub theta_bar: Array1<F>,
    pub theta_last: Array1<F>,
    pub iterations: usize,
    pub step_sizes: StepSizes<F>,
    /// Present whenever the step-size rule's constants were all known.
    pub constants: Option<TheoremConstants>,
    pub agent_flops: Vec<u64>,
    pub floats_sent: u64,
    pub warnings: Vec<String>,
    pub config: SolverConfig,
}

impl<F: Float> RunResult<F> {
    pub fn final_row(&self) -> &HistoryRow {
        self.history.last().expect("history always holds t = 0")
    }
}

pub fn run<F: Float>(problem: &Problem<'_, F>, config: &SolverConfig) -> Result<RunResult<F>> {
    run_with_observer(problem, config, |_, _| {})
}

/// As [`run`], calling `observer(t, agents)` after every round `t ≥ 1`.
pub fn run_with_observer<F: Float>(
    problem: &Problem<'_, F>,
    config: &SolverConfig,
    mut observer: impl FnMut(usize, &[AgentState<F>]),
) -> Result<RunResult<F>> {
    execute(problem, config, false, |t, agents| {
        observer(t, agents);
        true
    })
}

/// Single-agent iteration with the multiplier block frozen at zero and no
/// communication.
pub fn baseline_single_agent<F: Float>(
    dataset: &Dataset<F>,
    loss: LossKind,
    reg: &RegAssignment,
    config: &SolverConfig,
) -> Result<RunResult<F>> {
    let (partition, graph, reg) = singleton(dataset, reg)?;
    let problem = Problem {
        dataset,
        partition: &partition,
        graph: &graph,
        loss,
        reg: &reg,
    };
    execute(&problem, config, true, |_, _| true)
}

/// Baseline run that stops early once `keep_going` returns false.
pub(crate) fn baseline_until<F: Float>(
    dataset: &Dataset<F>,
    loss: LossKind,
    reg: &RegAssignment,
    config: &SolverConfig,
    keep_going: impl FnMut(usize, &[AgentState<F>]) -> bool,
) -> Result<RunResult<F>> {
    let (partition, graph, reg) = singleton(dataset, reg)?;
    let problem = Problem {
        dataset,
        partition: &partition,
        graph: &graph,
        loss,
        reg: &reg,
    };
    execute(&problem, config, true, keep_going)
}

fn singleton<F: Float>(dataset: &Dataset<F>, reg: &RegAssignment) -> Result<(FeaturePartition, NetworkGraph, RegAssignment)> {
    let partition = partition_features(dataset.d(), 1)?;
    let graph = NetworkGraph::from_edges(1, &[], GraphFamily::Complete, 0)?;
    let reg = if reg.is_uniform() {
        RegAssignment::Uniform(reg.for_agent(0))
    } else {
        return Err(Error::param("the single-agent baseline needs one regularizer for all features"));
    };
    Ok((partition, graph, reg))
}

struct Resolved<F> {
    steps: StepSizes<F>,
    constants: Option<TheoremConstants>,
    warnings: Vec<String>,
}

fn resolve_step_sizes<F: Float>(problem: &Problem<'_, F>, config: &SolverConfig) -> Result<Resolved<F>> {
    let mut warnings = Vec::new();
    let n = problem.dataset.n();
    let chi = match config.chi {
        Some(c) => c,
        None => {
            let norm = operator_norm(problem.dataset.x());
            if !norm.converged {
                warnings.push(format!("power iteration stopped after {} iterations", norm.iterations));
            }
            norm.chi.to_f64_lossy()
        }
    };
    let spectral = problem.graph.spectral_constants()?;
    let rho = problem.loss.lipschitz_report().step_rho();
    let constants_with = |r: f64| TheoremConstants {
        r,
        chi,
        delta: spectral.delta,
        laplacian_bound: spectral.laplacian_bound,
        rho,
        m: problem.graph.m(),
        n,
    };
    match (config.tau, config.sigma) {
        (Some(tau), Some(sigma)) => {
            if !(tau > 0.0 && sigma > 0.0 && tau.is_finite() && sigma.is_finite()) {
                return Err(Error::param(format!("step sizes must be positive, got tau={tau}, sigma={sigma}")));
            }
            let steps = StepSizes {
                tau: F::cast(tau),
                sigma: F::cast(sigma),
            };
            let product = steps.coupling_product(chi, spectral.laplacian_bound, n);
            if product > 1.0 + 1e-12 {
                warnings.push(format!("tau*sigma*((chi+D)/n)^2 = {product} exceeds 1"));
            }
            let constants = config.r.map(constants_with).filter(|c| c.validate().is_ok());
            Ok(Resolved {
                steps,
                constants,
                warnings,
            })
        }
        (None, None) => {
            let r = match config.r {
                Some(r) => r,
                None => {
                    let est = estimate_r(problem.dataset, problem.loss, problem.reg)?;
                    warnings.push(format!("R = {} is a heuristic estimate", est.r.to_f64_lossy()));
                    est.r.to_f64_lossy()
                }
            };
            let constants = constants_with(r);
            let steps = step_sizes_from_theorem(&constants)?;
            Ok(Resolved {
                steps,
                constants: Some(constants),
                warnings,
            })
        }
        _ => Err(Error::param("tau and sigma must be overridden together")),
    }
}

fn execute<F: Float>(
    problem: &Problem<'_, F>,
    config: &SolverConfig,
    freeze_v: bool,
    mut keep_going: impl FnMut(usize, &[AgentState<F>]) -> bool,
) -> Result<RunResult<F>> {
    if config.iterations < 1 {
        return Err(Error::param("the ergodic average needs T >= 1"));
    }
    problem.check()?;
    let Resolved {
        steps,
        constants,
        warnings,
    } = resolve_step_sizes(problem, config)?;
    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::param(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };

    let n = problem.dataset.n();
    let m = problem.graph.m();
    let designs = problem.partition.local_designs(problem.dataset.x());
    let y = problem.dataset.y();
    let (tau, sigma) = (steps.tau, steps.sigma);
    let mut agents: Vec<AgentState<F>> = (0..m)
        .map(|j| AgentState::new(j, problem.graph.neighbors(j), designs[j].ncols(), n))
        .collect();

    let checkpoints = config.checkpoint_set();
    let mut history = Vec::with_capacity(checkpoints.len());
    let zero = Array1::zeros(problem.dataset.d());
    let l0 = metrics::objective(problem.dataset, problem.loss, problem.reg, zero.view())?.to_f64_lossy();
    history.push(HistoryRow {
        t: 0,
        objective: l0,
        objective_last: l0,
        consensus_residual: 0.0,
        cum_flops: 0,
        cum_floats_sent: 0,
    });

    let mut floats_sent: u64 = 0;
    let mut performed = 0;
    for t in 1..=config.iterations {
        // Phase A: primal updates from round-t state.
        phase(pool.as_ref(), &mut agents, |agent| {
            let j = agent.id;
            agent.primal_update_theta(designs[j].view(), problem.reg.for_agent(j), tau, n);
            if !freeze_v {
                agent.primal_update_v(tau, n)?;
            }
            Ok(())
        })
        .map_err(|e| at_iteration(e, t))?;
        check_finite(&agents, t)?;

        // Phase B: extrapolated multipliers to neighbors.
        if !freeze_v {
            floats_sent += exchange(&mut agents, MessageKind::ExtrapolatedV)?;
        }

        // Phase C: dual updates.
        phase(pool.as_ref(), &mut agents, |agent| {
            let j = agent.id;
            if freeze_v {
                agent.dual_update_baseline(designs[j].view(), y, problem.loss, sigma, n)?;
            } else if j == 0 {
                agent.dual_update_leader(designs[j].view(), y, problem.loss, sigma, n)?;
            } else {
                agent.dual_update_follower(designs[j].view(), sigma, n)?;
            }
            agent.accumulate_duals();
            Ok(())
        })
        .map_err(|e| at_iteration(e, t))?;
        check_finite(&agents, t)?;

        if !freeze_v {
            floats_sent += exchange(&mut agents, MessageKind::Lambda)?;
        }
        performed = t;

        let stop = !keep_going(t, &agents);
        if checkpoints.contains(&t) || stop {
            history.push(record(problem, &agents, t, floats_sent)?);
        }
        if stop {
            break;
        }
    }

    let scale = F::cast(performed).recip();
    let sums: Vec<Array1<F>> = agents.iter().map(|a| &a.ergodic_theta_sum * scale).collect();
    let lasts: Vec<Array1<F>> = agents.iter().map(|a| a.theta.clone()).collect();
    Ok(RunResult {
        history,
        theta_bar: problem.partition.concat(&sums),
        theta_last: problem.partition.concat(&lasts),
        iterations: performed,
        step_sizes: steps,
        constants,
        agent_flops: agents.iter().map(|a| a.flops).collect(),
        floats_sent,
        warnings,
        config: config.clone(),
    })
}

/// Runs `f` on every agent, sequentially or on the pool, returning the error
/// of the lowest-indexed failing agent.
fn phase<F: Float>(
    pool: Option<&rayon::ThreadPool>,
    agents: &mut [AgentState<F>],
    f: impl Fn(&mut AgentState<F>) -> Result<()> + Sync,
) -> Result<()> {
    let results: Vec<Result<()>> = match pool {
        Some(pool) => pool.install(|| agents.par_iter_mut().map(&f).collect()),
        None => agents.iter_mut().map(&f).collect(),
    };
    results.into_iter().collect()
}

/// Delivers each agent's outgoing vector to all its neighbors; returns the
/// number of floats sent.
fn exchange<F: Float>(agents: &mut [AgentState<F>], kind: MessageKind) -> Result<u64> {
    let mut outgoing = Vec::new();
    for agent in agents.iter() {
        let payload = Arc::new(match kind {
            MessageKind::Lambda => agent.lambda.clone(),
            MessageKind::ExtrapolatedV => agent.v_extrapolated.clone(),
        });
        for &k in &agent.neighbors {
            outgoing.push((
                k,
                Message {
                    from: agent.id,
                    kind,
                    payload: Arc::clone(&payload),
                },
            ));
        }
    }
    let mut sent = 0;
    for (to, msg) in outgoing {
        sent += msg.payload.len() as u64;
        agents[to].inbox.deliver(msg)?;
    }
    Ok(sent)
}

fn check_finite<F: Float>(agents: &[AgentState<F>], iteration: usize) -> Result<()> {
    for agent in agents {
        if let Some(variable) = agent.non_finite() {
            return Err(Error::Divergence {
                iteration,
                agent: agent.id,
                variable,
            });
        }
    }
    Ok(())
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Divergence { agent, variable, .. } => Error::Divergence {
            iteration,
            agent,
            variable,
        },
        other => other,
    }
}

fn record<F: Float>(problem: &Problem<'_, F>, agents: &[AgentState<F>], t: usize, floats_sent: u64) -> Result<HistoryRow> {
    let scale = F::cast(t).recip();
    let bar: Vec<Array1<F>> = agents.iter().map(|a| &a.ergodic_theta_sum * scale).collect();
    let last: Vec<Array1<F>> = agents.iter().map(|a| a.theta.clone()).collect();
    let objective = metrics::objective(problem.dataset, problem.loss, problem.reg, problem.partition.concat(&bar).view())?;
    let objective_last =
        metrics::objective(problem.dataset, problem.loss, problem.reg, problem.partition.concat(&last).view())?;
    let lambdas: Vec<Array1<F>> = agents.iter().map(|a| a.lambda.clone()).collect();
    Ok(HistoryRow {
        t,
        objective: objective.to_f64_lossy(),
        objective_last: objective_last.to_f64_lossy(),
        consensus_residual: problem.graph.consensus_residual(&lambdas).to_f64_lossy(),
        cum_flops: agents.iter().map(|a| a.flops).max().unwrap_or(0),
        cum_floats_sent: floats_sent,
    })
}
