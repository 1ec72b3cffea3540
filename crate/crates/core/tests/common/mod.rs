#![allow(dead_code)]

use fdglm::{Dataset, FeaturePartition, GraphFamily, LossKind, NetworkGraph, RegAssignment, RegKind};
use ndarray::{s, Array1, Array2};

/// Derivative of the convex conjugate `ℓ*(·, y)` on the interior of its domain,
/// together with that domain.
fn conjugate_derivative(loss: LossKind, lambda: f64, y: f64) -> f64 {
    match loss {
        LossKind::Squared | LossKind::Huber { .. } => lambda + y,
        LossKind::Absolute => y,
        LossKind::Logistic => {
            let p = -y * lambda;
            -y * (p / (1.0 - p)).ln()
        }
    }
}

fn conjugate_domain(loss: LossKind, y: f64) -> (f64, f64, bool) {
    match loss {
        LossKind::Squared => (-1e300, 1e300, false),
        LossKind::Absolute => (-1.0, 1.0, true),
        LossKind::Huber { kappa } => (-kappa, kappa, true),
        LossKind::Logistic => {
            let (a, b) = if y > 0.0 { (-1.0, 0.0) } else { (0.0, 1.0) };
            (a, b, false)
        }
    }
}

/// `argmin_λ (σ/n) ℓ*(λ, y) + ½(λ − a)²` by bisection on the conjugate's
/// optimality condition.
pub fn conjugate_prox(loss: LossKind, a: f64, y: f64, sigma: f64, n: usize) -> f64 {
    let c = sigma / n as f64;
    let (mut lo, mut hi, closed) = conjugate_domain(loss, y);
    let g = |l: f64| c * conjugate_derivative(loss, l, y) + l - a;
    if closed {
        if g(lo) >= 0.0 {
            return lo;
        }
        if g(hi) <= 0.0 {
            return hi;
        }
    }
    if matches!(loss, LossKind::Squared) {
        lo = -1.0;
        hi = 1.0;
        while g(lo) > 0.0 {
            lo *= 2.0;
        }
        while g(hi) < 0.0 {
            hi *= 2.0;
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn prox_reg(kind: RegKind, x: f64, tau: f64) -> f64 {
    match kind {
        RegKind::Zero => x,
        RegKind::L1 { weight } => soft_threshold(x, tau * weight),
        RegKind::SquaredL2 { mu } => x / (1.0 + tau * mu),
    }
}

/// Whole-system Chambolle–Pock on `z = [θ; v_1 … v_m]`, `λ = [λ_1 … λ_m]` with
/// the explicit operator `K = (1/n)[blockdiag(X_j) | L ⊗ I_n]`.
pub struct DenseReference {
    pub k: Array2<f64>,
    pub z: Array1<f64>,
    pub lambda: Array1<f64>,
    n: usize,
    d: usize,
    m: usize,
    tau: f64,
    sigma: f64,
    loss: LossKind,
    regs: Vec<RegKind>,
    y: Array1<f64>,
}

impl DenseReference {
    pub fn new(
        dataset: &Dataset<f64>,
        partition: &FeaturePartition,
        graph: &NetworkGraph,
        loss: LossKind,
        reg: &RegAssignment,
        tau: f64,
        sigma: f64,
    ) -> Self {
        let (n, d, m) = (dataset.n(), dataset.d(), graph.m());
        let lap = graph.laplacian::<f64>();
        let mut k = Array2::zeros((m * n, d + m * n));
        for (j, block) in partition.blocks().iter().enumerate() {
            for i in 0..n {
                for c in block.clone() {
                    k[[j * n + i, c]] = dataset.x()[[i, c]];
                }
                for l in 0..m {
                    k[[j * n + i, d + l * n + i]] = lap[[j, l]];
                }
            }
        }
        k.mapv_inplace(|v| v / n as f64);
        let mut regs = Vec::with_capacity(d);
        for (j, block) in partition.blocks().iter().enumerate() {
            regs.extend(std::iter::repeat_n(reg.for_agent(j), block.len()));
        }
        Self {
            k,
            z: Array1::zeros(d + m * n),
            lambda: Array1::zeros(m * n),
            n,
            d,
            m,
            tau,
            sigma,
            loss,
            regs,
            y: dataset.y().to_owned(),
        }
    }

    pub fn step(&mut self) {
        let grad = self.k.t().dot(&self.lambda);
        let mut next = &self.z - &(&grad * self.tau);
        for c in 0..self.d {
            next[c] = prox_reg(self.regs[c], next[c], self.tau);
        }
        let extrapolated = &next * 2.0 - &self.z;
        let mut lambda = &self.lambda + &(self.k.dot(&extrapolated) * self.sigma);
        for i in 0..self.n {
            lambda[i] = conjugate_prox(self.loss, lambda[i], self.y[i], self.sigma, self.n);
        }
        self.z = next;
        self.lambda = lambda;
    }

    pub fn theta(&self) -> Array1<f64> {
        self.z.slice(s![..self.d]).to_owned()
    }

    pub fn v(&self, j: usize) -> Array1<f64> {
        self.z.slice(s![self.d + j * self.n..self.d + (j + 1) * self.n]).to_owned()
    }

    pub fn lambda_of(&self, j: usize) -> Array1<f64> {
        self.lambda.slice(s![j * self.n..(j + 1) * self.n]).to_owned()
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

pub fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small random dataset; classification labels when `logistic`.
pub fn small_dataset(n: usize, d: usize, seed: u64, logistic: bool) -> Dataset<f64> {
    if logistic {
        fdglm::generate_synthetic_classification(n, d, seed).unwrap()
    } else {
        fdglm::generate_synthetic(n, d, seed, true).unwrap()
    }
}

pub fn graph(family: GraphFamily, m: usize) -> NetworkGraph {
    fdglm::generate(&family, m, 0).unwrap()
}

/// Theorem step sizes for `R = 1`, computed outside the engine.
pub fn theorem_steps(dataset: &Dataset<f64>, graph: &NetworkGraph, loss: LossKind) -> (f64, f64) {
    let spectral = graph.spectral_constants().unwrap();
    let c = fdglm::TheoremConstants {
        r: 1.0,
        chi: fdglm::operator_norm(dataset.x()).chi,
        delta: spectral.delta,
        laplacian_bound: spectral.laplacian_bound,
        rho: loss.lipschitz_report().step_rho(),
        m: graph.m(),
        n: dataset.n(),
    };
    let s = fdglm::step_sizes_from_theorem::<f64>(&c).unwrap();
    (s.tau, s.sigma)
}

/// Largest per-iterate deviation between the distributed engine and the dense
/// reference over `rounds` rounds.
pub fn engine_vs_dense(
    dataset: &Dataset<f64>,
    graph: &NetworkGraph,
    loss: LossKind,
    reg: &RegAssignment,
    rounds: usize,
) -> f64 {
    let m = graph.m();
    let partition = fdglm::partition_features(dataset.d(), m).unwrap();
    let (tau, sigma) = theorem_steps(dataset, graph, loss);
    let mut dense = DenseReference::new(dataset, &partition, graph, loss, reg, tau, sigma);
    let problem = fdglm::Problem {
        dataset,
        partition: &partition,
        graph,
        loss,
        reg,
    };
    let config = fdglm::SolverConfig {
        tau: Some(tau),
        sigma: Some(sigma),
        ..fdglm::SolverConfig::new(rounds)
    };
    let mut worst: f64 = 0.0;
    fdglm::run_with_observer(&problem, &config, |_, agents| {
        dense.step();
        let parts: Vec<Array1<f64>> = agents.iter().map(|a| a.theta.clone()).collect();
        worst = worst.max(max_abs_diff(&partition.concat(&parts), &dense.theta()));
        for (j, a) in agents.iter().enumerate() {
            worst = worst.max(max_abs_diff(&a.v, &dense.v(j)));
            worst = worst.max(max_abs_diff(&a.lambda, &dense.lambda_of(j)));
        }
    })
    .unwrap();
    worst
}
