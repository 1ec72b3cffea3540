//! Communication graphs between agents, their Laplacians, and the spectral
//! constants the step-size rule needs.
//!
//! Agents are indexed from 0 internally; agent 0 is the leader that observes
//! the responses. Text formats (edge-list CSV, reports) use 1-based ids.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;

/// Retries allowed for random families before giving up on connectivity.
pub const MAX_CONNECT_RETRIES: u64 = 100;
/// Largest graph the dense eigensolver is asked to handle.
pub const DENSE_EIGEN_LIMIT: usize = 4096;
pub const DEFAULT_GEOMETRIC_RADIUS: f64 = 0.3;
/// Relative margin applied to the computed eigenvalues.
pub const SPECTRAL_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GraphFamily {
    Complete,
    /// Every agent linked to the leader only.
    Star,
    Path,
    ErdosRenyi { p: f64 },
    /// King's-move square lattice; the leader sits at a center-most site.
    Lattice2d,
    /// Uniform points in the unit square, linked when closer than `radius`.
    Geometric { radius: f64 },
    /// Edge list read from a two-column CSV of 1-based agent ids.
    EdgeList(PathBuf),
}

impl GraphFamily {
    fn is_random(&self) -> bool {
        matches!(self, GraphFamily::ErdosRenyi { .. } | GraphFamily::Geometric { .. })
    }
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphFamily::Complete => write!(f, "complete"),
            GraphFamily::Star => write!(f, "star"),
            GraphFamily::Path => write!(f, "path"),
            GraphFamily::ErdosRenyi { p } => write!(f, "er:{p}"),
            GraphFamily::Lattice2d => write!(f, "lattice2d"),
            GraphFamily::Geometric { radius } => write!(f, "geo:{radius}"),
            GraphFamily::EdgeList(path) => write!(f, "edges:{}", path.display()),
        }
    }
}

impl FromStr for GraphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_num = |arg: &str| {
            arg.parse::<f64>()
                .map_err(|e| Error::param(format!("graph parameter {arg:?}: {e}")))
        };
        match s.split_once(':') {
            None => match s {
                "complete" => Ok(GraphFamily::Complete),
                "star" => Ok(GraphFamily::Star),
                "path" => Ok(GraphFamily::Path),
                "lattice2d" => Ok(GraphFamily::Lattice2d),
                "geo" => Ok(GraphFamily::Geometric {
                    radius: DEFAULT_GEOMETRIC_RADIUS,
                }),
                _ => Err(Error::param(format!("unknown graph family {s:?}"))),
            },
            Some(("er", arg)) => {
                let p = parse_num(arg)?;
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::param(format!("edge probability must lie in (0, 1], got {p}")));
                }
                Ok(GraphFamily::ErdosRenyi { p })
            }
            Some(("geo", arg)) => {
                let radius = parse_num(arg)?;
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::param(format!("radius must be positive, got {radius}")));
                }
                Ok(GraphFamily::Geometric { radius })
            }
            Some(("edges", path)) => Ok(GraphFamily::EdgeList(PathBuf::from(path))),
            _ => Err(Error::param(format!("unknown graph family {s:?}"))),
        }
    }
}

impl TryFrom<String> for GraphFamily {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GraphFamily> for String {
    fn from(g: GraphFamily) -> String {
        g.to_string()
    }
}

/// Connected undirected simple graph over `m` agents. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    m: usize,
    /// Sorted neighbor lists.
    adjacency: Vec<Vec<usize>>,
    pub family: GraphFamily,
    pub seed: u64,
    /// Reseeding attempts needed before a connected sample appeared.
    pub retries: u64,
}

impl NetworkGraph {
    /// Builds a graph from 0-based edges, rejecting loops, duplicates and
    /// disconnected results.
    pub fn from_edges(m: usize, edges: &[(usize, usize)], family: GraphFamily, seed: u64) -> Result<Self> {
        let g = Self::build(m, edges, family, seed)?;
        if !g.is_connected() {
            return Err(Error::Generation(format!("graph over {m} agents is disconnected")));
        }
        Ok(g)
    }

    fn build(m: usize, edges: &[(usize, usize)], family: GraphFamily, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::param("graph needs at least one agent"));
        }
        let mut adjacency = vec![Vec::new(); m];
        for &(a, b) in edges {
            if a >= m || b >= m {
                return Err(Error::param(format!("edge ({a}, {b}) out of range for {m} agents")));
            }
            if a == b {
                return Err(Error::param(format!("self-loop at agent {a}")));
            }
            if adjacency[a].contains(&b) {
                return Err(Error::param(format!("duplicate edge ({a}, {b})")));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
        }
        Ok(Self {
            m,
            adjacency,
            family,
            seed,
            retries: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.adjacency[j]
    }

    pub fn degree(&self, j: usize) -> usize {
        self.adjacency[j].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.m];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs(0).iter().all(Option::is_some)
    }

    /// Longest shortest path, by BFS from every vertex.
    pub fn diameter(&self) -> usize {
        (0..self.m)
            .map(|s| self.bfs(s).into_iter().map(|d| d.unwrap_or(usize::MAX)).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Degree matrix minus adjacency matrix.
    pub fn laplacian<F: Float>(&self) -> Array2<F> {
        let mut l = Array2::zeros((self.m, self.m));
        for (a, nb) in self.adjacency.iter().enumerate() {
            l[[a, a]] = F::cast(nb.len());
            for &b in nb {
                l[[a, b]] = -F::one();
            }
        }
        l
    }

    pub fn spectral_constants(&self) -> Result<SpectralConstants> {
        if self.m > DENSE_EIGEN_LIMIT {
            return Err(Error::Capability(format!(
                "dense eigendecomposition limited to {DENSE_EIGEN_LIMIT} agents, got {}",
                self.m
            )));
        }
        let lap = self.laplacian::<f64>();
        let dense = nalgebra::DMatrix::from_fn(self.m, self.m, |i, j| lap[[i, j]]);
        let mut eig: Vec<f64> = nalgebra::SymmetricEigen::new(dense).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let lambda_max = eig.last().copied().unwrap_or(0.0).max(0.0);
        let (lambda_2, delta) = if self.m > 1 {
            (eig[1], eig[1] * (1.0 - SPECTRAL_MARGIN))
        } else {
            // No consensus constraint: ‖L†‖ = 0 ≤ 1/δ for every δ.
            (f64::INFINITY, f64::INFINITY)
        };
        Ok(SpectralConstants {
            m: self.m,
            delta,
            laplacian_bound: lambda_max * (1.0 + SPECTRAL_MARGIN),
            lambda_2,
            lambda_max,
            max_degree: self.max_degree(),
            diameter: self.diameter(),
            eigenvalues: eig,
        })
    }

    /// `‖L [λ₁ ⋯ λ_m]ᵀ‖_F`, combining each agent's value with its neighbors only.
    pub fn consensus_residual<F: Float>(&self, lambdas: &[Array1<F>]) -> F {
        assert_eq!(lambdas.len(), self.m, "one dual vector per agent");
        let mut total = F::zero();
        for (j, nb) in self.adjacency.iter().enumerate() {
            for (i, &own) in lambdas[j].iter().enumerate() {
                let mut row = F::zero();
                for &k in nb {
                    row += own - lambdas[k][i];
                }
                total += row * row;
            }
        }
        total.sqrt()
    }

    /// Reads a two-column CSV of 1-based agent ids. `m` defaults to the largest id.
    pub fn from_edge_csv(path: &Path, m: Option<usize>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut edges = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::param(format!("edge row needs two columns, got {}", record.len())));
            }
            let parse = |s: &str| -> Result<usize> {
                let id: usize = s.parse().map_err(|e| Error::param(format!("agent id {s:?}: {e}")))?;
                id.checked_sub(1).ok_or_else(|| Error::param("agent ids are 1-based"))
            };
            match (parse(&record[0]), parse(&record[1])) {
                (Ok(a), Ok(b)) => edges.push((a, b)),
                // tolerate a header row
                _ if edges.is_empty() && record[0].parse::<usize>().is_err() => continue,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        let inferred = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(1);
        let m = m.unwrap_or(inferred);
        Self::from_edges(m, &edges, GraphFamily::EdgeList(path.to_path_buf()), 0)
    }

    pub fn write_edge_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (a, b) in self.edges() {
            w.write_record([(a + 1).to_string(), (b + 1).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds a connected graph of the requested family.
///
/// Random families reseed with `seed + attempt` until the sample is connected.
pub fn generate(family: &GraphFamily, m: usize, seed: u64) -> Result<NetworkGraph> {
    if m == 0 {
        return Err(Error::param("graph needs at least one agent"));
    }
    if let GraphFamily::EdgeList(path) = family {
        let g = NetworkGraph::from_edge_csv(path, Some(m))?;
        return Ok(g);
    }
    let attempts = if family.is_random() { MAX_CONNECT_RETRIES } else { 0 };
    for attempt in 0..=attempts {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(attempt));
        let edges = family_edges(family, m, &mut rng)?;
        let mut g = NetworkGraph::build(m, &edges, family.clone(), seed)?;
        if g.is_connected() {
            g.retries = attempt;
            return Ok(g);
        }
    }
    Err(Error::Generation(format!(
        "{family} over {m} agents still disconnected after {MAX_CONNECT_RETRIES} retries"
    )))
}

fn family_edges(family: &GraphFamily, m: usize, rng: &mut ChaCha20Rng) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    match *family {
        GraphFamily::Complete => {
            for a in 0..m {
                for b in a + 1..m {
                    edges.push((a, b));
                }
            }
        }
        GraphFamily::Star => edges.extend((1..m).map(|b| (0, b))),
        GraphFamily::Path => edges.extend((1..m).map(|b| (b - 1, b))),
        GraphFamily::ErdosRenyi { p } => {
            for a in 0..m {
                for b in a + 1..m {
                    if rng.random::<f64>() < p {
                        edges.push((a, b));
                    }
                }
            }
        }
        GraphFamily::Lattice2d => {
            let side = (m as f64).sqrt().round() as usize;
            if side * side != m {
                return Err(Error::param(format!("2D lattice needs a perfect-square agent count, got {m}")));
            }
            // Site (r, c) holds agent r*side + c, except that the leader is
            // swapped onto the center-most site.
            let center = (side - 1) / 2;
            let center_site = center * side + center;
            let agent = |site: usize| match site {
                0 => center_site,
                s if s == center_site => 0,
                s => s,
            };
            for r in 0..side {
                for c in 0..side {
                    for (dr, dc) in [(0isize, 1isize), (1, -1), (1, 0), (1, 1)] {
                        let (r2, c2) = (r as isize + dr, c as isize + dc);
                        if r2 < side as isize && c2 >= 0 && c2 < side as isize {
                            let a = agent(r * side + c);
                            let b = agent(r2 as usize * side + c2 as usize);
                            edges.push((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }
        GraphFamily::Geometric { radius } => {
            let pts: Vec<(f64, f64)> = (0..m).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
            for a in 0..m {
                for b in a + 1..m {
                    let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
                    if (dx * dx + dy * dy).sqrt() < radius {
                        edges.push((a, b));
                    }
                }
            }
        }
        GraphFamily::EdgeList(_) => unreachable!("edge lists are read, not sampled"),
    }
    Ok(edges)
}

/// Laplacian spectrum summary.
///
/// `delta` and `laplacian_bound` are the raw `λ₂` and `λ_max` moved outward by
/// [`SPECTRAL_MARGIN`] so that `‖L†‖ ≤ 1/delta` and `‖L‖ ≤ laplacian_bound`
/// survive rounding. A single agent has no consensus constraint, which is
/// encoded as `delta = ∞` and `laplacian_bound = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConstants {
    pub m: usize,
    pub delta: f64,
    pub laplacian_bound: f64,
    pub lambda_2: f64,
    pub lambda_max: f64,
    pub max_degree: usize,
    pub diameter: usize,
    /// Full ascending spectrum.
    pub eigenvalues: Vec<f64>,
}

impl SpectralConstants {
    /// `2(diam − 1 − ln(m − 1)) / Δ`, a lower bound on `1/λ₂`, when positive.
    pub fn mohar_lower_bound(&self) -> Option<f64> {
        if self.m < 2 || self.max_degree == 0 {
            return None;
        }
        let b = 2.0 * (self.diameter as f64 - 1.0 - ((self.m - 1) as f64).ln()) / self.max_degree as f64;
        (b > 0.0).then_some(b)
    }

    /// `m · diam / 4`, an upper bound on `1/λ₂`.
    pub fn mckay_upper_bound(&self) -> Option<f64> {
        (self.m >= 2).then(|| self.m as f64 * self.diameter as f64 / 4.0)
    }

    /// The conservative spectral-gap choice `4 / (m · diam)`.
    pub fn conservative_delta(&self) -> Option<f64> {
        self.mckay_upper_bound().map(|b| 1.0 / b)
    }

    /// Names of violated structural inequalities (empty when all hold).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m < 2 {
            return out;
        }
        let rel = 1e-9;
        if !(self.lambda_2 > 1e-10) {
            out.push(format!("lambda_2 = {} not positive", self.lambda_2));
        }
        if self.lambda_2 > self.lambda_max * (1.0 + rel) {
            out.push("lambda_2 > lambda_max".into());
        }
        if self.lambda_max > 2.0 * self.max_degree as f64 * (1.0 + rel) {
            out.push(format!("lambda_max = {} exceeds 2*max_degree", self.lambda_max));
        }
        let inv = 1.0 / self.lambda_2;
        if let Some(lb) = self.mohar_lower_bound() {
            if inv < lb * (1.0 - rel) {
                out.push(format!("Mohar: 1/lambda_2 = {inv} < {lb}"));
            }
        }
        if let Some(ub) = self.mckay_upper_bound() {
            if inv > ub * (1.0 + rel) {
                out.push(format!("McKay: 1/lambda_2 = {inv} > {ub}"));
            }
        }
        out
    }
}
