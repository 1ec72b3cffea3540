//! JSON run and experiment configurations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphFamily;
use crate::losses::LossKind;
use crate::regularizers::RegAssignment;
use crate::solver::SolverConfig;

/// Randomness consumers derived from the single top-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedComponent {
    Dataset,
    Graph,
}

/// Deterministic per-component seed (SplitMix64 finalizer over a tagged seed).
pub fn component_seed(seed: u64, component: SeedComponent) -> u64 {
    let tag: u64 = match component {
        SeedComponent::Dataset => 0x6461_7461,
        SeedComponent::Graph => 0x6772_6170,
    };
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A single run: `{n, d, m, graph, loss, reg, T, seed, checkpoint_every, tau?, sigma?, R?, chi?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub graph: GraphFamily,
    pub loss: LossKind,
    #[serde(default)]
    pub reg: RegAssignment,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(default = "default_noise")]
    pub noise: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_noise() -> bool {
    true
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            iterations: self.iterations,
            checkpoint_every: self.checkpoint_every,
            checkpoints: Vec::new(),
            tau: self.tau,
            sigma: self.sigma,
            r: self.r,
            chi: self.chi,
            workers: self.workers,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DatasetSpec {
    Synthetic {
        n: usize,
        d: usize,
        #[serde(default = "default_noise")]
        noise: bool,
    },
    /// Labels in `{−1, +1}` for classification losses.
    SyntheticClassification { n: usize, d: usize },
    File { path: PathBuf },
}

/// A sweep over graph families and agent counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub graphs: Vec<GraphFamily>,
    pub ms: Vec<usize>,
    pub loss: LossKind,
    #[serde(default)]
    pub reg: RegAssignment,
    #[serde(rename = "T")]
    pub iterations: usize,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Every `(graph, m)` cell of the sweep, graphs outermost.
    pub fn cells(&self) -> Vec<(GraphFamily, usize)> {
        self.graphs
            .iter()
            .flat_map(|g| self.ms.iter().map(move |&m| (g.clone(), m)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.graphs.is_empty() || self.ms.is_empty() {
            return Err(Error::param("a sweep needs at least one graph and one agent count"));
        }
        if let Some(&bad) = self.ms.iter().find(|&&m| m == 0) {
            return Err(Error::param(format!("agent count {bad} is not positive")));
        }
        if self.iterations == 0 {
            return Err(Error::param("T must be at least 1"));
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            iterations: self.iterations,
            checkpoint_every: self.checkpoint_every,
            checkpoints: Vec::new(),
            tau: self.tau,
            sigma: self.sigma,
            r: self.r,
            chi: self.chi,
            workers: self.workers,
        }
    }
}
