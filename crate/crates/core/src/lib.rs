//! Feature-distributed primal-dual solver for regularized generalized linear
//! model ERM.
//!
//! The features of every sample are split across `m` agents connected by an
//! undirected graph. Agent 0 alone observes the responses. The agents run
//! synchronous Chambolle–Pock rounds, exchanging only `n`-vectors with their
//! neighbors, and the ergodic average of their primal blocks converges to a
//! minimizer of `(1/n) Σ ℓ(x_iᵀθ, y_i) + Σ_j r_j(θ_j)`.
//!
//! ```
//! use fdglm::{generate, partition_features, run, Dataset64, GraphFamily, LossKind, Problem,
//!     RegAssignment, SolverConfig};
//!
//! let data: Dataset64 = fdglm::generate_synthetic(64, 8, 1, true).unwrap();
//! let partition = partition_features(8, 4).unwrap();
//! let graph = generate(&GraphFamily::Complete, 4, 1).unwrap();
//! let reg = RegAssignment::default();
//! let problem = Problem { dataset: &data, partition: &partition, graph: &graph,
//!     loss: LossKind::Squared, reg: &reg };
//! let result = run(&problem, &SolverConfig::new(200)).unwrap();
//! assert!(result.final_row().objective < result.history[0].objective);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod float;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod regularizers;
pub mod solver;

pub use config::{component_seed, DatasetSpec, ExperimentConfig, RunConfig, SeedComponent};
pub use data::{
    estimate_r, generate_synthetic, generate_synthetic_classification, operator_norm, partition_features, Dataset,
    FeaturePartition, LabelMode, OperatorNorm, Provenance, RadiusEstimate,
};
pub use error::{Error, Result};
pub use float::Float;
pub use graph::{generate, GraphFamily, NetworkGraph, SpectralConstants};
pub use losses::{LipschitzReport, LossClass, LossKind};
pub use metrics::{
    cost_model, cost_model_with, objective, reference_optimum, relative_error_curve, theorem_bound, BoundModel,
    CostModel, CurveRow, ReferenceOptimum, RelativeErrorCurve,
};
pub use regularizers::{RegAssignment, RegKind};
pub use solver::{
    baseline_single_agent, run, run_with_observer, step_sizes_from_theorem, AgentState, HistoryRow, Problem,
    RunResult, SolverConfig, StepSizes, TheoremConstants,
};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type RunResult64 = RunResult<f64>;
pub type RunResult32 = RunResult<f32>;
pub type AgentState64 = AgentState<f64>;
pub type StepSizes64 = StepSizes<f64>;
pub type ReferenceOptimum64 = ReferenceOptimum<f64>;
pub type Problem64<'a> = Problem<'a, f64>;
