//! `fdglm`: dataset generation, single runs, graph sweeps and spectral reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fdglm::metrics::{curve_rows, sqrt_lipschitz_min_rounds, write_curve_csv, ReferenceMethod};
use fdglm::{
    baseline_single_agent, component_seed, cost_model, generate, generate_synthetic, generate_synthetic_classification,
    partition_features, reference_optimum, run, theorem_bound, BoundModel, CostModel, Dataset64, DatasetSpec,
    ExperimentConfig, GraphFamily, LossClass, LossKind, NetworkGraph, Problem, RegAssignment, RunConfig, RunResult64,
    SeedComponent, SolverConfig, SpectralConstants, StepSizes, TheoremConstants,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "fdglm", version, about = "Feature-distributed primal-dual GLM solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV plus a JSON provenance sidecar.
    Generate(GenerateArgs),
    /// Run the distributed solver on one graph.
    Run(RunArgs),
    /// Run the single-agent baseline (multipliers frozen at zero).
    Baseline(RunArgs),
    /// Print the spectral report of a communication graph.
    GraphInfo(GraphInfoArgs),
    /// Run every (graph, m) cell of an experiment configuration.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 16384)]
    n: usize,
    #[arg(long, default_value_t = 2048)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add standard normal noise to the responses.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    noise: bool,
    /// Emit labels in {-1, +1} for logistic regression.
    #[arg(long)]
    classification: bool,
    /// Output CSV path; defaults to `dataset.csv` in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "FDGLM_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV to use instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    reg: Option<String>,
    /// Number of rounds, or the work budget with `--work-normalized`.
    #[arg(long = "T", visible_alias = "iterations")]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "R")]
    r: Option<f64>,
    #[arg(long)]
    chi: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    noise: Option<bool>,
    /// Treat T as a budget in single-agent iteration units of work.
    #[arg(long)]
    work_normalized: bool,
    /// Run the single-agent baseline instead of the distributed solver.
    #[arg(long)]
    baseline: bool,
    #[arg(long, env = "FDGLM_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GraphInfoArgs {
    #[arg(long)]
    graph: String,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated graph families overriding the configuration.
    #[arg(long, value_delimiter = ',')]
    graphs: Vec<String>,
    /// Comma-separated agent counts overriding the configuration.
    #[arg(long, value_delimiter = ',')]
    ms: Vec<usize>,
    #[arg(long = "T")]
    iterations: Option<usize>,
    #[arg(long)]
    work_normalized: bool,
    /// Also emit the single-agent baseline curve.
    #[arg(long)]
    with_baseline: bool,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; overrides the configuration and FDGLM_OUT_DIR.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Baseline(args) => cmd_run(RunArgs { baseline: true, ..args }),
        Command::GraphInfo(args) => cmd_graph_info(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let data: Dataset64 = if args.classification {
        generate_synthetic_classification(args.n, args.d, args.seed)?
    } else {
        generate_synthetic(args.n, args.d, args.seed, args.noise)?
    };
    let path = args.out.unwrap_or_else(|| args.out_dir.join("dataset.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    data.save_csv(&path).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

/// Merges the configuration file (if any) and explicit flags into a `RunConfig`.
fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut merged = Map::new();
    for (k, v) in [
        ("n", Value::from(1024)),
        ("d", Value::from(128)),
        ("m", Value::from(4)),
        ("graph", Value::from("complete")),
        ("loss", Value::from("squared")),
        ("T", Value::from(1000)),
        ("seed", Value::from(0)),
    ] {
        merged.insert(k.into(), v);
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Map<String, Value> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merged.extend(file);
    }
    let flags: [(&str, Option<Value>); 15] = [
        ("n", args.n.map(Value::from)),
        ("d", args.d.map(Value::from)),
        ("m", args.m.map(Value::from)),
        ("graph", args.graph.clone().map(Value::from)),
        ("loss", args.loss.clone().map(Value::from)),
        ("reg", args.reg.clone().map(Value::from)),
        ("T", args.iterations.map(Value::from)),
        ("seed", args.seed.map(Value::from)),
        ("checkpoint_every", args.checkpoint_every.map(Value::from)),
        ("tau", args.tau.map(Value::from)),
        ("sigma", args.sigma.map(Value::from)),
        ("R", args.r.map(Value::from)),
        ("chi", args.chi.map(Value::from)),
        ("workers", args.workers.map(Value::from)),
        ("noise", args.noise.map(Value::from)),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            merged.insert(k.into(), v);
        }
    }
    if args.baseline {
        merged.insert("m".into(), Value::from(1));
    }
    serde_json::from_value(Value::Object(merged)).context("invalid run configuration")
}

fn load_or_generate(path: Option<&Path>, n: usize, d: usize, seed: u64, noise: bool, loss: LossKind) -> Result<Dataset64> {
    if let Some(path) = path {
        return Dataset64::load_csv(path).with_context(|| format!("loading {}", path.display()));
    }
    let seed = component_seed(seed, SeedComponent::Dataset);
    Ok(if loss == LossKind::Logistic {
        generate_synthetic_classification(n, d, seed)?
    } else {
        generate_synthetic(n, d, seed, noise)?
    })
}

/// Reference optimum shared by every cell that uses the same data.
struct Reference {
    l_star: f64,
    l0: f64,
    method: ReferenceMethod,
    converged: bool,
}

fn reference(data: &Dataset64, loss: LossKind, reg: &RegAssignment) -> Result<Reference> {
    let r = reference_optimum(data, loss, reg)?;
    let zero = r.theta.mapv(|_| 0.0);
    let l0 = fdglm::objective(data, loss, reg, zero.view())?;
    if !r.converged {
        eprintln!("warning: reference optimum did not converge; using the best value found");
    }
    Ok(Reference {
        l_star: r.value,
        l0,
        method: r.method,
        converged: r.converged,
    })
}

#[derive(Serialize)]
struct BoundReport {
    model: BoundModel,
    value: f64,
    /// `bound − objective(θ̄_T)`; nonnegative whenever the guarantee holds.
    margin: f64,
}

#[derive(Serialize)]
struct Summary {
    graph: String,
    m: usize,
    n: usize,
    d: usize,
    loss: LossKind,
    reg: RegAssignment,
    iterations: usize,
    seed: u64,
    baseline: bool,
    work_normalized: bool,
    final_objective: f64,
    final_log10_rel_err: f64,
    l0: f64,
    l_star: f64,
    reference_method: ReferenceMethod,
    reference_converged: bool,
    theorem_bound: Option<BoundReport>,
    spectral: SpectralConstants,
    step_sizes: StepSizes<f64>,
    constants: Option<TheoremConstants>,
    cost_model: CostModel,
    final_consensus_residual: f64,
    total_floats_sent: u64,
    warnings: Vec<String>,
    /// The objective is `(1/n) Σ ℓ`; with ℓ = ½(u − y)² the residual form
    /// `½‖Xθ − y‖²` is `n` times it, which leaves relative errors unchanged.
    objective_scale: &'static str,
}

struct CellSpec<'a> {
    data: &'a Dataset64,
    reference: &'a Reference,
    family: GraphFamily,
    m: usize,
    loss: LossKind,
    reg: &'a RegAssignment,
    seed: u64,
    solver: SolverConfig,
    baseline: bool,
    work_normalized: bool,
    out_dir: &'a Path,
}

fn cell_label(family: &GraphFamily, m: usize, baseline: bool) -> String {
    if baseline {
        return "baseline".into();
    }
    let name: String = family
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect();
    format!("{name}_m{m}")
}

fn run_cell(spec: CellSpec<'_>) -> Result<Summary> {
    let (n, d) = (spec.data.n(), spec.data.d());
    let graph = if spec.baseline {
        NetworkGraph::from_edges(1, &[], GraphFamily::Complete, 0)?
    } else {
        generate(&spec.family, spec.m, component_seed(spec.seed, SeedComponent::Graph))?
    };
    let spectral = graph.spectral_constants()?;
    let cost = if spec.baseline {
        CostModel {
            ratio: 1.0,
            ..cost_model(n, d, 1, 0)?
        }
    } else {
        cost_model(n, d, graph.m(), graph.max_degree())?
    };
    if cost.uneven {
        eprintln!("warning: {d} features do not split evenly over {} agents; cost model uses ceil(d/m)", graph.m());
    }
    let mut solver = spec.solver.clone();
    if spec.work_normalized {
        solver.iterations = ((solver.iterations as f64 / cost.ratio).floor() as usize).max(1);
    }
    let result: RunResult64 = if spec.baseline {
        baseline_single_agent(spec.data, spec.loss, spec.reg, &solver)?
    } else {
        let partition = partition_features(d, graph.m())?;
        let problem = Problem {
            dataset: spec.data,
            partition: &partition,
            graph: &graph,
            loss: spec.loss,
            reg: spec.reg,
        };
        run(&problem, &solver)?
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }

    let label = cell_label(&spec.family, spec.m, spec.baseline);
    let rows = curve_rows(&result.history, cost.ratio, spec.reference.l0, spec.reference.l_star)?;
    std::fs::create_dir_all(spec.out_dir).with_context(|| format!("creating {}", spec.out_dir.display()))?;
    let curve_path = spec.out_dir.join(format!("curve_{label}.csv"));
    write_curve_csv(&curve_path, &rows).with_context(|| format!("writing {}", curve_path.display()))?;

    let last = result.final_row();
    let theorem = match result.constants {
        Some(c) => bound_report(spec.loss, &c, result.iterations, spec.reference.l_star, last.objective)?,
        None => None,
    };
    let summary = Summary {
        graph: if spec.baseline { "baseline".into() } else { spec.family.to_string() },
        m: graph.m(),
        n,
        d,
        loss: spec.loss,
        reg: spec.reg.clone(),
        iterations: result.iterations,
        seed: spec.seed,
        baseline: spec.baseline,
        work_normalized: spec.work_normalized,
        final_objective: last.objective,
        final_log10_rel_err: rows.last().map(|r| r.log10_rel_err).unwrap_or(0.0),
        l0: spec.reference.l0,
        l_star: spec.reference.l_star,
        reference_method: spec.reference.method,
        reference_converged: spec.reference.converged,
        theorem_bound: theorem,
        spectral,
        step_sizes: result.step_sizes,
        constants: result.constants,
        cost_model: cost,
        final_consensus_residual: last.consensus_residual,
        total_floats_sent: result.floats_sent,
        warnings: result.warnings.clone(),
        objective_scale: "objective = (1/n) sum_i loss_i + r; 0.5*||X theta - y||^2 = n * objective for squared loss",
    };
    let summary_path = spec.out_dir.join(format!("summary_{label}.json"));
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    println!(
        "{label}: T={} objective={:.6e} log10_rel_err={:.3}",
        result.iterations, summary.final_objective, summary.final_log10_rel_err
    );
    Ok(summary)
}

/// The bound matching the loss class, or `None` when it does not apply at `t`.
fn bound_report(loss: LossKind, c: &TheoremConstants, t: usize, l_hat: f64, objective: f64) -> Result<Option<BoundReport>> {
    let report = loss.lipschitz_report();
    let model = match report.class {
        LossClass::Lipschitz | LossClass::Both => BoundModel::Lipschitz,
        LossClass::SqrtLipschitz => BoundModel::SqrtLipschitz,
    };
    if model == BoundModel::SqrtLipschitz && (t as f64) < sqrt_lipschitz_min_rounds(c)? {
        return Ok(None);
    }
    let value = theorem_bound(model, c, t, l_hat)?;
    Ok(Some(BoundReport {
        model,
        value,
        margin: value - objective,
    }))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = resolve_run_config(&args)?;
    let data = load_or_generate(args.dataset.as_deref(), cfg.n, cfg.d, cfg.seed, cfg.noise, cfg.loss)?;
    let reference = reference(&data, cfg.loss, &cfg.reg)?;
    run_cell(CellSpec {
        data: &data,
        reference: &reference,
        family: cfg.graph.clone(),
        m: cfg.m,
        loss: cfg.loss,
        reg: &cfg.reg,
        seed: cfg.seed,
        solver: cfg.solver_config(),
        baseline: args.baseline,
        work_normalized: args.work_normalized,
        out_dir: &args.out_dir,
    })?;
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if !args.graphs.is_empty() {
        cfg.graphs = args.graphs.iter().map(|g| g.parse()).collect::<fdglm::Result<_>>()?;
    }
    if !args.ms.is_empty() {
        cfg.ms = args.ms.clone();
    }
    if let Some(t) = args.iterations {
        cfg.iterations = t;
    }
    if let Some(dir) = args.out_dir.clone().or_else(|| std::env::var_os("FDGLM_OUT_DIR").map(PathBuf::from)) {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    let data = match &cfg.dataset {
        DatasetSpec::Synthetic { n, d, noise } => load_or_generate(None, *n, *d, cfg.seed, *noise, LossKind::Squared)?,
        DatasetSpec::SyntheticClassification { n, d } => load_or_generate(None, *n, *d, cfg.seed, false, LossKind::Logistic)?,
        DatasetSpec::File { path } => load_or_generate(Some(path), 0, 0, cfg.seed, false, cfg.loss)?,
    };
    let reference = reference(&data, cfg.loss, &cfg.reg)?;
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    std::fs::write(cfg.output_dir.join("experiment.json"), serde_json::to_string_pretty(&cfg)?)?;

    let mut cells: Vec<(GraphFamily, usize, bool)> = cfg.cells().into_iter().map(|(g, m)| (g, m, false)).collect();
    if args.with_baseline {
        cells.push((GraphFamily::Complete, 1, true));
    }
    let run_one = |(family, m, baseline): &(GraphFamily, usize, bool)| {
        run_cell(CellSpec {
            data: &data,
            reference: &reference,
            family: family.clone(),
            m: *m,
            loss: cfg.loss,
            reg: &cfg.reg,
            seed: cfg.seed,
            solver: cfg.solver_config(),
            baseline: *baseline,
            work_normalized: args.work_normalized,
            out_dir: &cfg.output_dir,
        })
        .with_context(|| format!("cell {} m={m}", family))
    };
    let results: Vec<Result<Summary>> = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build()?;
        pool.install(|| cells.par_iter().map(run_one).collect())
    } else {
        cells.iter().map(run_one).collect()
    };
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    std::fs::write(cfg.output_dir.join("sweep_summary.json"), serde_json::to_string_pretty(&summaries)?)?;
    Ok(())
}

#[derive(Serialize)]
struct GraphReport {
    family: String,
    m: usize,
    edges: usize,
    max_degree: usize,
    diameter: usize,
    lambda_2: f64,
    lambda_max: f64,
    mohar_lower_bound: Option<f64>,
    mckay_upper_bound: Option<f64>,
    /// `1/λ₂ − Mohar bound`
    mohar_slack: Option<f64>,
    /// `McKay bound − 1/λ₂`
    mckay_slack: Option<f64>,
    reseeds: u64,
}

fn cmd_graph_info(args: GraphInfoArgs) -> Result<()> {
    let family: GraphFamily = args.graph.parse()?;
    let graph = match (&family, args.m) {
        (_, Some(m)) => generate(&family, m, args.seed)?,
        (GraphFamily::EdgeList(path), None) => NetworkGraph::from_edge_csv(path, None)?,
        (_, None) => bail!("--m is required for generated graph families"),
    };
    let s = graph.spectral_constants()?;
    let inv = 1.0 / s.lambda_2;
    let report = GraphReport {
        family: family.to_string(),
        m: graph.m(),
        edges: graph.edge_count(),
        max_degree: s.max_degree,
        diameter: s.diameter,
        lambda_2: s.lambda_2,
        lambda_max: s.lambda_max,
        mohar_lower_bound: s.mohar_lower_bound(),
        mckay_upper_bound: s.mckay_upper_bound(),
        mohar_slack: s.mohar_lower_bound().map(|b| inv - b),
        mckay_slack: s.mckay_upper_bound().map(|b| b - inv),
        reseeds: graph.retries,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.10}"));
    println!("family      {}", report.family);
    println!("m           {}", report.m);
    println!("edges       {}", report.edges);
    println!("max_degree  {}", report.max_degree);
    println!("diameter    {}", report.diameter);
    println!("lambda_2    {:.10}", report.lambda_2);
    println!("lambda_max  {:.10}", report.lambda_max);
    println!("mohar_lb    {}  (slack {})", opt(report.mohar_lower_bound), opt(report.mohar_slack));
    println!("mckay_ub    {}  (slack {})", opt(report.mckay_upper_bound), opt(report.mckay_slack));
    Ok(())
}
