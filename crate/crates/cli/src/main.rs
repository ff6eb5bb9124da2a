//! `topbft`: generate topologies, optimize committee configurations,
//! simulate them and run the experiment sweeps.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 infeasible, 3 solver
//! timeout without an incumbent.

mod experiment;
mod faults;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use topbft_core::cco::{
    brute_force, check_constraints, evaluate, reoptimize_fallback, solve_exact, solve_heuristic, CcoError,
    Configuration, SolutionFile, SolveLimits,
};
use topbft_core::model::{Instance, Micros, ModelError, NodeId};
use topbft_core::sim::{self, Arrival, SimError, SimOptions, Target, VerifierService, Workload};
use topbft_core::topology::{generate, TopologyKind, TopologySpec};

/// Failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Infeasible(String),
    Timeout(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Infeasible(_) => 2,
            Failure::Timeout(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Infeasible(m) | Failure::Timeout(m) => m,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<CcoError> for Failure {
    fn from(e: CcoError) -> Self {
        match e {
            CcoError::Infeasible(_) | CcoError::Violations(_) => Failure::Infeasible(e.to_string()),
            CcoError::Timeout => Failure::Timeout(e.to_string()),
            CcoError::TooLarge { .. } => Failure::Usage(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Cco(c) => c.into(),
            SimError::Infeasible(_) => Failure::Infeasible(e.to_string()),
            SimError::FaultPlan(_) | SimError::Workload(_) => Failure::Usage(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "topbft", version, about = "Committee configuration optimizer and TopBFT simulator")]
struct Cli {
    /// Worker threads for sweeps and repeated runs (default: all cores).
    #[arg(long, global = true, env = "TOPBFT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instance as JSON.
    GenTopology(GenArgs),
    /// Solve for a committee configuration.
    Optimize(OptimizeArgs),
    /// Simulate a configuration and export per-transaction results.
    Simulate(SimulateArgs),
    /// Run a parameter sweep and write CSV tables.
    Experiment(experiment::ExperimentArgs),
    /// Check a configuration against an instance.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Uniform,
    Clustered,
    Lognormal,
}

#[derive(Args, Clone, Debug)]
pub struct TopologyArgs {
    #[arg(long, value_enum, default_value = "clustered")]
    pub kind: Kind,
    /// Pairwise one-way delay of the uniform kind.
    #[arg(long, default_value_t = 1.0)]
    pub delay_ms: f64,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub intra_ms: f64,
    #[arg(long, default_value_t = 5.0)]
    pub inter_ms: f64,
    /// Log-normal location, in log-milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Tolerated faults per committee.
    #[arg(short, long, default_value_t = 1)]
    pub f: usize,
    /// One-way delay between every node and the verification site.
    #[arg(long)]
    pub verifier_ms: Option<f64>,
    #[arg(long)]
    pub verification_members: Option<usize>,
}

impl TopologyArgs {
    pub fn kind(&self) -> TopologyKind {
        match self.kind {
            Kind::Uniform => TopologyKind::Uniform { delay_ms: self.delay_ms },
            Kind::Clustered => {
                TopologyKind::Clustered { clusters: self.clusters, intra_ms: self.intra_ms, inter_ms: self.inter_ms }
            }
            Kind::Lognormal => TopologyKind::Lognormal { mu: self.mu, sigma: self.sigma },
        }
    }

    pub fn generate(&self, nodes: usize, seed: u64) -> Result<Instance, Failure> {
        let mut spec = TopologySpec::new(self.kind(), nodes, self.f, seed);
        if let Some(v) = self.verifier_ms {
            spec.verifier_ms = v;
        }
        if let Some(m) = self.verification_members {
            spec.verification_members = m;
        }
        generate(&spec).map_err(|e| Failure::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    topology: TopologyArgs,
    #[arg(short, long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Solver {
    /// Exact up to the node cap, heuristic beyond.
    Auto,
    Exact,
    Heuristic,
    Brute,
}

#[derive(Args, Clone)]
struct SolveArgs {
    #[arg(long, value_enum, default_value = "auto")]
    solver: Solver,
    /// Exact solver time budget, seconds.
    #[arg(long, default_value_t = 60.0)]
    time_budget: f64,
    /// Fail with exit code 3 instead of returning an unproven incumbent.
    #[arg(long)]
    require_optimal: bool,
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    /// Heuristic seed.
    #[arg(long = "solver-seed", default_value_t = 0)]
    solver_seed: u64,
}

impl SolveArgs {
    fn limits(&self) -> Result<SolveLimits, Failure> {
        let time_budget = Duration::try_from_secs_f64(self.time_budget)
            .map_err(|e| Failure::Usage(format!("time budget {}: {e}", self.time_budget)))?;
        Ok(SolveLimits {
            time_budget,
            optimality_required: self.require_optimal,
            heuristic_seed: self.solver_seed,
            heuristic_iterations: self.iterations,
            ..SolveLimits::default()
        })
    }

    fn solve(&self, inst: &Instance) -> Result<topbft_core::cco::Solution, Failure> {
        let limits = self.limits()?;
        let sol = match self.solver {
            Solver::Auto => sim::solve(inst, &limits)?,
            Solver::Exact => solve_exact(inst, &limits)?,
            Solver::Heuristic => solve_heuristic(inst, limits.heuristic_seed, limits.heuristic_iterations)?,
            Solver::Brute => brute_force(inst)?,
        };
        Ok(sol)
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(short, long)]
    instance: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
    /// Nodes whose TEE has failed, comma separated.
    #[arg(long, value_delimiter = ',')]
    failed: Vec<usize>,
    /// Re-optimize from this configuration after the `--failed` TEE failures.
    #[arg(long, requires = "failed")]
    previous: Option<PathBuf>,
    /// With `--previous`, keep committee membership fixed.
    #[arg(long, requires = "previous")]
    keep_membership: bool,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(short, long)]
    instance: PathBuf,
    /// Configuration file; solved on the fly when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long, default_value_t = 100)]
    requests: u64,
    #[arg(long, default_value_t = 0)]
    payload: u64,
    /// Open Poisson arrivals at this many requests per second instead of a
    /// closed loop.
    #[arg(long)]
    poisson_rate: Option<f64>,
    /// Send every request to the committee at this index.
    #[arg(long)]
    pinned: Option<usize>,
    #[command(flatten)]
    faults: faults::FaultArgs,
    /// Run every committee in fallback from the start.
    #[arg(long)]
    global_fallback: bool,
    /// Do not re-optimize after TEE failures.
    #[arg(long)]
    no_adaptive: bool,
    #[arg(long, default_value_t = 1_000_000_000)]
    bandwidth_bps: u64,
    #[arg(long, default_value_t = 0.0)]
    client_delay_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 10)]
    stall_factor: u64,
    /// Largest number of transactions per verification block.
    #[arg(long)]
    block_capacity: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    min_block_interval_ms: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-transaction CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Summary JSON; stdout when omitted.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Message trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(short, long)]
    instance: PathBuf,
    #[arg(short, long)]
    config: PathBuf,
}

fn load_instance(path: &Path) -> Result<Instance, Failure> {
    let inst = Instance::load(path)?;
    inst.validate().map_err(|v| {
        let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        Failure::Usage(format!("{}: invalid instance: {}", path.display(), list.join("; ")))
    })?;
    Ok(inst)
}

fn load_config(path: &Path, inst: &Instance) -> Result<Configuration, Failure> {
    Ok(SolutionFile::load(path)?.configuration.to_config(inst.node_count())?)
}

fn node_set(inst: &Instance, ids: &[usize]) -> Result<BTreeSet<NodeId>, Failure> {
    ids.iter()
        .map(|&j| {
            if j < inst.node_count() {
                Ok(NodeId(j))
            } else {
                Err(Failure::Usage(format!("node {j} does not exist")))
            }
        })
        .collect()
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| io_error(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn gen_topology(a: &GenArgs) -> Result<(), Failure> {
    let inst = a.topology.generate(a.n, a.seed)?;
    emit(a.output.as_deref(), &inst.to_json())
}

fn optimize(a: &OptimizeArgs) -> Result<(), Failure> {
    let base = load_instance(&a.instance)?;
    let failed = node_set(&base, &a.failed)?;
    let sol = match &a.previous {
        Some(prev) => {
            let previous = load_config(prev, &base)?;
            let limits = SolveLimits { allow_repartition: !a.keep_membership, ..a.solve.limits()? };
            reoptimize_fallback(&base, &failed, &previous, &limits)?
        }
        None => a.solve.solve(&base.with_tee_failures(failed.iter().copied()))?,
    };
    eprintln!("{}", sol.latency);
    eprintln!("committees: {}, optimal: {}, gap: {:.4}", sol.config.committee_count, sol.optimal, sol.gap);
    emit(a.output.as_deref(), &SolutionFile::from_solution(&sol).to_json())
}

/// Every committee in fallback with all followers active.
fn all_fallback(config: &Configuration) -> Configuration {
    let mut out = config.clone();
    out.active_links.clear();
    for c in config.committees() {
        out.sigma.insert(c.leader, true);
        out.active_links.extend(c.followers.iter().map(|&j| (c.leader, j)));
    }
    out
}

fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let inst = load_instance(&a.instance)?;
    let mut config = match &a.config {
        Some(p) => load_config(p, &inst)?,
        None => a.solve.solve(&inst)?.config,
    };
    if a.global_fallback {
        config = all_fallback(&config);
    }
    let arrival = match a.poisson_rate {
        Some(rate) => Arrival::Poisson { rate },
        None => Arrival::ClosedLoop,
    };
    let target = a.pinned.map_or(Target::RoundRobin, Target::Pinned);
    let workload = Workload { total_requests: a.requests, arrival, payload_bytes: a.payload, target };
    let faults = a.faults.plan(&inst, a.seed)?;
    let options = SimOptions {
        bandwidth_bps: a.bandwidth_bps,
        client_delay: Micros::from_ms(a.client_delay_ms),
        stall_factor: a.stall_factor,
        adaptive: !a.no_adaptive,
        verifier: VerifierService {
            block_capacity: a.block_capacity,
            min_block_interval: Micros::from_ms(a.min_block_interval_ms),
        },
        jitter: a.jitter,
        trace: a.trace.is_some(),
        limits: SolveLimits { time_budget: Duration::from_secs(10), ..a.solve.limits()? },
    };
    let report = sim::run_with(&inst, &config, &workload, &faults, a.seed, &options)?;
    if let Ok(l) = evaluate(&inst, &config) {
        eprintln!("analytic {l}");
    }
    if let Some(p) = &a.csv {
        let mut w = create(p)?;
        report.write_csv(&mut w).map_err(|e| io_error(p, e))?;
        w.flush().map_err(|e| io_error(p, e))?;
    }
    if let Some(p) = &a.trace {
        let mut w = create(p)?;
        report.write_trace(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(p, e))?;
    }
    emit(a.json.as_deref(), &report.summary_json())
}

fn check(a: &CheckArgs) -> Result<(), Failure> {
    let inst = load_instance(&a.instance)?;
    let config = load_config(&a.config, &inst)?;
    let violations = check_constraints(&inst, &config);
    if violations.is_empty() {
        let l = evaluate(&inst, &config)?;
        println!("feasible: {} committees, {l}", config.committee_count);
        return Ok(());
    }
    for v in &violations {
        println!("{v}");
    }
    Err(Failure::Infeasible(format!("{} violation(s)", violations.len())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: thread count must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::GenTopology(a) => gen_topology(a),
        Command::Optimize(a) => optimize(a),
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => experiment::run(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
