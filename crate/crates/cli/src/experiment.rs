use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use topbft_core::cco::Configuration;
use topbft_core::model::Instance;
use topbft_core::sim::{
    derive_seed, fallback_compare, node_sweep, payload_sweep, random_configuration, solve, write_csv, SweepSettings,
    VerifierService,
};

use crate::{create, io_error, Failure, TopologyArgs};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Experiment {
    NodeSweep,
    PayloadSweep,
    FallbackCompare,
}

impl Experiment {
    fn file(self) -> &'static str {
        match self {
            Experiment::NodeSweep => "node_sweep.csv",
            Experiment::PayloadSweep => "payload_sweep.csv",
            Experiment::FallbackCompare => "fallback_compare.csv",
        }
    }
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    name: Experiment,
    #[command(flatten)]
    topology: TopologyArgs,
    /// Topology seeds, one table block each.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Node counts of the node sweep.
    #[arg(long, value_delimiter = ',', default_value = "40,80,120,160,200,240")]
    sizes: Vec<usize>,
    /// Payload sizes in bytes.
    #[arg(long, value_delimiter = ',', default_value = "0,1000,10000,100000,1000000")]
    payloads: Vec<u64>,
    /// Fractions of nodes whose TEE fails.
    #[arg(long, value_delimiter = ',', default_value = "0.3")]
    fractions: Vec<f64>,
    /// Node count of the payload sweep and fallback comparison.
    #[arg(long, default_value_t = 40)]
    nodes: usize,
    /// Closed-loop rounds per run.
    #[arg(long, default_value_t = 20)]
    rounds: u64,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    /// Largest number of transactions per verification block.
    #[arg(long)]
    block_capacity: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct NodeRow {
    seed: u64,
    nodes: usize,
    scheme: String,
    committees: usize,
    latency_ms: f64,
    throughput: f64,
}

#[derive(Serialize)]
struct PayloadRow {
    seed: u64,
    payload_bytes: u64,
    scheme: String,
    latency_ms: f64,
    throughput: f64,
}

#[derive(Serialize)]
struct FallbackRow {
    seed: u64,
    failed_fraction: f64,
    failed_nodes: usize,
    scheme: String,
    committees: usize,
    latency_ms: f64,
    throughput: f64,
    stalled: u64,
}

#[derive(Serialize)]
struct CellError {
    seed: u64,
    cell: String,
    error: String,
}

type Cell<R> = Result<Vec<R>, CellError>;

impl ExperimentArgs {
    fn validate(&self) -> Result<(), Failure> {
        let empty = match self.name {
            Experiment::NodeSweep => self.sizes.is_empty(),
            Experiment::PayloadSweep => self.payloads.is_empty(),
            Experiment::FallbackCompare => self.fractions.is_empty(),
        };
        if empty || self.seeds.is_empty() {
            return Err(Failure::Usage("sweep axes must not be empty".into()));
        }
        if let Some(&n) = self.sizes.iter().chain([&self.nodes]).find(|&&n| n > 240) {
            return Err(Failure::Usage(format!("{n} nodes exceeds the simulator limit of 240")));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Failure::Usage(format!("TEE failure fraction {f} outside [0, 1]")));
        }
        if self.block_capacity == Some(0) {
            return Err(Failure::Usage("block capacity must be positive".into()));
        }
        Ok(())
    }

    fn settings(&self, seed: u64) -> SweepSettings {
        let mut s = SweepSettings::new(self.topology.kind(), seed);
        s.f = self.topology.f;
        s.rounds = self.rounds;
        s.repetitions = self.repetitions;
        s.options.verifier = VerifierService { block_capacity: self.block_capacity, ..VerifierService::default() };
        s
    }

    fn instance(&self, seed: u64) -> Result<Instance, CellError> {
        self.topology.generate(self.nodes, seed).map_err(|f| CellError {
            seed,
            cell: "topology".into(),
            error: f.message().to_string(),
        })
    }
}

fn fail(seed: u64, cell: String, e: impl std::fmt::Display) -> CellError {
    CellError { seed, cell, error: e.to_string() }
}

fn node_cells(a: &ExperimentArgs) -> Vec<Cell<NodeRow>> {
    let cells: Vec<(u64, usize)> = a.seeds.iter().flat_map(|&s| a.sizes.iter().map(move |&n| (s, n))).collect();
    cells
        .par_iter()
        .map(|&(seed, n)| {
            let rows = node_sweep(&a.settings(seed), &[n]).map_err(|e| fail(seed, format!("nodes={n}"), e))?;
            Ok(rows
                .into_iter()
                .map(|r| NodeRow {
                    seed,
                    nodes: r.nodes,
                    scheme: r.scheme,
                    committees: r.committees,
                    latency_ms: r.latency_ms,
                    throughput: r.throughput,
                })
                .collect())
        })
        .collect()
}

fn payload_configs(a: &ExperimentArgs, seed: u64) -> Result<(Instance, Vec<(String, Configuration)>), CellError> {
    let inst = a.instance(seed)?;
    let settings = a.settings(seed);
    let best = solve(&inst, &settings.options.limits).map_err(|e| fail(seed, "cco".into(), e))?;
    let random =
        random_configuration(&inst, derive_seed(seed, 1), false).map_err(|e| fail(seed, "random".into(), e))?;
    Ok((inst, vec![("cco".into(), best.config), ("random".into(), random)]))
}

fn payload_cells(a: &ExperimentArgs) -> Vec<Cell<PayloadRow>> {
    let per_seed: Vec<Vec<Cell<PayloadRow>>> = a
        .seeds
        .par_iter()
        .map(|&seed| {
            let (inst, configs) = match payload_configs(a, seed) {
                Ok(x) => x,
                Err(e) => return vec![Err(e)],
            };
            a.payloads
                .par_iter()
                .map(|&b| {
                    let rows = payload_sweep(&inst, &configs, &[b], &a.settings(seed))
                        .map_err(|e| fail(seed, format!("payload={b}"), e))?;
                    Ok(rows
                        .into_iter()
                        .map(|r| PayloadRow {
                            seed,
                            payload_bytes: r.payload_bytes,
                            scheme: r.scheme,
                            latency_ms: r.latency_ms,
                            throughput: r.throughput,
                        })
                        .collect())
                })
                .collect()
        })
        .collect();
    per_seed.into_iter().flatten().collect()
}

fn fallback_cells(a: &ExperimentArgs) -> Vec<Cell<FallbackRow>> {
    a.seeds
        .par_iter()
        .map(|&seed| {
            let inst = a.instance(seed)?;
            let rows = fallback_compare(&inst, &a.fractions, &a.settings(seed))
                .map_err(|e| fail(seed, "fallback".into(), e))?;
            Ok(rows
                .into_iter()
                .map(|r| FallbackRow {
                    seed,
                    failed_fraction: r.failed_fraction,
                    failed_nodes: r.failed_nodes,
                    scheme: r.scheme,
                    committees: r.committees,
                    latency_ms: r.latency_ms,
                    throughput: r.throughput,
                    stalled: r.stalled,
                })
                .collect())
        })
        .collect()
}

fn save<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = create(path)?;
    write_csv(rows, &mut w).map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes the table, plus `errors.csv` for failed cells. Fails only when
/// every cell failed.
fn finish<R: Serialize>(a: &ExperimentArgs, cells: Vec<Cell<R>>) -> Result<(), Failure> {
    let total = cells.len();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for c in cells {
        match c {
            Ok(r) => rows.extend(r),
            Err(e) => errors.push(e),
        }
    }
    let table = a.out_dir.join(a.name.file());
    save(&table, &rows)?;
    let errors_path = a.out_dir.join("errors.csv");
    if errors.is_empty() {
        if errors_path.exists() {
            std::fs::remove_file(&errors_path).map_err(|e| io_error(&errors_path, e))?;
        }
    } else {
        save(&errors_path, &errors)?;
        eprintln!("{} of {total} cells failed, see {}", errors.len(), errors_path.display());
    }
    eprintln!("wrote {} rows to {}", rows.len(), table.display());
    if errors.len() == total {
        return Err(Failure::Usage(format!("every cell failed: {}", errors[0].error)));
    }
    Ok(())
}

pub fn run(a: &ExperimentArgs) -> Result<(), Failure> {
    a.validate()?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| io_error(&a.out_dir, e))?;
    match a.name {
        Experiment::NodeSweep => finish(a, node_cells(a)),
        Experiment::PayloadSweep => finish(a, payload_cells(a)),
        Experiment::FallbackCompare => finish(a, fallback_cells(a)),
    }
}
