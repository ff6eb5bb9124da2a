//! Repeated runs and parameter sweeps.
//!
//! Every cell of a sweep derives its seed from the base seed and its index,
//! so results do not depend on how rayon schedules the cells.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{fastbft_like, hotstuff_like, random_configuration};
use super::{run_with, FaultPlan, SimError, SimOptions, SimReport, Workload};
use crate::cco::{solve_exact, solve_heuristic, Configuration, Solution, SolveLimits};
use crate::model::{Instance, Micros};
use crate::topology::{generate, TopologyKind, TopologySpec};

/// Seed of sub-run `index` of a run seeded with `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Exact solver up to the node cap, heuristic beyond.
pub fn solve(instance: &Instance, limits: &SolveLimits) -> Result<Solution, crate::cco::CcoError> {
    if instance.node_count() <= limits.node_cap_exact {
        solve_exact(instance, limits)
    } else {
        solve_heuristic(instance, limits.heuristic_seed, limits.heuristic_iterations)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scheme: String,
    pub runs: usize,
    pub committed: u64,
    pub stalled: u64,
    pub throughput: f64,
    pub latency_mean_ms: f64,
    pub latency_median_ms: f64,
    pub latency_p99_ms: f64,
    /// Mean latency reduction relative to the first scheme, percent.
    pub latency_improvement_pct: f64,
    pub safe: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs every configuration `repetitions` times on the same workload and
/// faults. Repetition `r` uses the same seed for every configuration.
pub fn compare(
    instance: &Instance,
    configs: &[(String, Configuration)],
    workload: &Workload,
    faults: &FaultPlan,
    seed: u64,
    repetitions: usize,
    options: &SimOptions,
) -> Result<Vec<ComparisonRow>, SimError> {
    let repetitions = repetitions.max(1);
    let cells: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..repetitions).map(move |r| (c, r))).collect();
    let reports: Vec<SimReport> = cells
        .par_iter()
        .map(|&(c, r)| run_with(instance, &configs[c].1, workload, faults, derive_seed(seed, r as u64), options))
        .collect::<Result<_, _>>()?;
    let mut rows: Vec<ComparisonRow> = configs
        .iter()
        .enumerate()
        .map(|(c, (name, _))| {
            let runs = &reports[c * repetitions..(c + 1) * repetitions];
            ComparisonRow {
                scheme: name.clone(),
                runs: repetitions,
                committed: runs.iter().map(SimReport::committed).sum(),
                stalled: runs.iter().map(|r| r.stalled).sum(),
                throughput: mean(runs.iter().map(SimReport::throughput)),
                latency_mean_ms: mean(runs.iter().map(SimReport::mean_latency_ms)),
                latency_median_ms: mean(runs.iter().map(|r| r.latency_quantile_ms(0.5))),
                latency_p99_ms: mean(runs.iter().map(|r| r.latency_quantile_ms(0.99))),
                latency_improvement_pct: 0.0,
                safe: runs.iter().all(|r| r.audit.is_safe()),
            }
        })
        .collect();
    if let Some(first) = rows.first().map(|r| r.latency_mean_ms) {
        for r in &mut rows {
            r.latency_improvement_pct = if first > 0.0 { 100.0 * (first - r.latency_mean_ms) / first } else { 0.0 };
        }
    }
    Ok(rows)
}

/// Shared sweep parameters.
#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub topology: TopologyKind,
    pub f: usize,
    pub seed: u64,
    /// Closed-loop rounds per run; every committee gets one request per round.
    pub rounds: u64,
    pub payload_bytes: u64,
    pub repetitions: usize,
    pub options: SimOptions,
    /// Per-message leader cost of the single-committee baselines.
    pub message_cost: Micros,
}

impl SweepSettings {
    pub fn new(topology: TopologyKind, seed: u64) -> Self {
        SweepSettings {
            topology,
            f: 1,
            seed,
            rounds: 20,
            payload_bytes: 0,
            repetitions: 1,
            options: SimOptions::default(),
            message_cost: Micros(20),
        }
    }

    fn workload(&self, config: &Configuration, payload: u64) -> Workload {
        Workload::closed_loop(self.rounds * config.committee_count as u64, payload)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nodes: usize,
    pub scheme: String,
    pub committees: usize,
    pub latency_ms: f64,
    pub throughput: f64,
}

/// Throughput and latency against system size for the optimized
/// configuration, a random one and the two single-committee baselines.
pub fn node_sweep(settings: &SweepSettings, sizes: &[usize]) -> Result<Vec<SweepRow>, SimError> {
    let per_size: Vec<Vec<SweepRow>> = sizes
        .par_iter()
        .enumerate()
        .map(|(k, &n)| -> Result<Vec<SweepRow>, SimError> {
            let seed = derive_seed(settings.seed, k as u64);
            let inst = generate(&TopologySpec::new(settings.topology.clone(), n, settings.f, seed))
                .map_err(|e| SimError::Workload(e.to_string()))?;
            let best = solve(&inst, &settings.options.limits)?;
            let random = random_configuration(&inst, seed, false)?;
            let mut rows = Vec::new();
            for (name, config) in [("cco", &best.config), ("random", &random)] {
                let w = settings.workload(config, settings.payload_bytes);
                let table = compare(
                    &inst,
                    &[(name.to_string(), config.clone())],
                    &w,
                    &FaultPlan::none(),
                    seed,
                    settings.repetitions,
                    &settings.options,
                )?;
                rows.push(SweepRow {
                    nodes: n,
                    scheme: name.to_string(),
                    committees: config.committee_count,
                    latency_ms: table[0].latency_mean_ms,
                    throughput: table[0].throughput,
                });
            }
            for b in [hotstuff_like(&inst, settings.message_cost), fastbft_like(&inst, settings.message_cost)]
                .into_iter()
                .flatten()
            {
                rows.push(SweepRow {
                    nodes: n,
                    scheme: b.scheme,
                    committees: 1,
                    latency_ms: b.latency.as_ms(),
                    throughput: b.throughput,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_size.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadRow {
    pub payload_bytes: u64,
    pub scheme: String,
    pub latency_ms: f64,
    pub throughput: f64,
}

/// Latency and throughput of each configuration against payload size.
pub fn payload_sweep(
    instance: &Instance,
    configs: &[(String, Configuration)],
    payloads: &[u64],
    settings: &SweepSettings,
) -> Result<Vec<PayloadRow>, SimError> {
    let cells: Vec<(usize, u64)> = payloads.iter().flat_map(|&b| (0..configs.len()).map(move |c| (c, b))).collect();
    cells
        .par_iter()
        .map(|&(c, bytes)| {
            let (name, config) = &configs[c];
            let w = settings.workload(config, bytes);
            let table = compare(
                instance,
                &[(name.clone(), config.clone())],
                &w,
                &FaultPlan::none(),
                settings.seed,
                settings.repetitions,
                &settings.options,
            )?;
            Ok(PayloadRow {
                payload_bytes: bytes,
                scheme: name.clone(),
                latency_ms: table[0].latency_mean_ms,
                throughput: table[0].throughput,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallbackRow {
    pub failed_fraction: f64,
    pub failed_nodes: usize,
    pub scheme: String,
    pub committees: usize,
    pub latency_ms: f64,
    pub throughput: f64,
    pub stalled: u64,
}

/// TEE failures at time zero on a growing fraction of nodes. The adaptive
/// scheme starts from the optimized configuration and re-optimizes after the
/// failures; the baseline is a random configuration that runs every
/// committee in fallback from the start.
pub fn fallback_compare(
    instance: &Instance,
    fractions: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<FallbackRow>, SimError> {
    let normal = solve(instance, &settings.options.limits)?;
    let random = random_configuration(instance, settings.seed, true)?;
    let adaptive_opts = SimOptions { adaptive: true, ..settings.options.clone() };
    let static_opts = SimOptions { adaptive: false, ..settings.options.clone() };
    let cells: Vec<(usize, bool)> = (0..fractions.len()).flat_map(|k| [(k, true), (k, false)]).collect();
    cells
        .par_iter()
        .map(|&(k, adaptive)| {
            let frac = fractions[k];
            let faults = FaultPlan::tee_fraction(
                instance.node_count(),
                frac,
                Micros::ZERO,
                derive_seed(settings.seed, k as u64),
            );
            let (name, config, opts) = if adaptive {
                ("cco_adaptive", &normal.config, &adaptive_opts)
            } else {
                ("random_fallback", &random, &static_opts)
            };
            let w = settings.workload(config, settings.payload_bytes);
            let table = compare(
                instance,
                &[(name.to_string(), config.clone())],
                &w,
                &faults,
                settings.seed,
                settings.repetitions,
                opts,
            )?;
            Ok(FallbackRow {
                failed_fraction: frac,
                failed_nodes: faults.tee_failures.len(),
                scheme: name.to_string(),
                committees: config.committee_count,
                latency_ms: table[0].latency_mean_ms,
                throughput: table[0].throughput,
                stalled: table[0].stalled,
            })
        })
        .collect()
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
