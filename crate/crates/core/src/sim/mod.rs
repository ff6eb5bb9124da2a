//! Deterministic discrete-event simulation of TopBFT.
//!
//! [`run`] drives the protocol state machines over the instance's delay
//! matrix. Events are ordered by `(time, insertion)` and all randomness comes
//! from a seeded ChaCha stream, so a run is a pure function of its inputs.
//!
//! Transactions proceed in lock-step rounds: every committee with work
//! receives one request, and the verification committee orders all of them
//! in one block. Phase boundaries are paced by the analytic budget of the
//! running configuration: a leader forwards its aggregate no earlier than the
//! end of the prepare phase, the verification leader seals no earlier than
//! the slowest leader could have reached it, and so on. Without faults or
//! payload, every transaction therefore takes exactly the configuration's
//! `t_tr`. Late messages push the boundaries back; they are never cut short.

mod baseline;
mod engine;
mod experiments;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cco::{CcoError, Configuration, SolveLimits, Violation};
use crate::model::{Instance, Micros, NodeId};

pub use baseline::{fastbft_like, hotstuff_like, random_configuration, BaselineEstimate};
pub use experiments::{
    compare, derive_seed, fallback_compare, node_sweep, payload_sweep, solve, write_csv, ComparisonRow, FallbackRow,
    PayloadRow, SweepRow, SweepSettings,
};
pub use report::{FaultLogEntry, PhaseMeans, SafetyAudit, SimReport, SimSummary, TxRecord};

/// How clients issue requests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Arrival {
    /// Each committee has one outstanding request; the next is issued when
    /// the reply arrives.
    ClosedLoop,
    /// Open Poisson arrivals at `rate` requests per second.
    Poisson { rate: f64 },
}

/// Which committee a request goes to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// Request `k` goes to committee `k mod p` (committees in leader order).
    RoundRobin,
    /// Every request goes to the committee at this index.
    Pinned(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub total_requests: u64,
    pub arrival: Arrival,
    pub payload_bytes: u64,
    pub target: Target,
}

impl Workload {
    pub fn closed_loop(total_requests: u64, payload_bytes: u64) -> Self {
        Workload { total_requests, arrival: Arrival::ClosedLoop, payload_bytes, target: Target::RoundRobin }
    }
}

/// Injected faults. Times are absolute simulation times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub crashes: BTreeMap<NodeId, Micros>,
    pub tee_failures: BTreeMap<NodeId, Micros>,
    pub tee_recoveries: BTreeMap<NodeId, Micros>,
    /// Nodes whose every link is slowed by `slow_factor`.
    pub slow_nodes: BTreeSet<NodeId>,
    pub slow_factor: f64,
    /// Leaders that replay their pre-prepares with a different digest.
    pub equivocators: BTreeSet<NodeId>,
}

/// Largest fraction of nodes a fault plan may touch.
pub const MAX_FAULTY_FRACTION: f64 = 0.3;

impl FaultPlan {
    pub fn none() -> Self {
        FaultPlan { slow_factor: 1.0, ..FaultPlan::default() }
    }

    /// Nodes touched by any fault.
    pub fn faulty_nodes(&self) -> BTreeSet<NodeId> {
        let mut out: BTreeSet<NodeId> = self.crashes.keys().copied().collect();
        out.extend(self.tee_failures.keys());
        out.extend(self.slow_nodes.iter());
        out.extend(self.equivocators.iter());
        out
    }

    pub fn validate(&self, node_count: usize) -> Result<(), SimError> {
        let faulty = self.faulty_nodes();
        if let Some(bad) = faulty.iter().find(|j| j.0 >= node_count) {
            return Err(SimError::FaultPlan(format!("node {bad} does not exist")));
        }
        let cap = (MAX_FAULTY_FRACTION * node_count as f64 + 1e-9).floor() as usize;
        if faulty.len() > cap {
            return Err(SimError::FaultPlan(format!(
                "{} faulty nodes exceed the cap of {cap} for {node_count} nodes",
                faulty.len()
            )));
        }
        if !self.slow_nodes.is_empty() && (self.slow_factor.is_nan() || self.slow_factor < 1.0) {
            return Err(SimError::FaultPlan(format!("slow factor {} must be at least 1", self.slow_factor)));
        }
        Ok(())
    }

    /// TEE failures on `round(fraction * n)` random nodes at time `at`.
    pub fn tee_fraction(node_count: usize, fraction: f64, at: Micros, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<usize> = (0..node_count).collect();
        ids.shuffle(&mut rng);
        let k = (fraction * node_count as f64).round() as usize;
        let tee_failures = ids[..k.min(node_count)].iter().map(|&j| (NodeId(j), at)).collect();
        FaultPlan { tee_failures, ..FaultPlan::none() }
    }

    /// Samples crashes from the nodes' crash rates: node `j` crashes with
    /// probability `c_j` at a uniform time in `[0, horizon)`. The sample is
    /// truncated to the fault cap, lowest ids first.
    pub fn from_rates(instance: &Instance, horizon: Micros, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = instance.node_count();
        let cap = (MAX_FAULTY_FRACTION * n as f64 + 1e-9).floor() as usize;
        let mut crashes = BTreeMap::new();
        for j in instance.node_ids() {
            let hit = rng.gen_bool(instance.profile(j).crash_rate.clamp(0.0, 1.0));
            let at = Micros(rng.gen_range(0..horizon.0.max(1)));
            if hit && crashes.len() < cap {
                crashes.insert(j, at);
            }
        }
        FaultPlan { crashes, ..FaultPlan::none() }
    }
}

/// Verification committee service limits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierService {
    /// Largest number of transactions per block; further committees wait
    /// for the next round.
    pub block_capacity: Option<usize>,
    /// Smallest gap between the starts of consecutive rounds.
    pub min_block_interval: Micros,
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Link bandwidth for payload transmission, bits per second.
    pub bandwidth_bps: u64,
    /// One-way client to leader delay.
    pub client_delay: Micros,
    /// A round is abandoned after this many times the analytic `t_tr`.
    pub stall_factor: u64,
    /// Re-optimize the configuration at the next round boundary after a
    /// TEE failure or recovery.
    pub adaptive: bool,
    pub verifier: VerifierService,
    /// Each message delay is multiplied by a uniform factor in
    /// `[1, 1 + jitter]`.
    pub jitter: f64,
    /// Record every delivered message.
    pub trace: bool,
    /// Limits for adaptive re-optimization.
    pub limits: SolveLimits,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            bandwidth_bps: 1_000_000_000,
            client_delay: Micros::ZERO,
            stall_factor: 10,
            adaptive: true,
            verifier: VerifierService::default(),
            jitter: 0.0,
            trace: false,
            limits: SolveLimits { time_budget: std::time::Duration::from_secs(10), ..SolveLimits::default() },
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration is infeasible for the instance: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Infeasible(Vec<Violation>),
    #[error("invalid fault plan: {0}")]
    FaultPlan(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error(transparent)]
    Cco(#[from] CcoError),
}

/// Simulates `workload` on `config` with default options.
pub fn run(
    instance: &Instance,
    config: &Configuration,
    workload: &Workload,
    faults: &FaultPlan,
    seed: u64,
) -> Result<SimReport, SimError> {
    run_with(instance, config, workload, faults, seed, &SimOptions::default())
}

pub fn run_with(
    instance: &Instance,
    config: &Configuration,
    workload: &Workload,
    faults: &FaultPlan,
    seed: u64,
    options: &SimOptions,
) -> Result<SimReport, SimError> {
    let violations = crate::cco::check_constraints(instance, config);
    if !violations.is_empty() {
        return Err(SimError::Infeasible(violations));
    }
    faults.validate(instance.node_count())?;
    if let Target::Pinned(k) = workload.target {
        if k >= config.committee_count {
            return Err(SimError::Workload(format!(
                "target committee {k} out of range for {} committees",
                config.committee_count
            )));
        }
    }
    if let Arrival::Poisson { rate } = workload.arrival {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SimError::Workload(format!("arrival rate {rate} must be positive")));
        }
    }
    if options.bandwidth_bps == 0 {
        return Err(SimError::Workload("bandwidth must be positive".into()));
    }
    Ok(engine::Engine::new(instance, config, workload, faults, seed, options).run())
}
