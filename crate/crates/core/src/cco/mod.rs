//! Committee configuration optimization.
//!
//! A [`Configuration`] fixes the leader set, committee membership, active
//! leader-follower links and the per-committee fallback flag. The objective
//! is the per-transaction latency `t_tr`, a sum of five *global* maxima
//! (see [`LatencyBreakdown`]). Three solvers are provided:
//!
//! - [`solve_exact`]: branch-and-bound over leader sets with a bottleneck
//!   threshold search, provably optimal for desk-scale instances;
//! - [`solve_heuristic`]: threshold-guided construction plus local search for
//!   instances of a few hundred nodes;
//! - [`brute_force`]: exhaustive enumeration, used as a test oracle.
//!
//! Among configurations with equal `t_tr`, solvers prefer more committees
//! (more parallel consensus), then the lexicographically smallest leader set.

mod brute;
mod constraints;
mod exact;
mod fallback;
mod heuristic;
mod io;
mod matching;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::model::{Instance, Micros, NodeId};

pub use brute::{brute_force, BRUTE_FORCE_MAX_NODES};
pub use constraints::{check_constraints, derive_sigma, eligible_leaders, evaluate, optimal_links};
pub(crate) use constraints::{kth_smallest_rtt, verification_time};
pub use exact::solve_exact;
pub use fallback::reoptimize_fallback;
pub use heuristic::solve_heuristic;
pub use io::{CommitteeRecord, ConfigurationFile, LatencyRecord, SolutionFile};

/// A complete committee configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    /// `leader_of[j]` is the leader of node `j`'s committee; leaders map to
    /// themselves.
    pub leader_of: Vec<NodeId>,
    /// Active `(leader, follower)` links.
    pub active_links: BTreeSet<(NodeId, NodeId)>,
    /// Fallback flag per leader.
    pub sigma: BTreeMap<NodeId, bool>,
    pub committee_count: usize,
}

/// One committee of a configuration, in a form convenient for iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Committee {
    pub leader: NodeId,
    /// Non-leader members, ascending.
    pub followers: Vec<NodeId>,
    /// Actively linked followers, ascending.
    pub active: Vec<NodeId>,
    pub sigma: bool,
}

impl Committee {
    pub fn passive(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.followers.iter().copied().filter(move |f| self.active.binary_search(f).is_err())
    }

    pub fn size(&self) -> usize {
        self.followers.len() + 1
    }
}

impl Configuration {
    pub fn node_count(&self) -> usize {
        self.leader_of.len()
    }

    pub fn is_leader(&self, id: NodeId) -> bool {
        self.leader_of.get(id.0) == Some(&id)
    }

    /// Leaders in ascending order.
    pub fn leaders(&self) -> Vec<NodeId> {
        (0..self.leader_of.len()).map(NodeId).filter(|&i| self.leader_of[i.0] == i).collect()
    }

    pub fn committees(&self) -> Vec<Committee> {
        let mut by_leader: BTreeMap<NodeId, Committee> = self
            .leaders()
            .into_iter()
            .map(|l| {
                let sigma = self.sigma.get(&l).copied().unwrap_or(false);
                (l, Committee { leader: l, followers: Vec::new(), active: Vec::new(), sigma })
            })
            .collect();
        for (j, &l) in self.leader_of.iter().enumerate() {
            if l.0 != j {
                if let Some(c) = by_leader.get_mut(&l) {
                    c.followers.push(NodeId(j));
                }
            }
        }
        for &(l, j) in &self.active_links {
            if let Some(c) = by_leader.get_mut(&l) {
                c.active.push(j);
            }
        }
        by_leader.into_values().collect()
    }

    pub fn committee(&self, leader: NodeId) -> Option<Committee> {
        self.committees().into_iter().find(|c| c.leader == leader)
    }

    /// Builds a configuration from a membership map, deriving the minimal
    /// fallback flags and the latency-optimal active links.
    pub fn from_membership(instance: &Instance, leader_of: Vec<NodeId>) -> Result<Configuration, CcoError> {
        let sigma = derive_sigma(instance, &leader_of);
        let active_links = optimal_links(instance, &leader_of, &sigma)?;
        let committee_count = sigma.len();
        Ok(Configuration { leader_of, active_links, sigma, committee_count })
    }
}

/// The five latency terms and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LatencyBreakdown {
    /// Pre-prepare and prepare phases: two round trips on the slowest active link.
    pub t_pre: Micros,
    /// Slowest leader to verification committee.
    pub t_cv: Micros,
    /// Verification committee ordering: four round trips.
    pub t_ver: Micros,
    /// Verification committee to slowest leader.
    pub t_vc: Micros,
    /// Commit phase: two round trips on the slowest active link.
    pub t_com: Micros,
    pub t_tr: Micros,
}

impl LatencyBreakdown {
    pub fn new(t_pre: Micros, t_cv: Micros, t_ver: Micros, t_vc: Micros, t_com: Micros) -> Self {
        LatencyBreakdown { t_pre, t_cv, t_ver, t_vc, t_com, t_tr: t_pre + t_cv + t_ver + t_vc + t_com }
    }
}

impl fmt::Display for LatencyBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t_pre={} t_cv={} t_ver={} t_vc={} t_com={} t_tr={}",
            self.t_pre, self.t_cv, self.t_ver, self.t_vc, self.t_com, self.t_tr
        )
    }
}

/// Constraint families of the optimization model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintId {
    /// Leader count equals the committee count.
    CommitteeCount,
    /// Followers may only point at leaders.
    LeaderScope,
    /// Each node belongs to exactly one committee.
    UniqueMembership,
    /// Committees hold at least `3f+1` nodes.
    CommitteeSize,
    /// Leader Byzantine rate within `B`.
    LeaderByzantine,
    /// Leader crash rate within `C`.
    LeaderCrash,
    /// Active links stay inside a committee.
    LinkScope,
    /// A committee containing a failed TEE has its fallback flag set.
    SigmaConsistency,
    /// A committee has at least `(2+sigma)f` active links.
    ConnectionCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subject {
    Global,
    Node(NodeId),
    Pair(NodeId, NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub constraint: ConstraintId,
    pub subject: Subject,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.constraint, self.detail)
    }
}

#[derive(Clone, Debug)]
pub struct SolveLimits {
    pub time_budget: Duration,
    /// Largest instance the exact solver accepts.
    pub node_cap_exact: usize,
    /// Fail with [`CcoError::Timeout`] instead of returning an incumbent.
    pub optimality_required: bool,
    /// Whether fallback re-optimization may change committee membership.
    pub allow_repartition: bool,
    /// Heuristic settings used when the instance exceeds `node_cap_exact`.
    pub heuristic_seed: u64,
    pub heuristic_iterations: usize,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits {
            time_budget: Duration::from_secs(60),
            node_cap_exact: 16,
            optimality_required: false,
            allow_repartition: true,
            heuristic_seed: 0,
            heuristic_iterations: 20_000,
        }
    }
}

/// A solver result.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub config: Configuration,
    pub latency: LatencyBreakdown,
    /// Whether optimality was proven.
    pub optimal: bool,
    /// Relative gap between `t_tr` and the best proven lower bound.
    pub gap: f64,
}

impl Solution {
    pub(crate) fn key(&self) -> (Micros, Reverse<usize>) {
        (self.latency.t_tr, Reverse(self.config.committee_count))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InfeasibleCause {
    TooFewNodes { nodes: usize, required: usize },
    NoEligibleLeader,
    CommitteeTooSmall { leader: NodeId, needed: usize, available: usize },
    NoFeasiblePartition,
}

impl fmt::Display for InfeasibleCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InfeasibleCause::TooFewNodes { nodes, required } => write!(f, "N_c < 3f+1 ({nodes} < {required})"),
            InfeasibleCause::NoEligibleLeader => write!(f, "no eligible leader"),
            InfeasibleCause::CommitteeTooSmall { leader, needed, available } => {
                write!(f, "committee of {leader} needs {needed} active followers but has {available}")
            }
            InfeasibleCause::NoFeasiblePartition => write!(f, "no feasible partition"),
        }
    }
}

#[derive(Clone, Debug, Error)]
pub enum CcoError {
    #[error("infeasible: {0}")]
    Infeasible(InfeasibleCause),
    #[error("configuration violates {} constraint(s): {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Violations(Vec<Violation>),
    #[error("time budget exhausted before proving optimality")]
    Timeout,
    #[error("{solver} accepts at most {cap} nodes, instance has {nodes}")]
    TooLarge { solver: &'static str, nodes: usize, cap: usize },
}

/// Cheapest possible objective over all configurations: any leader `i`
/// needs at least `2f` active links (`3f` if its own TEE failed).
pub(crate) fn objective_lower_bound(instance: &Instance) -> Option<Micros> {
    let f = instance.params.f;
    let ver = constraints::verification_time(instance);
    eligible_leaders(instance)
        .into_iter()
        .filter_map(|i| {
            let k = if instance.tee_failed(i) { 3 * f } else { 2 * f };
            let r = constraints::kth_smallest_rtt(instance, i, k, |_| true)?;
            Some(r * 4 + instance.delays.to_verifier[i.0] + instance.delays.from_verifier[i.0] + ver)
        })
        .min()
}

pub(crate) fn relative_gap(value: Micros, bound: Micros) -> f64 {
    if value.0 == 0 {
        0.0
    } else {
        value.0.saturating_sub(bound.0) as f64 / value.0 as f64
    }
}

pub(crate) fn preflight(instance: &Instance) -> Result<Vec<NodeId>, CcoError> {
    let required = instance.params.min_committee_size();
    if instance.node_count() < required {
        return Err(CcoError::Infeasible(InfeasibleCause::TooFewNodes { nodes: instance.node_count(), required }));
    }
    let eligible = eligible_leaders(instance);
    if eligible.is_empty() {
        return Err(CcoError::Infeasible(InfeasibleCause::NoEligibleLeader));
    }
    Ok(eligible)
}
