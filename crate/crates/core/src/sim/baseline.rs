//! Reference points: random configurations and single-committee protocols.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cco::{derive_sigma, eligible_leaders, kth_smallest_rtt, CcoError, Configuration, InfeasibleCause};
use crate::model::{Instance, Micros, NodeId};

/// A random feasible configuration with as many committees as the instance
/// allows: random eligible leaders, the remaining nodes dealt out evenly,
/// and random active links. With `fallback_all` every committee runs the
/// fallback path with all followers active.
pub fn random_configuration(instance: &Instance, seed: u64, fallback_all: bool) -> Result<Configuration, CcoError> {
    let n = instance.node_count();
    let f = instance.params.f;
    let size = instance.params.min_committee_size();
    if n < size {
        return Err(CcoError::Infeasible(InfeasibleCause::TooFewNodes { nodes: n, required: size }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eligible = eligible_leaders(instance);
    if eligible.is_empty() {
        return Err(CcoError::Infeasible(InfeasibleCause::NoEligibleLeader));
    }
    eligible.shuffle(&mut rng);
    let p = instance.max_committees().min(eligible.len());
    let leaders: BTreeSet<NodeId> = eligible[..p].iter().copied().collect();
    let mut rest: Vec<NodeId> = instance.node_ids().filter(|j| !leaders.contains(j)).collect();
    rest.shuffle(&mut rng);

    let order: Vec<NodeId> = eligible[..p].to_vec();
    let mut leader_of: Vec<NodeId> = (0..n).map(NodeId).collect();
    for (k, &j) in rest.iter().enumerate() {
        leader_of[j.0] = order[k % p];
    }
    let sigma: BTreeMap<NodeId, bool> =
        if fallback_all { leaders.iter().map(|&l| (l, true)).collect() } else { derive_sigma(instance, &leader_of) };

    let mut active_links = BTreeSet::new();
    for &l in &order {
        let mut followers: Vec<NodeId> = rest.iter().copied().filter(|j| leader_of[j.0] == l).collect();
        followers.sort();
        let need = if fallback_all {
            followers.len()
        } else if sigma[&l] {
            3 * f
        } else {
            2 * f
        };
        followers.shuffle(&mut rng);
        active_links.extend(followers[..need].iter().map(|&j| (l, j)));
    }
    Ok(Configuration { leader_of, active_links, sigma, committee_count: p })
}

/// Closed-form latency and throughput of a single-committee protocol run by
/// all nodes of the instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub scheme: String,
    pub nodes: usize,
    pub leader: usize,
    pub latency: Micros,
    /// Decisions per second, one request per decision.
    pub throughput: f64,
}

/// Best leader for a quorum of `k` followers and the matching round trip.
fn best_quorum_rtt(instance: &Instance, k: usize) -> Option<(NodeId, Micros)> {
    eligible_leaders(instance)
        .into_iter()
        .filter_map(|l| kth_smallest_rtt(instance, l, k, |_| true).map(|r| (l, r)))
        .min_by_key(|&(l, r)| (r, l))
}

fn estimate(
    instance: &Instance,
    scheme: &str,
    quorum: usize,
    phases: u64,
    message_cost: Micros,
) -> Option<BaselineEstimate> {
    let n = instance.node_count();
    let (leader, rtt) = best_quorum_rtt(instance, quorum)?;
    // the leader sends and checks one message per node in every phase
    let per_phase = rtt + message_cost * n as u64;
    let latency = per_phase * phases;
    Some(BaselineEstimate {
        scheme: scheme.to_string(),
        nodes: n,
        leader: leader.0,
        latency,
        throughput: 1e6 / latency.0.max(1) as f64,
    })
}

/// Linear-message BFT with `n = 3f' + 1` replicas: four leader-driven
/// phases, each waiting for `2f'` replies.
pub fn hotstuff_like(instance: &Instance, message_cost: Micros) -> Option<BaselineEstimate> {
    let f = (instance.node_count().saturating_sub(1)) / 3;
    estimate(instance, "hotstuff_like", 2 * f, 4, message_cost)
}

/// TEE-assisted BFT with `n = 2f' + 1` replicas: two phases, each waiting
/// for `f'` replies.
pub fn fastbft_like(instance: &Instance, message_cost: Micros) -> Option<BaselineEstimate> {
    let f = (instance.node_count().saturating_sub(1)) / 2;
    estimate(instance, "fastbft_like", f, 2, message_cost)
}
