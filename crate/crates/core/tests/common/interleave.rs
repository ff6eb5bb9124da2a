//! Exhaustive interleaving check of one committee.
//!
//! Four consensus nodes (leader 0, f = 1) and a lone verifier order two client
//! requests. From every reachable state the explorer tries each in-flight
//! delivery, the leader's timer for each pending sequence, sealing at the
//! verifier, and (optionally) a forged pre-prepare that replays the leader's
//! attestation with another digest. States are memoized by hash.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{Hash, Hasher};

use topbft_core::cco::Configuration;
use topbft_core::model::{uniform_instance, Micros, NodeId};
use topbft_core::protocol::{
    committee_states, handle_message, on_timeout, seal_block, verifier_states, Digest, Endpoint, MessageKind,
    NodeState, ProtocolEvent, ProtocolMessage, Transition,
};

#[derive(Clone, PartialEq, Eq, Hash)]
struct World {
    nodes: Vec<NodeState>,
    verifier: NodeState,
    inflight: Vec<(Endpoint, ProtocolMessage)>,
    forged: BTreeSet<u64>,
    replies: BTreeMap<u64, (u64, Digest)>,
}

#[derive(Debug, Default)]
pub struct Exploration {
    pub states: usize,
    pub terminals: usize,
    pub forgeries: usize,
    pub violations: Vec<String>,
}

fn key(m: &(Endpoint, ProtocolMessage)) -> (Endpoint, MessageKind, Endpoint, u64, Digest, u8) {
    (m.0, m.1.kind, m.1.from, m.1.sequence, m.1.digest, m.1.round)
}

fn fingerprint(w: &World) -> u64 {
    let mut h = DefaultHasher::new();
    w.hash(&mut h);
    h.finish()
}

/// Explores every interleaving. `fallback` starts the committee in fallback
/// mode (all three followers active, quorum 3).
pub fn explore(fallback: bool, adversary: bool) -> Exploration {
    let inst = uniform_instance(4, 1, Micros(1000), Micros(1000), 1, Micros(0));
    let mut config = Configuration::from_membership(&inst, vec![NodeId(0); 4]).unwrap();
    if fallback {
        config.sigma.insert(NodeId(0), true);
        config.active_links = (1..4).map(|j| (NodeId(0), NodeId(j))).collect();
    }
    let verifier = verifier_states(&inst.verification, 1).remove(0);
    let nodes = committee_states(&config, 1, verifier.verifier, None);
    let inflight = (0..2).map(|k| (Endpoint::Node(NodeId(0)), ProtocolMessage::request(NodeId(0), k, 0))).collect();
    let start = World { nodes, verifier, inflight, forged: BTreeSet::new(), replies: BTreeMap::new() };

    let mut out = Exploration::default();
    let mut seen = HashSet::new();
    let mut stack = vec![start];
    while let Some(w) = stack.pop() {
        if !seen.insert(fingerprint(&w)) {
            continue;
        }
        out.states += 1;
        let next = successors(&w, adversary, &mut out);
        if w.inflight.is_empty() && w.verifier.batch.is_empty() {
            out.terminals += 1;
            if w.replies.len() != 2 {
                out.violations.push(format!("terminal state with {} replies", w.replies.len()));
            }
        }
        stack.extend(next);
    }
    out
}

fn successors(w: &World, adversary: bool, out: &mut Exploration) -> Vec<World> {
    let mut next = Vec::new();
    for i in 0..w.inflight.len() {
        if i > 0 && w.inflight[i] == w.inflight[i - 1] {
            continue;
        }
        let mut n = w.clone();
        let (to, msg) = n.inflight.remove(i);
        let tr = match to {
            Endpoint::Node(j) => handle_message(&n.nodes[j.0], &msg, 0),
            Endpoint::Verifier(_) => handle_message(&n.verifier, &msg, 0),
            Endpoint::Client => unreachable!("replies are recorded, not sent"),
        };
        step(&mut n, to, tr, out);
        next.push(n);
    }
    let pending: Vec<u64> = w.nodes[0].pending.keys().copied().collect();
    for seq in pending {
        let mut n = w.clone();
        let tr = on_timeout(&n.nodes[0], seq);
        step(&mut n, Endpoint::Node(NodeId(0)), tr, out);
        next.push(n);
    }
    if !w.verifier.batch.is_empty() && w.verifier.ordering.is_none() {
        let mut n = w.clone();
        let tr = seal_block(&n.verifier);
        step(&mut n, Endpoint::Verifier(0), tr, out);
        next.push(n);
    }
    if adversary {
        // the faulty leader replays one attested pre-prepare per sequence,
        // to any follower, with another digest
        for (to, msg) in &w.inflight {
            if msg.kind != MessageKind::PrePrepare || w.forged.contains(&msg.sequence) {
                continue;
            }
            let mut n = w.clone();
            n.forged.insert(msg.sequence);
            let mut fake = msg.clone();
            fake.digest = Digest(msg.digest.0 | 1);
            if fake.digest == msg.digest {
                fake.digest = Digest(msg.digest.0 ^ 2);
            }
            n.inflight.push((*to, fake));
            n.inflight.sort_by_key(key);
            out.forgeries += 1;
            next.push(n);
        }
    }
    next
}

fn step(w: &mut World, who: Endpoint, tr: Transition, out: &mut Exploration) {
    let Transition { state, outbox, events } = tr;
    for ev in &events {
        match *ev {
            ProtocolEvent::Attested { node, value } => {
                let before = w.nodes[node.0].counter.as_ref().map_or(0, |c| c.value());
                if value <= before {
                    out.violations.push(format!("counter of {node} went from {before} to {value}"));
                }
            }
            ProtocolEvent::Accepted { committee, sequence, digest, .. } => {
                let bound = w.nodes[committee.0].log.get(&(committee, sequence)).copied();
                if bound != Some(digest) {
                    out.violations.push(format!(
                        "follower accepted ({committee}, {sequence}) with a digest the leader never bound"
                    ));
                }
            }
            _ => {}
        }
    }
    match who {
        Endpoint::Node(j) => {
            for (k, d) in &w.nodes[j.0].log {
                if state.log.get(k) != Some(d) {
                    out.violations.push(format!("node {j} rebound {k:?}"));
                }
            }
            w.nodes[j.0] = state;
        }
        Endpoint::Verifier(_) => w.verifier = state,
        Endpoint::Client => {}
    }
    for (to, msg) in outbox {
        if to == Endpoint::Client {
            for (&req, &(seq, d)) in &w.replies {
                if (seq == msg.sequence) != (req == msg.request) || (req == msg.request && d != msg.digest) {
                    out.violations.push(format!("reply for request {} conflicts with request {req}", msg.request));
                }
            }
            w.replies.insert(msg.request, (msg.sequence, msg.digest));
        } else {
            w.inflight.push((to, msg));
        }
    }
    w.inflight.sort_by_key(key);
}
