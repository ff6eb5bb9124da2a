//! Per-node transition functions.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::order::{total_order, BatchEntry, Block, Exclusion};
use super::{counter_assign, counter_verify, CounterAttestation, Digest, Endpoint, MessageKind, MultiSig};
use super::{ProtocolMessage, TrustedCounter};
use crate::cco::Configuration;
use crate::model::{NodeId, VerificationCommittee};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    ConsensusLeader,
    ActiveFollower,
    PassiveFollower,
    VerificationLeader,
    VerificationFollower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Normal,
    /// Classical `3f+1` operation: attestations are not checked and the
    /// prepare quorum is `3f`.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CommitteeView {
    pub leader: NodeId,
    pub active: Vec<NodeId>,
    pub passive: Vec<NodeId>,
    pub f: usize,
}

impl CommitteeView {
    pub fn contains(&self, id: NodeId) -> bool {
        id == self.leader || self.active.contains(&id) || self.passive.contains(&id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VerifierView {
    pub leader: usize,
    pub members: usize,
    pub fault_tolerance: usize,
    /// Consensus fault tolerance, for checking committee multi-signatures.
    pub consensus_f: usize,
}

impl VerifierView {
    /// Signers (leader included) needed on a verification multi-signature.
    pub fn quorum(&self) -> usize {
        (2 * self.fault_tolerance + 1).min(self.members)
    }
}

/// Leader-side bookkeeping of one sequence number.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LeaderRound {
    pub digest: Digest,
    pub request: u64,
    pub payload_size: u64,
    pub attestation: Option<CounterAttestation>,
    pub prepares: BTreeSet<NodeId>,
    pub aggregated: bool,
    pub recruited: bool,
    pub committed: bool,
}

/// Verification leader's block in progress.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ordering {
    pub block: Block,
    pub round: u8,
    pub acks: BTreeSet<usize>,
    pub payloads: BTreeMap<(NodeId, u64), u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeState {
    pub id: Endpoint,
    pub role: Role,
    pub mode: Mode,
    /// Present on consensus nodes.
    pub counter: Option<TrustedCounter>,
    pub committee: Option<CommitteeView>,
    pub verifier: VerifierView,
    /// `(committee, sequence) -> digest` accepted by this node.
    pub log: BTreeMap<(NodeId, u64), Digest>,
    pub pending: BTreeMap<u64, LeaderRound>,
    pub buffered: Vec<ProtocolMessage>,
    /// Verification leader: entries waiting for the next block.
    pub batch: Vec<(BatchEntry, u64)>,
    pub ordering: Option<Ordering>,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ProtocolEvent {
    Attested { node: NodeId, value: u64 },
    Accepted { node: NodeId, committee: NodeId, sequence: u64, digest: Digest },
    EquivocationAlarm { node: Endpoint, committee: NodeId, sequence: u64, reason: &'static str },
    Buffered { node: Endpoint, kind: MessageKind, sequence: u64 },
    CounterRefused { node: NodeId },
    Prepared { committee: NodeId, sequence: u64, quorum: usize },
    Stalled { committee: NodeId, sequence: u64 },
    Excluded(Exclusion),
    BlockBuilt { member: usize, block: Block },
    Committed { committee: NodeId, sequence: u64, digest: Digest, request: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub state: NodeState,
    pub outbox: Vec<(Endpoint, ProtocolMessage)>,
    pub events: Vec<ProtocolEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{failed} is not a member of the committee led by {leader}")]
    NotInCommittee { failed: NodeId, leader: NodeId },
    #[error("committee states contain no leader")]
    NoLeader,
}

/// Node states for every consensus node under `config`. Counters and logs
/// carried over from `previous` (indexed by node) survive reconfiguration.
pub fn committee_states(
    config: &Configuration,
    f: usize,
    verifier: VerifierView,
    previous: Option<&[NodeState]>,
) -> Vec<NodeState> {
    let mut out: Vec<NodeState> = (0..config.node_count())
        .map(|j| {
            let id = NodeId(j);
            let (counter, log) = match previous.and_then(|p| p.get(j)) {
                Some(prev) => (prev.counter.clone(), prev.log.clone()),
                None => (None, BTreeMap::new()),
            };
            NodeState {
                id: Endpoint::Node(id),
                role: Role::PassiveFollower,
                mode: Mode::Normal,
                counter: Some(counter.unwrap_or_else(|| TrustedCounter::new(id))),
                committee: None,
                verifier,
                log,
                pending: BTreeMap::new(),
                buffered: Vec::new(),
                batch: Vec::new(),
                ordering: None,
                blocks: Vec::new(),
            }
        })
        .collect();
    for c in config.committees() {
        let view = CommitteeView { leader: c.leader, active: c.active.clone(), passive: c.passive().collect(), f };
        let mode = if c.sigma { Mode::Fallback } else { Mode::Normal };
        let members = std::iter::once(c.leader).chain(c.followers.iter().copied());
        for j in members {
            let s = &mut out[j.0];
            s.role = if j == c.leader {
                Role::ConsensusLeader
            } else if c.active.contains(&j) {
                Role::ActiveFollower
            } else {
                Role::PassiveFollower
            };
            s.mode = mode;
            s.committee = Some(view.clone());
        }
    }
    out
}

/// Verification committee member states.
pub fn verifier_states(v: &VerificationCommittee, consensus_f: usize) -> Vec<NodeState> {
    let view =
        VerifierView { leader: v.leader, members: v.member_count, fault_tolerance: v.fault_tolerance, consensus_f };
    (0..v.member_count)
        .map(|k| NodeState {
            id: Endpoint::Verifier(k),
            role: if k == v.leader { Role::VerificationLeader } else { Role::VerificationFollower },
            mode: Mode::Normal,
            counter: None,
            committee: None,
            verifier: view,
            log: BTreeMap::new(),
            pending: BTreeMap::new(),
            buffered: Vec::new(),
            batch: Vec::new(),
            ordering: None,
            blocks: Vec::new(),
        })
        .collect()
}

struct Step {
    state: NodeState,
    outbox: Vec<(Endpoint, ProtocolMessage)>,
    events: Vec<ProtocolEvent>,
}

impl Step {
    fn new(state: &NodeState) -> Self {
        Step { state: state.clone(), outbox: Vec::new(), events: Vec::new() }
    }

    fn done(self) -> Transition {
        Transition { state: self.state, outbox: self.outbox, events: self.events }
    }

    fn send(&mut self, to: Endpoint, msg: ProtocolMessage) {
        self.outbox.push((to, msg));
    }

    fn alarm(&mut self, msg: &ProtocolMessage, reason: &'static str) {
        self.events.push(ProtocolEvent::EquivocationAlarm {
            node: self.state.id,
            committee: msg.committee,
            sequence: msg.sequence,
            reason,
        });
    }

    fn buffer(&mut self, msg: &ProtocolMessage) {
        self.events.push(ProtocolEvent::Buffered { node: self.state.id, kind: msg.kind, sequence: msg.sequence });
        self.state.buffered.push(msg.clone());
    }

    fn id(&self) -> NodeId {
        match self.state.id {
            Endpoint::Node(n) => n,
            _ => unreachable!("consensus handler on a non-consensus node"),
        }
    }

    fn view(&self) -> &CommitteeView {
        self.state.committee.as_ref().expect("consensus node without committee")
    }

    fn quorum(&self) -> usize {
        let f = self.view().f;
        match self.state.mode {
            Mode::Normal => 2 * f,
            Mode::Fallback => 3 * f,
        }
    }
}

/// Pure transition of `state` on receiving `msg`. `now` (microseconds) is
/// accepted for interface symmetry with the scheduler; no transition depends
/// on it.
pub fn handle_message(state: &NodeState, msg: &ProtocolMessage, _now: u64) -> Transition {
    let mut step = Step::new(state);
    dispatch(&mut step, msg);
    step.done()
}

fn dispatch(step: &mut Step, msg: &ProtocolMessage) {
    use MessageKind::*;
    match (step.state.role, msg.kind) {
        (Role::ConsensusLeader, Request) => leader_request(step, msg),
        (Role::ConsensusLeader, Prepare) => leader_prepare(step, msg),
        (Role::ConsensusLeader, CommitNotice) => leader_commit(step, msg),
        (Role::ActiveFollower | Role::PassiveFollower, PrePrepare) => follower_preprepare(step, msg),
        (Role::ActiveFollower | Role::PassiveFollower, FallbackActivate) => follower_activate(step, msg),
        (Role::VerificationLeader, AggregatePrepared) => verifier_collect(step, msg),
        (Role::VerificationLeader, VerifyAck) => verifier_ack(step, msg),
        (Role::VerificationFollower, VerifyPropose) => verifier_member(step, msg),
        _ => {}
    }
}

fn leader_request(step: &mut Step, msg: &ProtocolMessage) {
    let me = step.id();
    let next_classical = step.state.log.keys().filter(|k| k.0 == me).map(|k| k.1).max().unwrap_or(0) + 1;
    let counter = step.state.counter.as_mut().expect("consensus node has a counter");
    let attestation = if counter.is_compromised() {
        None
    } else {
        Some(counter_assign(counter, msg.digest).expect("healthy counter assigns"))
    };
    let sequence = match (step.state.mode, attestation) {
        (_, Some(att)) => {
            step.events.push(ProtocolEvent::Attested { node: me, value: att.value });
            att.value
        }
        (Mode::Fallback, None) => next_classical.max(step.state.counter.as_ref().map_or(0, |c| c.value()) + 1),
        (Mode::Normal, None) => {
            // the refusal is the failure signal; the request waits for fallback
            step.events.push(ProtocolEvent::CounterRefused { node: me });
            step.buffer(msg);
            return;
        }
    };
    step.state.log.insert((me, sequence), msg.digest);
    step.state.pending.insert(
        sequence,
        LeaderRound {
            digest: msg.digest,
            request: msg.request,
            payload_size: msg.payload_size,
            attestation,
            prepares: BTreeSet::new(),
            aggregated: false,
            recruited: false,
            committed: false,
        },
    );
    let targets = step.view().active.clone();
    send_preprepare(step, sequence, &targets);
    replay_buffered(step, sequence);
}

fn send_preprepare(step: &mut Step, sequence: u64, targets: &[NodeId]) {
    let me = step.id();
    let round = &step.state.pending[&sequence];
    let mut m = ProtocolMessage::new(MessageKind::PrePrepare, Endpoint::Node(me), me, sequence, round.digest);
    m.attestation = round.attestation;
    m.payload_size = round.payload_size;
    m.request = round.request;
    for &t in targets {
        step.send(Endpoint::Node(t), m.clone());
    }
}

/// Re-dispatches buffered messages for `sequence`.
fn replay_buffered(step: &mut Step, sequence: u64) {
    let (ready, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut step.state.buffered)
        .into_iter()
        .partition(|m| m.kind != MessageKind::Request && m.sequence == sequence);
    step.state.buffered = rest;
    for m in ready {
        dispatch(step, &m);
    }
}

fn leader_prepare(step: &mut Step, msg: &ProtocolMessage) {
    let Endpoint::Node(from) = msg.from else { return };
    let quorum = step.quorum();
    let view = step.view().clone();
    let Some(round) = step.state.pending.get_mut(&msg.sequence) else {
        step.buffer(msg);
        return;
    };
    let eligible = view.active.contains(&from) || (round.recruited && view.passive.contains(&from));
    if !eligible || msg.digest != round.digest || !msg.signatures.verify(round.digest, 1) {
        return;
    }
    round.prepares.insert(from);
    if round.aggregated || round.prepares.len() < quorum {
        return;
    }
    round.aggregated = true;
    let mut signers: BTreeSet<Endpoint> = round.prepares.iter().map(|&n| Endpoint::Node(n)).collect();
    signers.insert(Endpoint::Node(view.leader));
    let mut m = ProtocolMessage::new(
        MessageKind::AggregatePrepared,
        Endpoint::Node(view.leader),
        view.leader,
        msg.sequence,
        round.digest,
    );
    m.signatures = MultiSig { digest: round.digest, signers };
    m.payload_size = round.payload_size;
    m.request = round.request;
    step.events.push(ProtocolEvent::Prepared { committee: view.leader, sequence: msg.sequence, quorum });
    let v = step.state.verifier.leader;
    step.send(Endpoint::Verifier(v), m);
}

fn leader_commit(step: &mut Step, msg: &ProtocolMessage) {
    let quorum = step.state.verifier.quorum();
    let me = step.id();
    let Some(round) = step.state.pending.get_mut(&msg.sequence) else {
        step.buffer(msg);
        return;
    };
    let verified = msg.digest == round.digest
        && msg.signatures.signers.len() >= quorum
        && msg.signatures.signers.iter().all(|s| matches!(s, Endpoint::Verifier(_)));
    if !verified || round.committed {
        return;
    }
    round.committed = true;
    let mut reply = ProtocolMessage::new(MessageKind::Reply, Endpoint::Node(me), me, msg.sequence, round.digest);
    reply.request = round.request;
    step.events.push(ProtocolEvent::Committed {
        committee: me,
        sequence: msg.sequence,
        digest: round.digest,
        request: round.request,
    });
    step.send(Endpoint::Client, reply);
}

fn follower_preprepare(step: &mut Step, msg: &ProtocolMessage) {
    let me = step.id();
    let leader = step.view().leader;
    if msg.from != Endpoint::Node(leader) || msg.committee != leader {
        return;
    }
    // an attestation is always checked; only fallback mode accepts none
    let genuine = match msg.attestation {
        Some(a) => counter_verify(&a) && a.node == leader && a.value == msg.sequence && a.digest == msg.digest,
        None => step.state.mode == Mode::Fallback,
    };
    if !genuine {
        step.alarm(msg, "attestation check failed");
        return;
    }
    match step.state.log.get(&(leader, msg.sequence)) {
        Some(&d) if d != msg.digest => {
            step.alarm(msg, "sequence already bound to another digest");
            return;
        }
        Some(_) => {}
        None => {
            step.state.log.insert((leader, msg.sequence), msg.digest);
            step.events.push(ProtocolEvent::Accepted {
                node: me,
                committee: leader,
                sequence: msg.sequence,
                digest: msg.digest,
            });
        }
    }
    let mut prepare = ProtocolMessage::new(MessageKind::Prepare, Endpoint::Node(me), leader, msg.sequence, msg.digest);
    prepare.signatures = MultiSig::single(msg.digest, Endpoint::Node(me));
    step.send(Endpoint::Node(leader), prepare);
}

fn follower_activate(step: &mut Step, msg: &ProtocolMessage) {
    let leader = step.view().leader;
    if msg.from != Endpoint::Node(leader) {
        return;
    }
    step.state.mode = Mode::Fallback;
    step.state.role = Role::ActiveFollower;
    if let Some(view) = step.state.committee.as_mut() {
        view.active.append(&mut view.passive);
        view.active.sort();
    }
}

fn verifier_collect(step: &mut Step, msg: &ProtocolMessage) {
    let threshold = 2 * step.state.verifier.consensus_f + 1;
    let entry = BatchEntry {
        committee: msg.committee,
        sequence: msg.sequence,
        digest: msg.digest,
        signatures: msg.signatures.clone(),
    };
    if !msg.signatures.verify(msg.digest, threshold) {
        step.events
            .push(ProtocolEvent::Excluded(Exclusion::Unverified { committee: msg.committee, sequence: msg.sequence }));
        return;
    }
    step.state.batch.push((entry, msg.payload_size));
}

/// Verification leader: orders the collected batch into the next block and
/// starts the first proposal round. No-op while a block is in progress.
pub fn seal_block(state: &NodeState) -> Transition {
    let mut step = Step::new(state);
    if state.role != Role::VerificationLeader || state.ordering.is_some() {
        return step.done();
    }
    let batch = std::mem::take(&mut step.state.batch);
    let entries: Vec<BatchEntry> = batch.iter().map(|(e, _)| e.clone()).collect();
    let payloads = batch.iter().map(|(e, p)| ((e.committee, e.sequence), *p)).collect();
    let height = step.state.blocks.len() as u64 + 1;
    let quorum = 2 * state.verifier.consensus_f + 1;
    let (block, excluded) = total_order(&entries, height, quorum);
    step.events.extend(excluded.into_iter().map(ProtocolEvent::Excluded));
    step.state.ordering = Some(Ordering { block, round: 1, acks: BTreeSet::new(), payloads });
    propose(&mut step, &entries);
    step.done()
}

fn propose(step: &mut Step, entries: &[BatchEntry]) {
    let view = step.state.verifier;
    let ordering = step.state.ordering.as_ref().expect("ordering in progress");
    if view.quorum() <= 1 {
        // a lone verifier orders without exchanges
        finish_block(step);
        return;
    }
    let me = Endpoint::Verifier(view.leader);
    let height = ordering.block.height;
    let mut m = ProtocolMessage::new(MessageKind::VerifyPropose, me, NodeId(0), height, ordering.block.digest());
    m.round = ordering.round;
    if ordering.round == 1 {
        m.entries = entries.to_vec();
        m.payload_size = ordering.payloads.values().sum();
    }
    for k in (0..view.members).filter(|&k| k != view.leader) {
        step.send(Endpoint::Verifier(k), m.clone());
    }
}

fn verifier_ack(step: &mut Step, msg: &ProtocolMessage) {
    let Endpoint::Verifier(from) = msg.from else { return };
    let quorum = step.state.verifier.quorum();
    let Some(ordering) = step.state.ordering.as_mut() else { return };
    if msg.round != ordering.round || msg.sequence != ordering.block.height || msg.digest != ordering.block.digest() {
        return;
    }
    ordering.acks.insert(from);
    if ordering.acks.len() + 1 < quorum {
        return;
    }
    if ordering.round < 4 {
        ordering.round += 1;
        ordering.acks.clear();
        propose(step, &[]);
    } else {
        finish_block(step);
    }
}

fn finish_block(step: &mut Step) {
    let view = step.state.verifier;
    let ordering = step.state.ordering.take().expect("ordering in progress");
    let mut block = ordering.block;
    let mut signers: BTreeSet<Endpoint> = ordering.acks.iter().map(|&k| Endpoint::Verifier(k)).collect();
    signers.insert(Endpoint::Verifier(view.leader));
    block.signatures = MultiSig { digest: block.digest(), signers };
    let me = Endpoint::Verifier(view.leader);
    for &(committee, sequence, digest) in &block.transactions {
        let mut m = ProtocolMessage::new(MessageKind::CommitNotice, me, committee, sequence, digest);
        m.signatures = block.signatures.clone();
        step.send(Endpoint::Node(committee), m);
    }
    step.events.push(ProtocolEvent::BlockBuilt { member: view.leader, block: block.clone() });
    step.state.blocks.push(block);
}

fn verifier_member(step: &mut Step, msg: &ProtocolMessage) {
    let Endpoint::Verifier(me) = step.state.id else { return };
    if msg.from != Endpoint::Verifier(step.state.verifier.leader) {
        return;
    }
    if msg.round == 1 && !step.state.blocks.iter().any(|b| b.height == msg.sequence) {
        let quorum = 2 * step.state.verifier.consensus_f + 1;
        let (mut block, _) = total_order(&msg.entries, msg.sequence, quorum);
        if block.digest() != msg.digest {
            step.alarm(msg, "proposed block does not match its entries");
            return;
        }
        block.signatures = MultiSig::single(block.digest(), Endpoint::Verifier(me));
        step.events.push(ProtocolEvent::BlockBuilt { member: me, block: block.clone() });
        step.state.blocks.push(block);
    }
    let mut ack =
        ProtocolMessage::new(MessageKind::VerifyAck, Endpoint::Verifier(me), NodeId(0), msg.sequence, msg.digest);
    ack.round = msg.round;
    step.send(msg.from, ack);
}

/// Leader timer for `sequence`. In normal mode the first expiry without a
/// quorum recruits the passive followers; later expiries mark the round
/// stalled.
pub fn on_timeout(state: &NodeState, sequence: u64) -> Transition {
    let mut step = Step::new(state);
    if state.role != Role::ConsensusLeader {
        return step.done();
    }
    let view = step.view().clone();
    let mode = step.state.mode;
    let Some(round) = step.state.pending.get_mut(&sequence) else { return step.done() };
    if round.aggregated {
        return step.done();
    }
    if mode == Mode::Normal && !round.recruited && !view.passive.is_empty() {
        round.recruited = true;
        send_preprepare(&mut step, sequence, &view.passive);
    } else {
        step.events.push(ProtocolEvent::Stalled { committee: view.leader, sequence });
    }
    step.done()
}

/// Moves the committee containing `failed` to fallback mode.
///
/// `states` are the committee's member states in any order. The failed
/// node's counter is marked compromised, every member switches to
/// [`Mode::Fallback`] (passive followers become active), the leader's unprepared rounds restart under the
/// `3f` quorum and buffered requests are processed classically. Returns the
/// updated states (same order) and the messages to send: one
/// `FallbackActivate` per passive follower plus any restarted
/// `PrePrepare`s.
#[allow(clippy::type_complexity)]
pub fn trigger_fallback(
    states: &[NodeState],
    failed: NodeId,
) -> Result<(Vec<NodeState>, Vec<(Endpoint, ProtocolMessage)>), ProtocolError> {
    let li = states.iter().position(|s| s.role == Role::ConsensusLeader).ok_or(ProtocolError::NoLeader)?;
    let view = states[li].committee.clone().ok_or(ProtocolError::NoLeader)?;
    if !view.contains(failed) {
        return Err(ProtocolError::NotInCommittee { failed, leader: view.leader });
    }
    let mut out = states.to_vec();
    if let Some(s) = out.iter_mut().find(|s| s.id == Endpoint::Node(failed)) {
        if let Some(c) = s.counter.as_mut() {
            c.compromise();
        }
    }
    if out[li].mode == Mode::Fallback {
        return Ok((out, Vec::new()));
    }
    let mut all: Vec<NodeId> = view.active.iter().chain(&view.passive).copied().collect();
    all.sort();
    let widened = CommitteeView { active: all.clone(), passive: Vec::new(), ..view.clone() };
    let mut messages = Vec::new();
    for s in out.iter_mut() {
        if matches!(s.role, Role::ActiveFollower | Role::PassiveFollower) {
            s.role = Role::ActiveFollower;
            s.mode = Mode::Fallback;
            s.committee = Some(widened.clone());
        }
    }
    for &p in &view.passive {
        let m = ProtocolMessage::new(
            MessageKind::FallbackActivate,
            Endpoint::Node(view.leader),
            view.leader,
            0,
            Digest::default(),
        );
        messages.push((Endpoint::Node(p), m));
    }

    let mut step = Step::new(&out[li]);
    step.state.mode = Mode::Fallback;
    step.state.committee = Some(widened);
    let restart: Vec<u64> = step.state.pending.iter().filter(|(_, r)| !r.aggregated).map(|(&s, _)| s).collect();
    for seq in restart {
        let round = step.state.pending.get_mut(&seq).expect("pending round");
        round.prepares.clear();
        round.recruited = false;
        send_preprepare(&mut step, seq, &all);
    }
    let waiting: Vec<ProtocolMessage> = std::mem::take(&mut step.state.buffered);
    for m in waiting {
        dispatch(&mut step, &m);
    }
    messages.extend(step.outbox);
    out[li] = step.state;
    Ok((out, messages))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cco::Configuration;
    use crate::model::{uniform_instance, Micros};

    fn setup(sigma: bool) -> (Vec<NodeState>, Vec<NodeState>) {
        let mut inst = uniform_instance(4, 1, Micros(1000), Micros(1000), 4, Micros(100));
        if sigma {
            inst.nodes[3].tee_failed = true;
        }
        let config = Configuration::from_membership(&inst, vec![NodeId(0); 4]).unwrap();
        let vs = verifier_states(&inst.verification, 1);
        (committee_states(&config, 1, vs[0].verifier, None), vs)
    }

    fn count(outbox: &[(Endpoint, ProtocolMessage)], kind: MessageKind) -> usize {
        outbox.iter().filter(|(_, m)| m.kind == kind).count()
    }

    #[test]
    fn request_reaches_active_followers_only() {
        let (nodes, _) = setup(false);
        let t = handle_message(&nodes[0], &ProtocolMessage::request(NodeId(0), 1, 0), 0);
        assert_eq!(count(&t.outbox, MessageKind::PrePrepare), 2);
        let att = t.outbox[0].1.attestation.unwrap();
        assert_eq!(att.value, t.outbox[0].1.sequence);
        assert_eq!(att.value, 1);
    }

    #[test]
    fn fallback_committee_uses_three_followers() {
        let (nodes, _) = setup(true);
        assert_eq!(nodes[0].mode, Mode::Fallback);
        let t = handle_message(&nodes[0], &ProtocolMessage::request(NodeId(0), 1, 0), 0);
        assert_eq!(count(&t.outbox, MessageKind::PrePrepare), 3);
        // two prepares are not enough under the 3f quorum
        let mut leader = t.state;
        for f in [1, 2] {
            let t = handle_message(&nodes[f], &t.outbox[0].1, 0);
            let prep = &t.outbox[0].1;
            leader = handle_message(&leader, prep, 0).state;
        }
        assert!(!leader.pending[&1].aggregated);
    }

    #[test]
    fn replayed_preprepare_is_dropped() {
        let (nodes, _) = setup(false);
        let t = handle_message(&nodes[0], &ProtocolMessage::request(NodeId(0), 1, 0), 0);
        let (to, pp) = t.outbox[0].clone();
        let Endpoint::Node(f) = to else { panic!() };
        let first = handle_message(&nodes[f.0], &pp, 0);
        let mut forged = pp.clone();
        forged.digest = Digest(999);
        let second = handle_message(&first.state, &forged, 0);
        assert!(second.outbox.is_empty());
        assert!(matches!(second.events[0], ProtocolEvent::EquivocationAlarm { .. }));
        assert_eq!(second.state.log, first.state.log);
    }

    #[test]
    fn classical_mode_still_refuses_rebinding() {
        let (nodes, _) = setup(true);
        let t = handle_message(&nodes[0], &ProtocolMessage::request(NodeId(0), 1, 0), 0);
        let pp = t.outbox[0].1.clone();
        let first = handle_message(&nodes[1], &pp, 0);
        let mut forged = pp;
        forged.digest = Digest(5);
        forged.attestation = None;
        let second = handle_message(&first.state, &forged, 0);
        assert!(second.outbox.is_empty());
        assert_eq!(second.events.len(), 1);
    }

    #[test]
    fn handle_message_is_pure() {
        let (nodes, _) = setup(false);
        let m = ProtocolMessage::request(NodeId(0), 4, 10);
        assert_eq!(handle_message(&nodes[0], &m, 5), handle_message(&nodes[0], &m, 5));
    }

    #[test]
    fn leader_failure_activates_passive_once() {
        let (nodes, _) = setup(false);
        let (after, msgs) = trigger_fallback(&nodes, NodeId(0)).unwrap();
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].1.kind, MessageKind::FallbackActivate);
        assert!(after.iter().all(|s| s.mode == Mode::Fallback));
        assert_eq!(after[0].committee.as_ref().unwrap().active.len(), 3);
        let (again, msgs) = trigger_fallback(&after, NodeId(1)).unwrap();
        assert!(msgs.is_empty());
        assert!(again[1].counter.as_ref().unwrap().is_compromised());
        assert_eq!(again[0].mode, after[0].mode);
    }

    #[test]
    fn failed_node_must_belong_to_committee() {
        let (nodes, _) = setup(false);
        assert!(matches!(trigger_fallback(&nodes, NodeId(9)), Err(ProtocolError::NotInCommittee { .. })));
    }

    #[test]
    fn compromised_leader_waits_for_fallback() {
        let (mut nodes, _) = setup(false);
        nodes[0].counter.as_mut().unwrap().compromise();
        let t = handle_message(&nodes[0], &ProtocolMessage::request(NodeId(0), 1, 0), 0);
        assert!(t.outbox.is_empty());
        assert_eq!(t.events[0], ProtocolEvent::CounterRefused { node: NodeId(0) });
        nodes[0] = t.state;
        let (_, msgs) = trigger_fallback(&nodes, NodeId(0)).unwrap();
        let preprepares: Vec<_> = msgs.iter().filter(|(_, m)| m.kind == MessageKind::PrePrepare).collect();
        assert_eq!(preprepares.len(), 3);
        assert!(preprepares.iter().all(|(_, m)| m.attestation.is_none() && m.sequence == 1));
    }
}
