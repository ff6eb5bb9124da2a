use std::cmp::{Ordering as CmpOrdering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::report::{FaultLogEntry, SafetyAudit, SimReport, TxRecord};
use super::{Arrival, FaultPlan, SimOptions, Target, Workload};
use crate::cco::{reoptimize_fallback, verification_time, Configuration};
use crate::model::{Instance, NodeId};
use crate::protocol::{
    committee_states, handle_message, on_timeout, seal_block, trigger_fallback, verifier_states, Digest, Endpoint,
    MessageKind, Mode, NodeState, ProtocolEvent, ProtocolMessage, Role, TraceRecord, Transition, VerifierView,
};

enum EventKind {
    Deliver { to: Endpoint, msg: ProtocolMessage },
    Arrive { request: u64 },
    StartRound,
    SealCheck { round: u64 },
    RoundTimeout { round: u64 },
    LeaderTimer { leader: NodeId, sequence: u64 },
    ReplyDue { round: u64, leader: NodeId },
    Crash(NodeId),
    TeeFail(NodeId),
    TeeRecover(NodeId),
}

struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Analytic phase budget of the running configuration.
#[derive(Clone, Copy, Debug)]
struct Budget {
    pre: u64,
    cv: u64,
    ver: u64,
    vc: u64,
    com: u64,
}

impl Budget {
    fn total(&self) -> u64 {
        self.pre + self.cv + self.ver + self.vc + self.com
    }
}

#[derive(Debug)]
struct Slot {
    request: u64,
    submitted: u64,
    sequence: Option<u64>,
    agg_release: Option<u64>,
    commit_start: Option<u64>,
    reply_at: Option<u64>,
    committed: bool,
    stalled: bool,
}

impl Slot {
    fn done(&self) -> bool {
        self.committed || self.stalled
    }
}

struct Round {
    index: u64,
    start: u64,
    budget: Budget,
    slots: BTreeMap<NodeId, Slot>,
    arrived: BTreeSet<NodeId>,
    sealed_at: Option<u64>,
    v_release: Option<u64>,
}

pub(super) struct Engine<'a> {
    instance: &'a Instance,
    opts: &'a SimOptions,
    workload: &'a Workload,
    faults: &'a FaultPlan,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,

    config: Configuration,
    leaders: Vec<NodeId>,
    nodes: Vec<NodeState>,
    verifiers: Vec<NodeState>,
    v_leader: usize,
    crashed: BTreeSet<NodeId>,
    dead: BTreeSet<NodeId>,
    failed_tees: BTreeSet<NodeId>,
    reconfigure_pending: bool,

    backlog: VecDeque<(u64, Option<u64>)>,
    round: Option<Round>,
    rounds: u64,
    start_scheduled: bool,
    last_start: Option<u64>,

    records: Vec<TxRecord>,
    stalled: u64,
    reconfigurations: u64,
    fault_log: Vec<FaultLogEntry>,
    trace: Vec<TraceRecord>,

    attested: BTreeMap<NodeId, u64>,
    accepted: BTreeMap<(NodeId, u64), BTreeSet<Digest>>,
    replies: BTreeMap<(NodeId, u64), BTreeSet<Digest>>,
    audit: SafetyAudit,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        instance: &'a Instance,
        config: &Configuration,
        workload: &'a Workload,
        faults: &'a FaultPlan,
        seed: u64,
        opts: &'a SimOptions,
    ) -> Self {
        let f = instance.params.f;
        let verifiers = verifier_states(&instance.verification, f);
        let v_view: VerifierView = verifiers[0].verifier;
        let failed_tees: BTreeSet<NodeId> = instance.node_ids().filter(|&j| instance.tee_failed(j)).collect();
        let mut nodes = committee_states(config, f, v_view, None);
        for &j in &failed_tees {
            if let Some(c) = nodes[j.0].counter.as_mut() {
                c.compromise();
            }
        }
        let mut engine = Engine {
            instance,
            opts,
            workload,
            faults,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            next_seq: 0,
            leaders: config.leaders(),
            config: config.clone(),
            nodes,
            verifiers,
            v_leader: instance.verification.leader,
            crashed: BTreeSet::new(),
            dead: BTreeSet::new(),
            failed_tees,
            reconfigure_pending: false,
            backlog: VecDeque::new(),
            round: None,
            rounds: 0,
            start_scheduled: false,
            last_start: None,
            records: Vec::new(),
            stalled: 0,
            reconfigurations: 0,
            fault_log: Vec::new(),
            trace: Vec::new(),
            attested: BTreeMap::new(),
            accepted: BTreeMap::new(),
            replies: BTreeMap::new(),
            audit: SafetyAudit::default(),
        };
        for (&j, &t) in &faults.crashes {
            engine.schedule(t.0, EventKind::Crash(j));
        }
        for (&j, &t) in &faults.tee_failures {
            engine.schedule(t.0, EventKind::TeeFail(j));
        }
        for (&j, &t) in &faults.tee_recoveries {
            engine.schedule(t.0, EventKind::TeeRecover(j));
        }
        match workload.arrival {
            Arrival::ClosedLoop => {
                engine.backlog = (0..workload.total_requests).map(|k| (k, None)).collect();
                if workload.total_requests > 0 {
                    engine.start_scheduled = true;
                    engine.schedule(0, EventKind::StartRound);
                }
            }
            Arrival::Poisson { rate } => {
                let exp = Exp::new(rate / 1e6).expect("positive rate");
                let mut t = 0.0f64;
                for k in 0..workload.total_requests {
                    t += exp.sample(&mut engine.rng);
                    engine.schedule(t.round() as u64, EventKind::Arrive { request: k });
                }
            }
        }
        engine
    }

    fn schedule(&mut self, time: u64, kind: EventKind) {
        self.queue.push(Reverse(Event { time, seq: self.next_seq, kind }));
        self.next_seq += 1;
    }

    fn log(&mut self, t: u64, event: String) {
        self.fault_log.push(FaultLogEntry { t, event });
    }

    pub(super) fn run(mut self) -> SimReport {
        while let Some(Reverse(ev)) = self.queue.pop() {
            let t = ev.time;
            match ev.kind {
                EventKind::Deliver { to, msg } => self.deliver(t, to, msg),
                EventKind::Arrive { request } => {
                    self.backlog.push_back((request, Some(t)));
                    self.request_start(t);
                }
                EventKind::StartRound => {
                    self.start_scheduled = false;
                    self.start_round(t);
                }
                EventKind::SealCheck { round } => {
                    if self.current(round) {
                        self.maybe_seal(t);
                    }
                }
                EventKind::RoundTimeout { round } => self.round_timeout(t, round),
                EventKind::LeaderTimer { leader, sequence } => {
                    if !self.crashed.contains(&leader) {
                        let tr = on_timeout(&self.nodes[leader.0], sequence);
                        self.apply(t, Endpoint::Node(leader), tr);
                    }
                }
                EventKind::ReplyDue { round, leader } => self.reply_due(t, round, leader),
                EventKind::Crash(j) => self.crash(t, j),
                EventKind::TeeFail(j) => self.tee_fail(t, j),
                EventKind::TeeRecover(j) => self.tee_recover(t, j),
            }
        }
        self.finish()
    }

    fn current(&self, round: u64) -> bool {
        self.round.as_ref().is_some_and(|r| r.index == round)
    }

    // ----- rounds -----

    fn request_start(&mut self, t: u64) {
        if self.round.is_some() || self.start_scheduled || self.backlog.is_empty() {
            return;
        }
        let earliest = self.last_start.map_or(0, |s| s + self.opts.verifier.min_block_interval.0);
        self.start_scheduled = true;
        self.schedule(t.max(earliest), EventKind::StartRound);
    }

    fn budget(&self) -> Budget {
        let inst = self.instance;
        let mut link = 0;
        for &l in &self.leaders {
            if let Some(view) = &self.nodes[l.0].committee {
                for &a in &view.active {
                    link = link.max(inst.rtt(l, a).0);
                }
            }
        }
        let cv = self.leaders.iter().map(|l| inst.delays.to_verifier[l.0].0).max().unwrap_or(0);
        let vc = self.leaders.iter().map(|l| inst.delays.from_verifier[l.0].0).max().unwrap_or(0);
        Budget { pre: 2 * link, cv, ver: verification_time(inst).0, vc, com: 2 * link }
    }

    /// Picks this round's requests, stalling those aimed at dead committees.
    fn select(&mut self, t: u64) -> Vec<(NodeId, u64, u64)> {
        let p = self.leaders.len();
        let live = self.leaders.iter().filter(|l| !self.dead.contains(l)).count();
        let capacity = self.opts.verifier.block_capacity.unwrap_or(usize::MAX).max(1).min(live);
        let mut chosen: Vec<(NodeId, u64, u64)> = Vec::new();
        let mut keep = VecDeque::new();
        while let Some((k, submitted)) = self.backlog.pop_front() {
            let idx = match self.workload.target {
                Target::RoundRobin => (k % p as u64) as usize,
                Target::Pinned(i) => i.min(p - 1),
            };
            let leader = self.leaders[idx];
            if self.dead.contains(&leader) {
                self.stalled += 1;
                self.log(t, format!("request {k} stalled: committee {leader} has crashed"));
            } else if chosen.len() < capacity && !chosen.iter().any(|c| c.0 == leader) {
                chosen.push((leader, k, submitted.unwrap_or(t)));
            } else {
                keep.push_back((k, submitted));
            }
            if capacity > 0 && chosen.len() == capacity {
                break;
            }
        }
        keep.append(&mut self.backlog);
        self.backlog = keep;
        chosen
    }

    fn start_round(&mut self, t: u64) {
        if self.round.is_some() {
            return;
        }
        if self.reconfigure_pending {
            self.reconfigure(t);
        }
        let chosen = self.select(t);
        if chosen.is_empty() {
            return;
        }
        let budget = self.budget();
        let payload = self.workload.payload_bytes;
        let start = t + self.opts.client_delay.0 + self.transmission(payload);
        let index = self.rounds;
        self.rounds += 1;
        self.last_start = Some(t);
        let mut slots = BTreeMap::new();
        for &(leader, request, submitted) in &chosen {
            slots.insert(
                leader,
                Slot {
                    request,
                    submitted,
                    sequence: None,
                    agg_release: None,
                    commit_start: None,
                    reply_at: None,
                    committed: false,
                    stalled: false,
                },
            );
            let msg = ProtocolMessage::request(leader, request, payload);
            self.schedule(start, EventKind::Deliver { to: Endpoint::Node(leader), msg });
        }
        self.round =
            Some(Round { index, start, budget, slots, arrived: BTreeSet::new(), sealed_at: None, v_release: None });
        self.schedule(start + budget.pre + budget.cv, EventKind::SealCheck { round: index });
        let stall = self.opts.stall_factor.max(1) * budget.total().max(1000);
        self.schedule(start + stall, EventKind::RoundTimeout { round: index });
    }

    fn maybe_seal(&mut self, t: u64) {
        let Some(r) = self.round.as_ref() else { return };
        if r.sealed_at.is_some() || t < r.start + r.budget.pre + r.budget.cv {
            return;
        }
        let waiting = r.slots.keys().any(|l| !r.arrived.contains(l) && !self.crashed.contains(l));
        if !waiting {
            self.seal(t);
        }
    }

    fn seal(&mut self, t: u64) {
        let r = self.round.as_mut().expect("round in progress");
        r.sealed_at = Some(t);
        if r.arrived.is_empty() {
            return;
        }
        let tr = seal_block(&self.verifiers[self.v_leader]);
        self.apply(t, Endpoint::Verifier(self.v_leader), tr);
    }

    fn round_timeout(&mut self, t: u64, round: u64) {
        if !self.current(round) {
            return;
        }
        let r = self.round.as_mut().expect("current round");
        let mut lost = Vec::new();
        for (&leader, slot) in r.slots.iter_mut() {
            if !slot.done() && slot.reply_at.is_none() {
                slot.stalled = true;
                lost.push((leader, slot.request));
            }
        }
        let unsealed = r.sealed_at.is_none();
        for (leader, request) in lost {
            self.stalled += 1;
            self.log(t, format!("request {request} stalled in committee {leader}"));
        }
        if unsealed {
            self.seal(t);
        }
        self.check_finish(t);
    }

    fn reply_due(&mut self, t: u64, round: u64, leader: NodeId) {
        if !self.current(round) {
            return;
        }
        let r = self.round.as_mut().expect("current round");
        let Some(slot) = r.slots.get_mut(&leader) else { return };
        if slot.done() {
            return;
        }
        slot.committed = true;
        let agg = slot.agg_release.unwrap_or(r.start);
        let sealed = r.sealed_at.unwrap_or(agg);
        let released = r.v_release.unwrap_or(sealed);
        let commit_start = slot.commit_start.unwrap_or(released);
        self.records.push(TxRecord {
            request: slot.request,
            committee: leader.0,
            round,
            submitted: slot.submitted,
            started: r.start,
            committed: t,
            t_pre: agg.saturating_sub(r.start),
            t_cv: sealed.saturating_sub(agg),
            t_ver: released.saturating_sub(sealed),
            t_vc: commit_start.saturating_sub(released),
            t_com: t.saturating_sub(commit_start),
        });
        self.check_finish(t);
    }

    fn check_finish(&mut self, t: u64) {
        let finished = self.round.as_ref().is_some_and(|r| r.slots.values().all(Slot::done));
        if !finished {
            return;
        }
        self.round = None;
        // the reply reaches the client, which issues the next request
        self.request_start(t + self.opts.client_delay.0);
    }

    // ----- faults -----

    fn crash(&mut self, t: u64, j: NodeId) {
        self.crashed.insert(j);
        self.log(t, format!("node {j} crashed"));
        if self.config.is_leader(j) {
            self.dead.insert(j);
            self.log(t, format!("committee {j} lost its leader"));
        }
    }

    fn committee_members(&self, leader: NodeId) -> Vec<NodeId> {
        let mut members = vec![leader];
        if let Some(view) = &self.nodes[leader.0].committee {
            members.extend(view.active.iter().chain(&view.passive));
        }
        members
    }

    fn tee_fail(&mut self, t: u64, j: NodeId) {
        self.failed_tees.insert(j);
        self.log(t, format!("TEE of node {j} failed"));
        let leader = self.config.leader_of[j.0];
        let members = self.committee_members(leader);
        let states: Vec<NodeState> = members.iter().map(|m| self.nodes[m.0].clone()).collect();
        match trigger_fallback(&states, j) {
            Ok((updated, messages)) => {
                let was_normal = states[0].mode == Mode::Normal;
                for (m, s) in members.iter().zip(updated) {
                    self.nodes[m.0] = s;
                }
                if was_normal {
                    self.log(t, format!("committee {leader} switched to fallback"));
                }
                for (to, msg) in messages {
                    self.route(t, Endpoint::Node(leader), to, msg);
                }
            }
            Err(e) => self.log(t, format!("fallback not triggered: {e}")),
        }
        if self.opts.adaptive {
            self.reconfigure_pending = true;
        }
    }

    fn tee_recover(&mut self, t: u64, j: NodeId) {
        self.failed_tees.remove(&j);
        let floor = self.nodes[j.0].log.keys().filter(|k| k.0 == j).map(|k| k.1).max().unwrap_or(0);
        if let Some(c) = self.nodes[j.0].counter.as_mut() {
            c.recover(floor);
        }
        self.log(t, format!("TEE of node {j} recovered"));
        self.reconfigure_pending = true;
    }

    /// Applied at a round boundary. Counters and logs carry over.
    fn reconfigure(&mut self, t: u64) {
        self.reconfigure_pending = false;
        if self.opts.adaptive {
            let mut base = self.instance.clone();
            for (j, node) in base.nodes.iter_mut().enumerate() {
                node.tee_failed = false;
                if self.crashed.contains(&NodeId(j)) {
                    node.crash_rate = 1.0;
                }
            }
            match reoptimize_fallback(&base, &self.failed_tees, &self.config, &self.opts.limits) {
                Ok(sol) if sol.config != self.config => {
                    self.reconfigurations += 1;
                    self.log(
                        t,
                        format!(
                            "reconfigured to {} committees, t_tr {:.3} ms",
                            sol.config.committee_count,
                            sol.latency.t_tr.as_ms()
                        ),
                    );
                    self.config = sol.config;
                }
                Ok(_) => {}
                Err(e) => self.log(t, format!("re-optimization failed: {e}")),
            }
        }
        let v_view = self.verifiers[0].verifier;
        self.nodes = committee_states(&self.config, self.instance.params.f, v_view, Some(&self.nodes));
        self.leaders = self.config.leaders();
        // membership kept under a failed TEE still runs the fallback path
        for leader in self.leaders.clone() {
            let members = self.committee_members(leader);
            let Some(&bad) = members.iter().find(|m| self.failed_tees.contains(m)) else { continue };
            if self.nodes[leader.0].mode == Mode::Fallback {
                continue;
            }
            let states: Vec<NodeState> = members.iter().map(|m| self.nodes[m.0].clone()).collect();
            if let Ok((updated, _)) = trigger_fallback(&states, bad) {
                for (m, s) in members.iter().zip(updated) {
                    self.nodes[m.0] = s;
                }
            }
        }
        self.dead = self.leaders.iter().copied().filter(|l| self.crashed.contains(l)).collect();
    }

    // ----- messages -----

    fn transmission(&self, bytes: u64) -> u64 {
        if bytes == 0 {
            return 0;
        }
        (bytes * 8 * 1_000_000).div_ceil(self.opts.bandwidth_bps)
    }

    fn link_delay(&mut self, from: Endpoint, to: Endpoint) -> u64 {
        let d = &self.instance.delays;
        let base = match (from, to) {
            (Endpoint::Node(a), Endpoint::Node(b)) => d.between[a.0][b.0].0,
            (Endpoint::Node(a), Endpoint::Verifier(_)) => d.to_verifier[a.0].0,
            (Endpoint::Verifier(_), Endpoint::Node(b)) => d.from_verifier[b.0].0,
            (Endpoint::Verifier(a), Endpoint::Verifier(b)) => self.instance.verification.delays[a][b].0,
            _ => self.opts.client_delay.0,
        };
        let slow = [from, to].iter().any(|e| matches!(e, Endpoint::Node(n) if self.faults.slow_nodes.contains(n)));
        let mut delay = base as f64;
        if slow {
            delay *= self.faults.slow_factor;
        }
        if self.opts.jitter > 0.0 {
            delay *= 1.0 + self.rng.gen::<f64>() * self.opts.jitter;
        }
        delay.round() as u64
    }

    fn deliver(&mut self, t: u64, to: Endpoint, msg: ProtocolMessage) {
        if let Endpoint::Node(j) = to {
            if self.crashed.contains(&j) {
                return;
            }
        }
        if self.opts.trace {
            self.trace.push(TraceRecord::new(t, to, &msg));
        }
        let tr = match to {
            Endpoint::Client => return,
            Endpoint::Node(j) => handle_message(&self.nodes[j.0], &msg, t),
            Endpoint::Verifier(k) => handle_message(&self.verifiers[k], &msg, t),
        };
        self.apply(t, to, tr);
        match (to, msg.kind) {
            (Endpoint::Verifier(k), MessageKind::AggregatePrepared) if k == self.v_leader => {
                if let Some(r) = self.round.as_mut() {
                    if r.slots.get(&msg.committee).is_some_and(|s| s.sequence == Some(msg.sequence)) {
                        r.arrived.insert(msg.committee);
                    }
                }
                self.maybe_seal(t);
            }
            _ => {}
        }
    }

    /// Records which sequence the leader gave this round's request and arms
    /// its recruitment timer at the end of the prepare budget.
    fn bind_sequence(&mut self, t: u64, leader: NodeId) {
        let Some(r) = self.round.as_mut() else { return };
        let Some(slot) = r.slots.get_mut(&leader) else { return };
        if slot.sequence.is_some() {
            return;
        }
        let found = self.nodes[leader.0].pending.iter().find(|(_, p)| p.request == slot.request).map(|(&s, _)| s);
        if let Some(sequence) = found {
            slot.sequence = Some(sequence);
            let deadline = (r.start + r.budget.pre).max(t);
            self.schedule(deadline, EventKind::LeaderTimer { leader, sequence });
        }
    }

    fn apply(&mut self, t: u64, who: Endpoint, tr: Transition) {
        let Transition { state, outbox, events } = tr;
        for ev in &events {
            self.audit_event(ev);
        }
        match who {
            Endpoint::Node(j) => {
                self.nodes[j.0] = state;
                if self.nodes[j.0].role == Role::ConsensusLeader {
                    self.bind_sequence(t, j);
                }
            }
            Endpoint::Verifier(k) => self.verifiers[k] = state,
            Endpoint::Client => {}
        }
        for (to, msg) in outbox {
            self.route(t, who, to, msg);
        }
    }

    fn audit_event(&mut self, ev: &ProtocolEvent) {
        match *ev {
            ProtocolEvent::Attested { node, value } => {
                let last = self.attested.entry(node).or_insert(0);
                if value <= *last {
                    self.audit.counter_violations += 1;
                }
                *last = value;
            }
            ProtocolEvent::Accepted { node, committee, sequence, digest } => {
                if self.nodes[node.0].log.get(&(committee, sequence)).is_some_and(|&d| d != digest) {
                    self.audit.sequence_rebinds += 1;
                }
                self.accepted.entry((committee, sequence)).or_default().insert(digest);
            }
            ProtocolEvent::EquivocationAlarm { .. } => self.audit.equivocation_alarms += 1,
            ProtocolEvent::Committed { committee, sequence, digest, .. } => {
                self.replies.entry((committee, sequence)).or_default().insert(digest);
            }
            _ => {}
        }
    }

    /// Sends one message, pacing phase boundaries to the round budget.
    fn route(&mut self, t: u64, from: Endpoint, to: Endpoint, msg: ProtocolMessage) {
        if let Endpoint::Node(j) = from {
            if self.crashed.contains(&j) {
                return;
            }
        }
        let mut depart = t;
        match (from, msg.kind) {
            (Endpoint::Node(l), MessageKind::AggregatePrepared) => {
                if let Some(r) = self.round.as_mut() {
                    let start = r.start + r.budget.pre;
                    if let Some(slot) = r.slots.get_mut(&l).filter(|s| s.sequence == Some(msg.sequence)) {
                        depart = depart.max(start);
                        slot.agg_release = Some(depart);
                    }
                }
            }
            (Endpoint::Verifier(_), MessageKind::CommitNotice) => {
                if let Some(r) = self.round.as_mut() {
                    if let Some(sealed) = r.sealed_at {
                        depart = depart.max(sealed + r.budget.ver);
                        r.v_release.get_or_insert(depart);
                    }
                }
            }
            (Endpoint::Node(l), MessageKind::Reply) => {
                if let Some(r) = self.round.as_mut() {
                    let released = r.v_release.unwrap_or(t);
                    let (vc, com, index) = (r.budget.vc, r.budget.com, r.index);
                    if let Some(slot) = r.slots.get_mut(&l).filter(|s| s.sequence == Some(msg.sequence) && !s.done()) {
                        let commit_start = t.max(released + vc);
                        depart = commit_start + com;
                        slot.commit_start = Some(commit_start);
                        slot.reply_at = Some(depart);
                        self.schedule(depart, EventKind::ReplyDue { round: index, leader: l });
                    }
                }
            }
            _ => {}
        }
        let mut arrive = depart + self.link_delay(from, to);
        if msg.payload_size > 0 {
            arrive += self.transmission(msg.payload_size);
        }
        let forge = msg.kind == MessageKind::PrePrepare
            && matches!(from, Endpoint::Node(l) if self.faults.equivocators.contains(&l));
        if forge {
            let mut forged = msg.clone();
            forged.digest = Digest::of(&[msg.digest.0, 0xbad]);
            self.audit.equivocation_attempts += 1;
            // the replay trails the genuine message
            self.schedule(arrive + 1, EventKind::Deliver { to, msg: forged });
        }
        self.schedule(arrive, EventKind::Deliver { to, msg });
    }

    fn finish(mut self) -> SimReport {
        self.audit.accepted_equivocations = self.accepted.values().filter(|d| d.len() > 1).count() as u64;
        self.audit.conflicting_replies = self.replies.values().filter(|d| d.len() > 1).count() as u64;
        let reference = &self.verifiers[self.v_leader].blocks;
        self.audit.blocks = reference.len() as u64;
        for member in &self.verifiers {
            for b in &member.blocks {
                let agrees = reference.iter().any(|r| r.height == b.height && r.transactions == b.transactions);
                if !agrees {
                    self.audit.block_mismatches += 1;
                }
            }
        }
        let committed = self.records.len() as u64;
        let total = self.workload.total_requests;
        SimReport {
            total_requests: total,
            wall_time: self.records.iter().map(|r| r.committed).max().unwrap_or(0),
            stalled: self.stalled,
            in_flight: total.saturating_sub(committed + self.stalled),
            rounds: self.rounds,
            reconfigurations: self.reconfigurations,
            fault_log: self.fault_log,
            audit: self.audit,
            trace: self.trace,
            transactions: self.records,
        }
    }
}
