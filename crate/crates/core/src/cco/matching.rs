//! Degree-constrained bipartite feasibility for a fixed leader set.
//!
//! Every leader owns `3f` follower slots. With fallback flag `sigma` it needs
//! `(2+sigma)f` *near* slots, filled by nodes whose round trip to the leader
//! is within the bottleneck threshold, and the remaining `(1-sigma)f` slots
//! may take any node. Nodes with a failed TEE may only join committees whose
//! flag is set. A leader set is feasible at a threshold iff every slot can be
//! matched to a distinct non-leader node (augmenting paths, Kuhn style).

use super::constraints::required_links;
use super::{CcoError, Configuration, InfeasibleCause};
use crate::model::{Instance, Micros, NodeId};

#[derive(Clone, Copy, Debug)]
struct Slot {
    owner: usize,
    near: bool,
}

/// For every node, all other nodes by ascending round trip, ties by id.
pub(crate) struct NearOrder(Vec<Vec<NodeId>>);

impl NearOrder {
    pub(crate) fn new(instance: &Instance) -> Self {
        NearOrder(
            instance
                .node_ids()
                .map(|i| {
                    let mut others: Vec<NodeId> = instance.node_ids().filter(|&j| j != i).collect();
                    others.sort_by_key(|&j| (instance.rtt(i, j), j));
                    others
                })
                .collect(),
        )
    }

    pub(crate) fn of(&self, i: NodeId) -> &[NodeId] {
        &self.0[i.0]
    }
}

/// Saved matcher state: leader flags, owner and slot counts, both matchings.
type Backup = (Vec<bool>, usize, usize, Vec<Option<NodeId>>, Vec<Option<usize>>);

#[derive(Clone)]
pub(crate) struct SlotMatcher<'a> {
    instance: &'a Instance,
    order: &'a NearOrder,
    threshold: Micros,
    is_leader: Vec<bool>,
    /// `(leader, sigma)` per committee.
    owners: Vec<(NodeId, bool)>,
    slots: Vec<Slot>,
    slot_node: Vec<Option<NodeId>>,
    node_slot: Vec<Option<usize>>,
}

impl<'a> SlotMatcher<'a> {
    pub(crate) fn new(instance: &'a Instance, order: &'a NearOrder, threshold: Micros) -> Self {
        let n = instance.node_count();
        SlotMatcher {
            instance,
            order,
            threshold,
            is_leader: vec![false; n],
            owners: Vec::new(),
            slots: Vec::new(),
            slot_node: Vec::new(),
            node_slot: vec![None; n],
        }
    }

    pub(crate) fn leader_count(&self) -> usize {
        self.owners.len()
    }

    pub(crate) fn leaders(&self) -> Vec<NodeId> {
        self.owners.iter().map(|o| o.0).collect()
    }

    pub(crate) fn flagged_leaders(&self) -> Vec<(NodeId, bool)> {
        self.owners.clone()
    }

    pub(crate) fn has_sigma_leader(&self) -> bool {
        self.owners.iter().any(|o| o.1)
    }

    /// Adds a leader with its slots. On failure the matcher is left
    /// unchanged and `false` is returned.
    pub(crate) fn add_leader(&mut self, leader: NodeId, sigma: bool) -> bool {
        let backup = self.clone_state();
        let mut pending = Vec::new();
        self.is_leader[leader.0] = true;
        if let Some(s) = self.node_slot[leader.0].take() {
            self.slot_node[s] = None;
            pending.push(s);
        }
        let owner = self.owners.len();
        self.owners.push((leader, sigma));
        let f = self.instance.params.f;
        let near = required_links(f, sigma);
        for k in 0..3 * f {
            self.slots.push(Slot { owner, near: k < near });
            self.slot_node.push(None);
            pending.push(self.slots.len() - 1);
        }
        for s in pending {
            let mut visited = vec![false; self.node_slot.len()];
            if !self.augment(s, &mut visited) {
                self.restore(backup);
                return false;
            }
        }
        true
    }

    fn admits(&self, slot: Slot, j: NodeId) -> bool {
        let (leader, sigma) = &self.owners[slot.owner];
        !self.is_leader[j.0]
            && (*sigma || !self.instance.tee_failed(j))
            && (!slot.near || self.instance.rtt(*leader, j) <= self.threshold)
    }

    fn augment(&mut self, s: usize, visited: &mut [bool]) -> bool {
        let slot = self.slots[s];
        let leader = self.owners[slot.owner].0;
        let order = self.order;
        for &j in order.of(leader) {
            if slot.near && self.instance.rtt(leader, j) > self.threshold {
                // candidates are sorted; nothing further is near
                break;
            }
            if visited[j.0] || !self.admits(slot, j) {
                continue;
            }
            visited[j.0] = true;
            let free = match self.node_slot[j.0] {
                None => true,
                Some(other) => self.augment(other, visited),
            };
            if free {
                self.slot_node[s] = Some(j);
                self.node_slot[j.0] = Some(s);
                return true;
            }
        }
        false
    }

    fn clone_state(&self) -> Backup {
        (self.is_leader.clone(), self.owners.len(), self.slots.len(), self.slot_node.clone(), self.node_slot.clone())
    }

    fn restore(&mut self, backup: Backup) {
        let (is_leader, owners, slots, slot_node, node_slot) = backup;
        self.is_leader = is_leader;
        self.owners.truncate(owners);
        self.slots.truncate(slots);
        self.slot_node = slot_node;
        self.node_slot = node_slot;
    }

    /// Completes the matching into a membership map. Unmatched nodes join
    /// the nearest admissible leader. Returns `None` if a node with a failed
    /// TEE has no flagged committee to join.
    pub(crate) fn membership(&self) -> Option<Vec<NodeId>> {
        let n = self.instance.node_count();
        let mut leader_of: Vec<Option<NodeId>> = vec![None; n];
        for (leader, _) in &self.owners {
            leader_of[leader.0] = Some(*leader);
        }
        for (s, node) in self.slot_node.iter().enumerate() {
            if let Some(j) = node {
                leader_of[j.0] = Some(self.owners[self.slots[s].owner].0);
            }
        }
        for (j, slot) in leader_of.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            let failed = self.instance.nodes[j].tee_failed;
            let target = self
                .owners
                .iter()
                .filter(|(_, sigma)| *sigma || !failed)
                .min_by_key(|(l, _)| (self.instance.rtt(*l, NodeId(j)), *l))?;
            *slot = Some(target.0);
        }
        leader_of.into_iter().collect()
    }
}

/// Matches the whole leader set at `threshold`; `None` if infeasible.
pub(crate) fn match_leaders<'a>(
    instance: &'a Instance,
    order: &'a NearOrder,
    leaders: &[(NodeId, bool)],
    threshold: Micros,
) -> Option<SlotMatcher<'a>> {
    let mut m = SlotMatcher::new(instance, order, threshold);
    for &(l, sigma) in leaders {
        if !m.add_leader(l, sigma) {
            return None;
        }
    }
    Some(m)
}

/// Index of the smallest threshold in `rtts[start..end]` at which the flagged
/// leader set admits a complete membership. Feasibility is monotone in the
/// threshold, so only `end - 1` is probed when it fails.
pub(crate) fn smallest_feasible(
    instance: &Instance,
    order: &NearOrder,
    leaders: &[(NodeId, bool)],
    rtts: &[Micros],
    start: usize,
    end: usize,
) -> Option<usize> {
    let feasible =
        |idx: usize| match_leaders(instance, order, leaders, rtts[idx]).is_some_and(|m| m.membership().is_some());
    if end <= start || !feasible(end - 1) {
        return None;
    }
    let (mut lo, mut hi) = (start, end - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

/// Materializes the membership found at `threshold` as a configuration with
/// minimal flags and optimal links.
pub(crate) fn build_configuration(
    instance: &Instance,
    order: &NearOrder,
    leaders: &[(NodeId, bool)],
    threshold: Micros,
) -> Result<Configuration, CcoError> {
    let membership = match_leaders(instance, order, leaders, threshold)
        .and_then(|m| m.membership())
        .ok_or(CcoError::Infeasible(InfeasibleCause::NoFeasiblePartition))?;
    Configuration::from_membership(instance, membership)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::uniform_instance;

    #[test]
    fn disjoint_slots() {
        let inst = uniform_instance(8, 1, Micros(1000), Micros(1000), 1, Micros(1));
        let order = NearOrder::new(&inst);
        let m = match_leaders(&inst, &order, &[(NodeId(0), false), (NodeId(1), false)], Micros(2000)).unwrap();
        let membership = m.membership().unwrap();
        for l in [0, 1] {
            assert_eq!(membership.iter().filter(|&&x| x == NodeId(l)).count(), 4);
        }
        // nine nodes cannot host a third committee of four
        assert!(match_leaders(
            &inst,
            &order,
            &[(NodeId(0), false), (NodeId(1), false), (NodeId(2), false)],
            Micros(2000)
        )
        .is_none());
    }

    #[test]
    fn threshold_limits_near_slots() {
        let mut inst = uniform_instance(8, 1, Micros(1000), Micros(1000), 1, Micros(1));
        for j in 1..8 {
            let d = if j <= 1 { 1000 } else { 5000 };
            inst.delays.between[0][j] = Micros(d);
            inst.delays.between[j][0] = Micros(d);
        }
        let order = NearOrder::new(&inst);
        // only node 1 is within 2ms of node 0, two near slots are required
        assert!(match_leaders(&inst, &order, &[(NodeId(0), false)], Micros(2000)).is_none());
        assert!(match_leaders(&inst, &order, &[(NodeId(0), false)], Micros(10_000)).is_some());
    }

    #[test]
    fn failed_tee_needs_flagged_committee() {
        // slots are filled without node 8, which is then left over
        let mut inst = uniform_instance(9, 1, Micros(1000), Micros(1000), 1, Micros(1));
        inst.nodes[8].tee_failed = true;
        let order = NearOrder::new(&inst);
        let m = match_leaders(&inst, &order, &[(NodeId(0), false), (NodeId(1), false)], Micros(2000)).unwrap();
        assert!(m.membership().is_none());
        let m = match_leaders(&inst, &order, &[(NodeId(0), false), (NodeId(1), true)], Micros(2000)).unwrap();
        assert_eq!(m.membership().unwrap()[8], NodeId(1));
        // with eight nodes the flagged-free slots cannot be filled at all
        let mut inst = uniform_instance(8, 1, Micros(1000), Micros(1000), 1, Micros(1));
        inst.nodes[7].tee_failed = true;
        let order = NearOrder::new(&inst);
        assert!(match_leaders(&inst, &order, &[(NodeId(0), false), (NodeId(1), false)], Micros(2000)).is_none());
    }

    #[test]
    fn rerouting_frees_new_leader() {
        let inst = uniform_instance(8, 1, Micros(1000), Micros(1000), 1, Micros(1));
        let order = NearOrder::new(&inst);
        let mut m = SlotMatcher::new(&inst, &order, Micros(2000));
        assert!(m.add_leader(NodeId(0), false));
        // node 1 is matched to leader 0 and must be re-routed
        assert!(m.add_leader(NodeId(1), false));
        let membership = m.membership().unwrap();
        assert_eq!(membership[1], NodeId(1));
        assert!(!m.add_leader(NodeId(2), false));
        assert_eq!(m.leader_count(), 2);
    }
}
