use std::collections::{BTreeMap, BTreeSet};

use super::{CcoError, Configuration, ConstraintId, InfeasibleCause, LatencyBreakdown, Subject, Violation};
use crate::model::{Instance, Micros, NodeId};

/// Nodes allowed to lead: Byzantine rate within `B` and crash rate within `C`.
pub fn eligible_leaders(instance: &Instance) -> Vec<NodeId> {
    let p = &instance.params;
    instance
        .node_ids()
        .filter(|&i| {
            let n = instance.profile(i);
            n.byzantine_rate <= p.max_byzantine && n.crash_rate <= p.max_crash
        })
        .collect()
}

/// Minimal fallback flags for a membership map: a committee is flagged iff
/// its leader or any follower has a failed TEE.
pub fn derive_sigma(instance: &Instance, leader_of: &[NodeId]) -> BTreeMap<NodeId, bool> {
    let mut sigma: BTreeMap<NodeId, bool> =
        leader_of.iter().enumerate().filter(|&(j, l)| l.0 == j).map(|(_, &l)| (l, false)).collect();
    for (j, l) in leader_of.iter().enumerate() {
        if instance.nodes[j].tee_failed {
            if let Some(s) = sigma.get_mut(l) {
                *s = true;
            }
        }
    }
    sigma
}

pub(crate) fn required_links(f: usize, sigma: bool) -> usize {
    (2 + sigma as usize) * f
}

/// For each committee, the `(2+sigma)f` followers with the smallest round
/// trip to the leader, ties broken by lower id.
pub fn optimal_links(
    instance: &Instance,
    leader_of: &[NodeId],
    sigma: &BTreeMap<NodeId, bool>,
) -> Result<BTreeSet<(NodeId, NodeId)>, CcoError> {
    let f = instance.params.f;
    let mut followers: BTreeMap<NodeId, Vec<NodeId>> = sigma.keys().map(|&l| (l, Vec::new())).collect();
    for (j, &l) in leader_of.iter().enumerate() {
        if l.0 != j {
            if let Some(list) = followers.get_mut(&l) {
                list.push(NodeId(j));
            }
        }
    }
    let mut links = BTreeSet::new();
    for (leader, mut members) in followers {
        let needed = required_links(f, sigma[&leader]);
        if members.len() < needed {
            return Err(CcoError::Infeasible(InfeasibleCause::CommitteeTooSmall {
                leader,
                needed,
                available: members.len(),
            }));
        }
        members.sort_by_key(|&j| (instance.rtt(leader, j), j));
        links.extend(members.into_iter().take(needed).map(|j| (leader, j)));
    }
    Ok(links)
}

/// Every violated constraint of `config` under `instance`.
pub fn check_constraints(instance: &Instance, config: &Configuration) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = instance.node_count();
    let params = &instance.params;
    let mut push = |constraint, subject, detail: String| out.push(Violation { constraint, subject, detail });

    if config.leader_of.len() != n {
        push(
            ConstraintId::UniqueMembership,
            Subject::Global,
            format!("membership map covers {} of {n} nodes", config.leader_of.len()),
        );
        return out;
    }
    if let Some((j, l)) = config.leader_of.iter().enumerate().find(|(_, l)| l.0 >= n) {
        push(
            ConstraintId::UniqueMembership,
            Subject::Node(NodeId(j)),
            format!("node {j} assigned to unknown node {}", l.0),
        );
        return out;
    }

    let leaders: BTreeSet<NodeId> = config.leaders().into_iter().collect();
    if leaders.len() != config.committee_count {
        push(
            ConstraintId::CommitteeCount,
            Subject::Global,
            format!("{} leaders but committee count {}", leaders.len(), config.committee_count),
        );
    }

    let mut size: BTreeMap<NodeId, usize> = leaders.iter().map(|&l| (l, 1)).collect();
    let mut has_failed_tee: BTreeMap<NodeId, bool> = leaders.iter().map(|&l| (l, instance.tee_failed(l))).collect();
    for (j, &l) in config.leader_of.iter().enumerate() {
        if l.0 == j {
            continue;
        }
        if !leaders.contains(&l) {
            push(
                ConstraintId::LeaderScope,
                Subject::Pair(l, NodeId(j)),
                format!("node {j} follows {l}, which is not a leader"),
            );
            continue;
        }
        *size.get_mut(&l).unwrap() += 1;
        if instance.nodes[j].tee_failed {
            has_failed_tee.insert(l, true);
        }
    }

    for &l in &leaders {
        if size[&l] < params.min_committee_size() {
            push(
                ConstraintId::CommitteeSize,
                Subject::Node(l),
                format!("committee of {l} has {} nodes, needs {}", size[&l], params.min_committee_size()),
            );
        }
        let profile = instance.profile(l);
        if profile.byzantine_rate > params.max_byzantine {
            push(
                ConstraintId::LeaderByzantine,
                Subject::Node(l),
                format!("leader {l} Byzantine rate {} exceeds B={}", profile.byzantine_rate, params.max_byzantine),
            );
        }
        if profile.crash_rate > params.max_crash {
            push(
                ConstraintId::LeaderCrash,
                Subject::Node(l),
                format!("leader {l} crash rate {} exceeds C={}", profile.crash_rate, params.max_crash),
            );
        }
    }

    let mut link_count: BTreeMap<NodeId, usize> = leaders.iter().map(|&l| (l, 0)).collect();
    for &(i, j) in &config.active_links {
        let in_scope = i != j && j.0 < n && leaders.contains(&i) && config.leader_of[j.0] == i;
        if in_scope {
            *link_count.get_mut(&i).unwrap() += 1;
        } else {
            push(ConstraintId::LinkScope, Subject::Pair(i, j), format!("link {i}->{j} leaves the committee"));
        }
    }

    for (&i, &flag) in &config.sigma {
        if flag && !leaders.contains(&i) {
            push(ConstraintId::SigmaConsistency, Subject::Node(i), format!("non-leader {i} carries a fallback flag"));
        }
    }
    for &l in &leaders {
        let sigma = config.sigma.get(&l).copied().unwrap_or(false);
        if has_failed_tee[&l] && !sigma {
            push(
                ConstraintId::SigmaConsistency,
                Subject::Node(l),
                format!("committee of {l} contains a failed TEE but is not in fallback"),
            );
        }
        let needed = required_links(params.f, sigma);
        if link_count[&l] < needed {
            push(
                ConstraintId::ConnectionCount,
                Subject::Node(l),
                format!("committee of {l} has {} active links, needs {needed}", link_count[&l]),
            );
        }
    }
    out
}

pub(crate) fn verification_time(instance: &Instance) -> Micros {
    instance.verification.max_leader_rtt() * 4
}

/// Objective terms for a configuration known to be feasible.
pub(crate) fn latency_of(instance: &Instance, config: &Configuration) -> LatencyBreakdown {
    let slowest_link = config.active_links.iter().map(|&(i, j)| instance.rtt(i, j)).max().unwrap_or(Micros::ZERO);
    let leaders = config.leaders();
    let t_cv = leaders.iter().map(|l| instance.delays.to_verifier[l.0]).max().unwrap_or(Micros::ZERO);
    let t_vc = leaders.iter().map(|l| instance.delays.from_verifier[l.0]).max().unwrap_or(Micros::ZERO);
    LatencyBreakdown::new(slowest_link * 2, t_cv, verification_time(instance), t_vc, slowest_link * 2)
}

/// Per-transaction latency of a feasible configuration.
pub fn evaluate(instance: &Instance, config: &Configuration) -> Result<LatencyBreakdown, CcoError> {
    let violations = check_constraints(instance, config);
    if !violations.is_empty() {
        return Err(CcoError::Violations(violations));
    }
    Ok(latency_of(instance, config))
}

/// The `k`-th smallest round trip from `leader` to other nodes accepted by
/// `admit`; `None` if fewer than `k` qualify. `k == 0` yields zero.
pub(crate) fn kth_smallest_rtt(
    instance: &Instance,
    leader: NodeId,
    k: usize,
    admit: impl Fn(NodeId) -> bool,
) -> Option<Micros> {
    if k == 0 {
        return Some(Micros::ZERO);
    }
    let mut rtts: Vec<Micros> =
        instance.node_ids().filter(|&j| j != leader && admit(j)).map(|j| instance.rtt(leader, j)).collect();
    if rtts.len() < k {
        return None;
    }
    let (_, kth, _) = rtts.select_nth_unstable(k - 1);
    Some(*kth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{uniform_instance, NodeProfile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ms(x: u64) -> Micros {
        Micros(x * 1000)
    }

    fn single_committee(links: &[usize], sigma: bool) -> Configuration {
        Configuration {
            leader_of: vec![NodeId(0); 4],
            active_links: links.iter().map(|&j| (NodeId(0), NodeId(j))).collect(),
            sigma: [(NodeId(0), sigma)].into_iter().collect(),
            committee_count: 1,
        }
    }

    #[test]
    fn minimal_feasible_configuration() {
        let inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        assert!(check_constraints(&inst, &single_committee(&[1, 2], false)).is_empty());
    }

    #[test]
    fn failed_follower_requires_sigma() {
        let mut inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        inst.nodes[3].tee_failed = true;
        let v = check_constraints(&inst, &single_committee(&[1, 2], false));
        assert_eq!(v.iter().map(|v| v.constraint).collect::<Vec<_>>(), vec![ConstraintId::SigmaConsistency]);
    }

    #[test]
    fn sigma_requires_three_f_links() {
        let inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        let v = check_constraints(&inst, &single_committee(&[1, 2], true));
        assert_eq!(v.iter().map(|v| v.constraint).collect::<Vec<_>>(), vec![ConstraintId::ConnectionCount]);
    }

    #[test]
    fn unreliable_leader() {
        let mut inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        inst.params.max_byzantine = 0.1;
        inst.params.max_crash = 0.1;
        inst.nodes[0].byzantine_rate = 0.5;
        let v = check_constraints(&inst, &single_committee(&[1, 2], false));
        assert_eq!(v.iter().map(|v| v.constraint).collect::<Vec<_>>(), vec![ConstraintId::LeaderByzantine]);
        inst.nodes[0] = NodeProfile { byzantine_rate: 0.0, crash_rate: 0.3, tee_failed: false };
        let v = check_constraints(&inst, &single_committee(&[1, 2], false));
        assert_eq!(v.iter().map(|v| v.constraint).collect::<Vec<_>>(), vec![ConstraintId::LeaderCrash]);
    }

    #[test]
    fn structural_violations() {
        let inst = uniform_instance(8, 1, ms(1), ms(1), 4, ms(1));
        // node 5 follows node 1, which follows node 0
        let mut leader_of = vec![NodeId(0); 8];
        leader_of[5] = NodeId(1);
        let config = Configuration {
            leader_of,
            active_links: [(NodeId(0), NodeId(1)), (NodeId(0), NodeId(2)), (NodeId(4), NodeId(3))]
                .into_iter()
                .collect(),
            sigma: [(NodeId(0), false)].into_iter().collect(),
            committee_count: 2,
        };
        let ids: BTreeSet<_> = check_constraints(&inst, &config).into_iter().map(|v| v.constraint).collect();
        assert!(ids.contains(&ConstraintId::CommitteeCount));
        assert!(ids.contains(&ConstraintId::LeaderScope));
        assert!(ids.contains(&ConstraintId::LinkScope));

        let short = Configuration { leader_of: vec![NodeId(0); 3], ..config };
        let v = check_constraints(&inst, &short);
        assert_eq!(v[0].constraint, ConstraintId::UniqueMembership);
    }

    #[test]
    fn undersized_committee() {
        let inst = uniform_instance(8, 1, ms(1), ms(1), 4, ms(1));
        let leader_of = [0, 0, 0, 0, 0, 5, 5, 5].map(NodeId).to_vec();
        let sigma: BTreeMap<_, _> = [(NodeId(0), false), (NodeId(5), false)].into_iter().collect();
        let active_links = optimal_links(&inst, &leader_of, &sigma).unwrap();
        let config = Configuration { leader_of, active_links, sigma, committee_count: 2 };
        let v = check_constraints(&inst, &config);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, ConstraintId::CommitteeSize);
        assert_eq!(v[0].subject, Subject::Node(NodeId(5)));
    }

    #[test]
    fn sigma_derivation() {
        let mut inst = uniform_instance(8, 1, ms(1), ms(1), 4, ms(1));
        let leader_of = [0, 0, 0, 0, 4, 4, 4, 4].map(NodeId).to_vec();
        assert!(derive_sigma(&inst, &leader_of).values().all(|&s| !s));
        inst.nodes[4].tee_failed = true;
        let s = derive_sigma(&inst, &leader_of);
        assert!(s[&NodeId(4)]);
        assert!(!s[&NodeId(0)]);
    }

    #[test]
    fn sigma_matches_membership_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..50 {
            let n = 16;
            let mut inst = uniform_instance(n, 1, ms(1), ms(1), 4, ms(1));
            for node in &mut inst.nodes {
                node.tee_failed = rng.gen_bool(0.3);
            }
            let leaders = [0usize, 5, 9, 13];
            let leader_of: Vec<NodeId> = (0..n)
                .map(|j| if leaders.contains(&j) { NodeId(j) } else { NodeId(leaders[rng.gen_range(0..4)]) })
                .collect();
            let sigma = derive_sigma(&inst, &leader_of);
            assert_eq!(sigma.len(), 4);
            for &l in &leaders {
                let oracle = (0..n).any(|j| leader_of[j] == NodeId(l) && inst.nodes[j].tee_failed);
                assert_eq!(sigma[&NodeId(l)], oracle);
            }
        }
    }

    #[test]
    fn greedy_links_pick_cheapest() {
        let mut inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        // RTTs from leader 0: node1 = 6, node2 = 10, node3 = 4
        for (j, one_way) in [(1, 3), (2, 5), (3, 2)] {
            inst.delays.between[0][j] = ms(one_way);
            inst.delays.between[j][0] = ms(one_way);
        }
        let leader_of = vec![NodeId(0); 4];
        let mut sigma = derive_sigma(&inst, &leader_of);
        let links = optimal_links(&inst, &leader_of, &sigma).unwrap();
        assert_eq!(links, [(NodeId(0), NodeId(1)), (NodeId(0), NodeId(3))].into_iter().collect());
        sigma.insert(NodeId(0), true);
        assert_eq!(optimal_links(&inst, &leader_of, &sigma).unwrap().len(), 3);
    }

    #[test]
    fn greedy_links_reject_small_committee() {
        let inst = uniform_instance(4, 2, ms(1), ms(1), 4, ms(1));
        let leader_of = vec![NodeId(0); 4];
        let sigma = derive_sigma(&inst, &leader_of);
        assert!(matches!(
            optimal_links(&inst, &leader_of, &sigma),
            Err(CcoError::Infeasible(InfeasibleCause::CommitteeTooSmall { needed: 4, available: 3, .. }))
        ));
    }

    #[test]
    fn uniform_closed_form() {
        // t_tr = 4 * 2d + 2 d_v + 4 r
        let (d, dv, vd) = (ms(3), ms(7), ms(2));
        let inst = uniform_instance(8, 1, d, dv, 4, vd);
        let leader_of = [0, 0, 0, 0, 4, 4, 4, 4].map(NodeId).to_vec();
        let config = Configuration::from_membership(&inst, leader_of).unwrap();
        let lat = evaluate(&inst, &config).unwrap();
        assert_eq!(lat.t_tr, (d * 2) * 4 + dv * 2 + (vd * 2) * 4);
        assert_eq!(lat.t_pre, lat.t_com);
    }

    #[test]
    fn single_committee_uses_two_cheapest_links() {
        let mut inst = uniform_instance(4, 1, ms(1), ms(1), 1, ms(1));
        for (j, one_way) in [(1, 3), (2, 5), (3, 2)] {
            inst.delays.between[0][j] = ms(one_way);
            inst.delays.between[j][0] = ms(one_way);
        }
        let config = Configuration::from_membership(&inst, vec![NodeId(0); 4]).unwrap();
        let lat = evaluate(&inst, &config).unwrap();
        assert_eq!(lat.t_pre, ms(12));
        assert_eq!(lat.t_ver, Micros::ZERO);
    }

    #[test]
    fn evaluate_refuses_infeasible() {
        let inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        assert!(matches!(evaluate(&inst, &single_committee(&[1], false)), Err(CcoError::Violations(_))));
    }

    #[test]
    fn eligibility_filter() {
        let mut inst = uniform_instance(6, 1, ms(1), ms(1), 4, ms(1));
        assert_eq!(eligible_leaders(&inst).len(), 6);
        inst.params.max_byzantine = 0.1;
        inst.nodes[2].byzantine_rate = 0.5;
        inst.nodes[4].crash_rate = 0.9;
        inst.params.max_crash = 0.5;
        assert_eq!(eligible_leaders(&inst), vec![NodeId(0), NodeId(1), NodeId(3), NodeId(5)]);
    }

    #[test]
    fn eligibility_matches_predicate_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut inst = uniform_instance(30, 1, ms(1), ms(1), 4, ms(1));
        inst.params.max_byzantine = 0.3;
        inst.params.max_crash = 0.2;
        for node in &mut inst.nodes {
            node.byzantine_rate = rng.gen();
            node.crash_rate = rng.gen();
        }
        let expected: Vec<NodeId> = (0..30)
            .filter(|&i| inst.nodes[i].byzantine_rate <= 0.3 && inst.nodes[i].crash_rate <= 0.2)
            .map(NodeId)
            .collect();
        assert_eq!(eligible_leaders(&inst), expected);
    }
}
