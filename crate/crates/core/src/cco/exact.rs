//! Exact branch-and-bound over leader sets.
//!
//! For a fixed leader set `L` the objective is
//! `4 R + max_{i in L} d_iv + max_{i in L} d_vi + t_ver`, where `R` is the
//! slowest active round trip. The smallest feasible `R` is found by binary
//! search over the distinct round-trip values, each probe being a slot
//! matching (see [`super::matching`]). Leader sets are enumerated from the
//! largest committee count down and pruned with the bound
//! `4 R_lb(L) + max d_iv + max d_vi + t_ver`, where `R_lb(L)` is the largest
//! per-leader `2f`-th nearest round trip.

use std::time::Instant;

use super::constraints::{kth_smallest_rtt, latency_of, verification_time};
use super::matching::{build_configuration, smallest_feasible, NearOrder};
use super::{objective_lower_bound, preflight, relative_gap, CcoError, InfeasibleCause, Solution, SolveLimits};
use crate::model::{Instance, Micros, NodeId};

struct Incumbent {
    value: Micros,
    leaders: Vec<(NodeId, bool)>,
    threshold: Micros,
}

pub fn solve_exact(instance: &Instance, limits: &SolveLimits) -> Result<Solution, CcoError> {
    let n = instance.node_count();
    if n > limits.node_cap_exact {
        return Err(CcoError::TooLarge { solver: "exact solver", nodes: n, cap: limits.node_cap_exact });
    }
    let eligible = preflight(instance)?;
    let started = Instant::now();
    let f = instance.params.f;
    let ver = verification_time(instance);

    let mut rtts: Vec<Micros> = Vec::new();
    for i in instance.node_ids() {
        for j in instance.node_ids().filter(|&j| j > i) {
            rtts.push(instance.rtt(i, j));
        }
    }
    rtts.sort_unstable();
    rtts.dedup();

    let order = NearOrder::new(instance);
    let max_p = instance.max_committees().min(eligible.len());
    let mut best: Option<Incumbent> = None;
    let mut timed_out = false;

    'outer: for p in (1..=max_p).rev() {
        let mut combo: Vec<usize> = (0..p).collect();
        loop {
            if started.elapsed() > limits.time_budget {
                timed_out = true;
                break 'outer;
            }
            let leaders: Vec<NodeId> = combo.iter().map(|&k| eligible[k]).collect();
            if let Some(found) =
                best_for_leader_set(instance, &order, &leaders, &rtts, ver, f, best.as_ref().map(|b| b.value))
            {
                best = Some(found);
            }
            if !next_combination(&mut combo, eligible.len()) {
                break;
            }
        }
    }

    let Some(best) = best else {
        return Err(if timed_out {
            CcoError::Timeout
        } else {
            CcoError::Infeasible(InfeasibleCause::NoFeasiblePartition)
        });
    };
    if timed_out && limits.optimality_required {
        return Err(CcoError::Timeout);
    }
    let config = build_configuration(instance, &order, &best.leaders, best.threshold)?;
    let latency = latency_of(instance, &config);
    debug_assert!(latency.t_tr <= best.value);
    let gap = if timed_out {
        relative_gap(latency.t_tr, objective_lower_bound(instance).unwrap_or(Micros::ZERO))
    } else {
        0.0
    };
    Ok(Solution { config, latency, optimal: !timed_out, gap })
}

/// Best objective for one leader set, if it beats `bound` strictly.
fn best_for_leader_set(
    instance: &Instance,
    order: &NearOrder,
    leaders: &[NodeId],
    rtts: &[Micros],
    ver: Micros,
    f: usize,
    bound: Option<Micros>,
) -> Option<Incumbent> {
    let mut r_lb = Micros::ZERO;
    for &l in leaders {
        let k = if instance.tee_failed(l) { 3 * f } else { 2 * f };
        r_lb = r_lb.max(kth_smallest_rtt(instance, l, k, |j| !leaders.contains(&j))?);
    }
    let a = leaders.iter().map(|l| instance.delays.to_verifier[l.0]).max()?;
    let b = leaders.iter().map(|l| instance.delays.from_verifier[l.0]).max()?;
    let fixed = a + b + ver;
    let beats = |value: Micros, bound: Option<Micros>| bound.is_none_or(|bound| value < bound);
    if !beats(r_lb * 4 + fixed, bound) {
        return None;
    }

    let outside_failed = instance.node_ids().any(|j| instance.tee_failed(j) && !leaders.contains(&j));
    let free: Vec<usize> = (0..leaders.len()).filter(|&k| !instance.tee_failed(leaders[k])).collect();
    let start = rtts.partition_point(|&r| r < r_lb);

    let mut best: Option<Incumbent> = None;
    for mask in 0u64..(1u64 << free.len()) {
        let flags: Vec<(NodeId, bool)> = leaders
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let forced = instance.tee_failed(l);
                let chosen = free.iter().position(|&x| x == k).is_some_and(|bit| mask >> bit & 1 == 1);
                (l, forced || chosen)
            })
            .collect();
        if outside_failed && !flags.iter().any(|&(_, s)| s) {
            continue;
        }
        let limit = [best.as_ref().map(|b| b.value), bound].into_iter().flatten().min();
        // thresholds below `hi` could still win
        let hi = match limit {
            Some(limit) => rtts.partition_point(|&r| r * 4 + fixed < limit),
            None => rtts.len(),
        };
        let Some(lo) = smallest_feasible(instance, order, &flags, rtts, start, hi) else {
            continue;
        };
        let value = rtts[lo] * 4 + fixed;
        best = Some(Incumbent { value, leaders: flags, threshold: rtts[lo] });
    }
    best
}

/// Advances `combo` to the next k-combination of `0..n` in lexicographic order.
pub(crate) fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cco::{check_constraints, evaluate};
    use crate::model::uniform_instance;

    fn ms(x: u64) -> Micros {
        Micros(x * 1000)
    }

    #[test]
    fn combinations_in_order() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn four_homogeneous_nodes() {
        let (d, dv, vd) = (ms(2), ms(3), ms(1));
        let inst = uniform_instance(4, 1, d, dv, 4, vd);
        let sol = solve_exact(&inst, &SolveLimits::default()).unwrap();
        assert_eq!(sol.config.committee_count, 1);
        assert!(sol.optimal);
        assert_eq!(sol.latency.t_tr, d * 2 * 4 + dv * 2 + vd * 2 * 4);
        assert_eq!(sol.latency, evaluate(&inst, &sol.config).unwrap());
    }

    #[test]
    fn two_clusters_align_committees() {
        // nodes 0..4 and 4..8 form clusters: 1ms one-way inside, 25ms across
        let mut inst = uniform_instance(8, 1, ms(1), ms(1), 1, ms(1));
        for i in 0..8 {
            for j in 0..8 {
                if i != j && (i < 4) != (j < 4) {
                    inst.delays.between[i][j] = ms(25);
                }
            }
        }
        inst.params.max_byzantine = 0.1;
        for i in [1, 2, 3, 5, 6, 7] {
            inst.nodes[i].byzantine_rate = 0.5;
        }
        let sol = solve_exact(&inst, &SolveLimits::default()).unwrap();
        assert_eq!(sol.config.committee_count, 2);
        assert_eq!(sol.latency.t_pre, ms(4));
        assert_eq!(sol.latency.t_com, ms(4));
        for j in 0..8 {
            assert_eq!(sol.config.leader_of[j], NodeId(if j < 4 { 0 } else { 4 }));
        }
    }

    #[test]
    fn no_eligible_leader() {
        let mut inst = uniform_instance(8, 1, ms(1), ms(1), 4, ms(1));
        inst.params.max_byzantine = 0.1;
        for node in &mut inst.nodes {
            node.byzantine_rate = 0.2;
        }
        let err = solve_exact(&inst, &SolveLimits::default()).unwrap_err();
        assert!(matches!(err, CcoError::Infeasible(InfeasibleCause::NoEligibleLeader)));
        assert!(err.to_string().contains("no eligible leader"));
    }

    #[test]
    fn too_few_nodes_and_too_large() {
        let inst = uniform_instance(3, 1, ms(1), ms(1), 4, ms(1));
        assert!(matches!(
            solve_exact(&inst, &SolveLimits::default()),
            Err(CcoError::Infeasible(InfeasibleCause::TooFewNodes { .. }))
        ));
        let inst = uniform_instance(20, 1, ms(1), ms(1), 4, ms(1));
        assert!(matches!(solve_exact(&inst, &SolveLimits::default()), Err(CcoError::TooLarge { .. })));
    }

    #[test]
    fn prefers_more_committees_on_ties() {
        let inst = uniform_instance(12, 1, ms(1), ms(1), 4, ms(1));
        let sol = solve_exact(&inst, &SolveLimits::default()).unwrap();
        assert_eq!(sol.config.committee_count, 3);
        assert!(check_constraints(&inst, &sol.config).is_empty());
    }

    #[test]
    fn zero_budget_yields_timeout_or_incumbent() {
        let inst = uniform_instance(12, 1, ms(1), ms(1), 4, ms(1));
        let limits =
            SolveLimits { time_budget: std::time::Duration::ZERO, optimality_required: true, ..Default::default() };
        assert!(matches!(solve_exact(&inst, &limits), Err(CcoError::Timeout)));
    }
}
