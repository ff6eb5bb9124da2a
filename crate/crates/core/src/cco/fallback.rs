//! Re-optimization after TEE failures.

use std::collections::BTreeSet;

use super::constraints::latency_of;
use super::{
    objective_lower_bound, relative_gap, solve_exact, solve_heuristic, CcoError, Configuration, Solution, SolveLimits,
};
use crate::model::{Instance, Micros, NodeId};

/// Marks `failed_tees` as failed and re-solves.
///
/// The previous membership is always kept as a candidate, with flags and
/// links re-derived, so unaffected committees keep `2f` links. When
/// `limits.allow_repartition` is set the instance is also re-solved from
/// scratch and the better of the two is returned; ties keep the previous
/// membership.
pub fn reoptimize_fallback(
    instance: &Instance,
    failed_tees: &BTreeSet<NodeId>,
    previous: &Configuration,
    limits: &SolveLimits,
) -> Result<Solution, CcoError> {
    let degraded = instance.with_tee_failures(failed_tees.iter().copied());
    let kept = Configuration::from_membership(&degraded, previous.leader_of.clone())?;
    let kept_latency = latency_of(&degraded, &kept);
    let bound = objective_lower_bound(&degraded).unwrap_or(Micros::ZERO);
    let mut best =
        Solution { config: kept, latency: kept_latency, optimal: false, gap: relative_gap(kept_latency.t_tr, bound) };

    if limits.allow_repartition {
        let resolved = if degraded.node_count() <= limits.node_cap_exact {
            solve_exact(&degraded, limits)?
        } else {
            solve_heuristic(&degraded, limits.heuristic_seed, limits.heuristic_iterations)?
        };
        if resolved.key() < best.key() {
            best = resolved;
        } else if resolved.optimal && resolved.key() == best.key() {
            best.optimal = true;
            best.gap = 0.0;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cco::check_constraints;
    use crate::model::uniform_instance;

    fn ms(x: u64) -> Micros {
        Micros(x * 1000)
    }

    #[test]
    fn no_failures_keeps_optimum() {
        let inst = uniform_instance(8, 1, ms(1), ms(2), 4, ms(1));
        let normal = solve_exact(&inst, &SolveLimits::default()).unwrap();
        let again = reoptimize_fallback(&inst, &BTreeSet::new(), &normal.config, &SolveLimits::default()).unwrap();
        assert_eq!(again.latency.t_tr, normal.latency.t_tr);
        assert_eq!(again.config, normal.config);
    }

    #[test]
    fn pinned_membership_flips_one_committee() {
        let mut inst = uniform_instance(8, 1, ms(1), ms(2), 4, ms(1));
        for j in 0..8 {
            inst.delays.between[0][j] = ms(1 + j as u64);
            inst.delays.between[j][0] = ms(1 + j as u64);
        }
        inst.delays.between[0][0] = Micros::ZERO;
        let normal = solve_exact(&inst, &SolveLimits::default()).unwrap();
        let victim_committee = &normal.config.committees()[0];
        let victim = victim_committee.followers[0];
        let limits = SolveLimits { allow_repartition: false, ..Default::default() };
        let out = reoptimize_fallback(&inst, &BTreeSet::from([victim]), &normal.config, &limits).unwrap();
        assert_eq!(out.config.leader_of, normal.config.leader_of);
        let degraded = inst.with_tee_failures([victim]);
        assert!(check_constraints(&degraded, &out.config).is_empty());
        for c in out.config.committees() {
            let before = normal.config.committee(c.leader).unwrap();
            if c.leader == victim_committee.leader {
                assert!(c.sigma);
                assert_eq!(c.active.len(), before.active.len() + 1);
            } else {
                assert!(!c.sigma);
                assert_eq!(c.active, before.active);
            }
        }
    }
}
