//! Scalable construction and local search.
//!
//! A search state is a flagged leader set; membership and links follow from
//! the bottleneck threshold search in [`super::matching`]. Initial states come
//! from two constructions:
//!
//! - spread seeding: for every committee count `p`, greedily pick leaders far
//!   from the ones already chosen (largest minimum round trip, then largest
//!   round-trip sum, then lowest id);
//! - threshold seeding: for a sample of thresholds, add leaders in order of
//!   their local density as long as the slot matching stays feasible.
//!
//! Local search then explores swap-leader, add-leader, drop-leader and
//! flag-toggle moves in a seeded random order, accepting strict improvements
//! of `(t_tr, -p)`. Member moves are implicit: each state is re-matched.

use std::cmp::Reverse;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::constraints::{kth_smallest_rtt, latency_of, required_links, verification_time};
use super::matching::{build_configuration, smallest_feasible, NearOrder, SlotMatcher};
use super::{objective_lower_bound, preflight, relative_gap, CcoError, InfeasibleCause, Solution};
use crate::model::{Instance, Micros, NodeId};

/// Thresholds tried by the threshold seeding.
const SEED_THRESHOLDS: usize = 48;

#[derive(Clone, Debug)]
struct State {
    /// `(leader, sigma)`, ascending by leader.
    leaders: Vec<(NodeId, bool)>,
    value: Micros,
    threshold: Micros,
}

impl State {
    fn key(&self) -> (Micros, Reverse<usize>) {
        (self.value, Reverse(self.leaders.len()))
    }
}

#[derive(Clone, Copy, Debug)]
enum Move {
    Swap(usize, NodeId),
    Add(NodeId),
    Drop(usize),
    Toggle(usize),
}

struct Search<'a> {
    instance: &'a Instance,
    order: NearOrder,
    rtts: Vec<Micros>,
    ver: Micros,
    failed: Vec<NodeId>,
}

pub fn solve_heuristic(instance: &Instance, seed: u64, iteration_budget: usize) -> Result<Solution, CcoError> {
    let eligible = preflight(instance)?;
    let search = Search::new(instance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_p = instance.max_committees().min(eligible.len());

    let mut best: Option<State> = None;
    let offer = |best: &mut Option<State>, leaders: Vec<(NodeId, bool)>| {
        if let Some(found) = search.evaluate(leaders, best.as_ref()) {
            *best = Some(found);
        }
    };
    for p in (1..=max_p).rev() {
        let first = *eligible.choose(&mut rng).expect("eligible set is non-empty");
        offer(&mut best, search.flag(search.spread(&eligible, first, p)));
    }
    for threshold in search.sample_thresholds() {
        offer(&mut best, search.grow(&eligible, max_p, threshold));
    }
    let mut current = best.ok_or(CcoError::Infeasible(InfeasibleCause::NoFeasiblePartition))?;

    let bound = objective_lower_bound(instance).unwrap_or(Micros::ZERO);
    let mut used = 0usize;
    'search: while !(current.value <= bound && current.leaders.len() == max_p) {
        let mut moves = neighborhood(instance, &current, &eligible, max_p);
        moves.shuffle(&mut rng);
        let mut improved = false;
        for mv in moves {
            if used >= iteration_budget {
                break 'search;
            }
            used += 1;
            if let Some(next) = search.evaluate(apply(instance, &current, mv), Some(&current)) {
                current = next;
                improved = true;
                break;
            }
        }
        if !improved {
            break;
        }
    }

    let config = build_configuration(instance, &search.order, &current.leaders, current.threshold)?;
    let latency = latency_of(instance, &config);
    let gap = relative_gap(latency.t_tr, bound);
    let optimal = gap == 0.0 && config.committee_count == max_p;
    Ok(Solution { config, latency, optimal, gap })
}

impl<'a> Search<'a> {
    fn new(instance: &'a Instance) -> Self {
        let mut rtts = Vec::new();
        for i in instance.node_ids() {
            for j in instance.node_ids().filter(|&j| j > i) {
                rtts.push(instance.rtt(i, j));
            }
        }
        rtts.sort_unstable();
        rtts.dedup();
        Search {
            instance,
            order: NearOrder::new(instance),
            rtts,
            ver: verification_time(instance),
            failed: instance.node_ids().filter(|&j| instance.tee_failed(j)).collect(),
        }
    }

    /// Farthest-point leader selection starting at `first`.
    fn spread(&self, eligible: &[NodeId], first: NodeId, p: usize) -> Vec<NodeId> {
        let inst = self.instance;
        let mut chosen = vec![first];
        let mut min_rtt: Vec<Micros> =
            inst.node_ids().map(|j| if j == first { Micros::ZERO } else { inst.rtt(first, j) }).collect();
        let mut sum_rtt: Vec<u64> = min_rtt.iter().map(|m| m.0).collect();
        while chosen.len() < p {
            let Some(&next) = eligible
                .iter()
                .filter(|j| !chosen.contains(j))
                .max_by_key(|&&j| (min_rtt[j.0], sum_rtt[j.0], Reverse(j)))
            else {
                break;
            };
            chosen.push(next);
            for j in inst.node_ids() {
                if j == next {
                    min_rtt[j.0] = Micros::ZERO;
                } else {
                    let r = inst.rtt(next, j);
                    min_rtt[j.0] = min_rtt[j.0].min(r);
                    sum_rtt[j.0] += r.0;
                }
            }
        }
        chosen.sort();
        chosen
    }

    /// Flags for a leader set: forced where the leader's own TEE failed, and
    /// on the nearest leader of every other failed node.
    fn flag(&self, mut leaders: Vec<NodeId>) -> Vec<(NodeId, bool)> {
        leaders.sort();
        let inst = self.instance;
        let mut flags: Vec<(NodeId, bool)> = leaders.iter().map(|&l| (l, inst.tee_failed(l))).collect();
        for &j in &self.failed {
            if leaders.contains(&j) {
                continue;
            }
            if let Some(k) = (0..leaders.len()).min_by_key(|&k| (inst.rtt(leaders[k], j), leaders[k])) {
                flags[k].1 = true;
            }
        }
        flags
    }

    fn sample_thresholds(&self) -> Vec<Micros> {
        let n = self.rtts.len();
        if n <= SEED_THRESHOLDS {
            return self.rtts.clone();
        }
        let mut out: Vec<Micros> =
            (0..SEED_THRESHOLDS).map(|k| self.rtts[k * (n - 1) / (SEED_THRESHOLDS - 1)]).collect();
        out.dedup();
        out
    }

    /// Adds eligible leaders, densest neighbourhood first, while the slot
    /// matching at `threshold` stays feasible.
    fn grow(&self, eligible: &[NodeId], max_p: usize, threshold: Micros) -> Vec<(NodeId, bool)> {
        let inst = self.instance;
        let f = inst.params.f;
        let mut candidates: Vec<(Micros, NodeId)> = eligible
            .iter()
            .filter_map(|&l| {
                let k = required_links(f, inst.tee_failed(l));
                kth_smallest_rtt(inst, l, k, |_| true).map(|r| (r, l))
            })
            .filter(|&(r, _)| r <= threshold)
            .collect();
        candidates.sort();
        let mut matcher = SlotMatcher::new(inst, &self.order, threshold);
        for (_, l) in candidates {
            if matcher.leader_count() == max_p {
                break;
            }
            matcher.add_leader(l, inst.tee_failed(l));
        }
        // failed nodes outside the leader set need a flagged committee
        if !self.failed.is_empty() && !matcher.has_sigma_leader() {
            return self.flag(matcher.leaders());
        }
        let mut leaders = matcher.flagged_leaders();
        leaders.sort();
        leaders
    }

    /// Re-matches `leaders` and returns the resulting state if it strictly
    /// beats `incumbent`.
    fn evaluate(&self, leaders: Vec<(NodeId, bool)>, incumbent: Option<&State>) -> Option<State> {
        let inst = self.instance;
        if leaders.is_empty() {
            return None;
        }
        if self.failed.iter().any(|j| leaders.binary_search_by_key(j, |l| l.0).is_err()) && !leaders.iter().any(|l| l.1)
        {
            return None;
        }
        let f = inst.params.f;
        let mut r_lb = Micros::ZERO;
        for &(l, sigma) in &leaders {
            let k = required_links(f, sigma);
            let r = kth_smallest_rtt(inst, l, k, |j| leaders.binary_search_by_key(&j, |x| x.0).is_err())?;
            r_lb = r_lb.max(r);
        }
        let a = leaders.iter().map(|l| inst.delays.to_verifier[l.0 .0]).max()?;
        let b = leaders.iter().map(|l| inst.delays.from_verifier[l.0 .0]).max()?;
        let fixed = a + b + self.ver;
        let p = leaders.len();
        // largest admissible value: ties only win with more committees
        let admits = |value: Micros| match incumbent {
            None => true,
            Some(inc) => (value, Reverse(p)) < inc.key(),
        };
        if !admits(r_lb * 4 + fixed) {
            return None;
        }
        let start = self.rtts.partition_point(|&r| r < r_lb);
        let end = self.rtts.partition_point(|&r| admits(r * 4 + fixed));
        let idx = smallest_feasible(inst, &self.order, &leaders, &self.rtts, start, end)?;
        let threshold = self.rtts[idx];
        Some(State { leaders, value: threshold * 4 + fixed, threshold })
    }
}

fn neighborhood(instance: &Instance, state: &State, eligible: &[NodeId], max_p: usize) -> Vec<Move> {
    let outside: Vec<NodeId> =
        eligible.iter().copied().filter(|j| state.leaders.binary_search_by_key(j, |l| l.0).is_err()).collect();
    let mut moves = Vec::new();
    for k in 0..state.leaders.len() {
        for &j in &outside {
            moves.push(Move::Swap(k, j));
        }
        if !instance.tee_failed(state.leaders[k].0) {
            moves.push(Move::Toggle(k));
        }
        if state.leaders.len() > 1 {
            moves.push(Move::Drop(k));
        }
    }
    if state.leaders.len() < max_p {
        moves.extend(outside.iter().map(|&j| Move::Add(j)));
    }
    moves
}

fn apply(instance: &Instance, state: &State, mv: Move) -> Vec<(NodeId, bool)> {
    let mut leaders = state.leaders.clone();
    match mv {
        Move::Swap(k, j) => leaders[k] = (j, instance.tee_failed(j) || leaders[k].1),
        Move::Add(j) => leaders.push((j, instance.tee_failed(j))),
        Move::Drop(k) => {
            leaders.remove(k);
        }
        Move::Toggle(k) => leaders[k].1 = !leaders[k].1,
    }
    leaders.sort();
    leaders
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cco::{check_constraints, solve_exact, SolveLimits};
    use crate::model::uniform_instance;

    fn ms(x: u64) -> Micros {
        Micros(x * 1000)
    }

    fn two_clusters() -> Instance {
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
        inst
    }

    #[test]
    fn finds_cluster_optimum() {
        let inst = two_clusters();
        let exact = solve_exact(&inst, &SolveLimits::default()).unwrap();
        let heur = solve_heuristic(&inst, 7, 1000).unwrap();
        assert_eq!(heur.latency.t_tr, exact.latency.t_tr);
        assert_eq!(heur.config.committee_count, 2);
    }

    #[test]
    fn deterministic_for_seed() {
        let inst = uniform_instance(13, 1, ms(1), ms(2), 4, ms(1));
        assert_eq!(solve_heuristic(&inst, 3, 500).unwrap(), solve_heuristic(&inst, 3, 500).unwrap());
    }

    #[test]
    fn feasible_with_failed_tees() {
        let mut inst = uniform_instance(12, 1, ms(1), ms(2), 4, ms(1));
        inst.nodes[2].tee_failed = true;
        inst.nodes[9].tee_failed = true;
        let sol = solve_heuristic(&inst, 0, 200).unwrap();
        assert!(check_constraints(&inst, &sol.config).is_empty());
    }

    #[test]
    fn zero_budget_still_returns_construction() {
        let inst = uniform_instance(8, 1, ms(1), ms(2), 4, ms(1));
        let sol = solve_heuristic(&inst, 0, 0).unwrap();
        assert!(check_constraints(&inst, &sol.config).is_empty());
    }
}
