//! Exhaustive enumeration oracle.
//!
//! Walks every set partition with blocks of at least `3f+1` nodes, every
//! eligible leader per block, every admissible fallback flag and every link
//! subset of the required size, computing the objective directly from the
//! delay tables. Shares no code with the solvers beyond the data types.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use super::{preflight, CcoError, Configuration, InfeasibleCause, LatencyBreakdown, Solution};
use crate::model::{Instance, Micros, NodeId};

pub const BRUTE_FORCE_MAX_NODES: usize = 10;

struct Block {
    leader: usize,
    followers: Vec<usize>,
    sigma: bool,
    links: Vec<usize>,
}

struct Search<'a> {
    instance: &'a Instance,
    eligible: Vec<bool>,
    best: Option<((Micros, Reverse<usize>), Configuration, LatencyBreakdown)>,
}

pub fn brute_force(instance: &Instance) -> Result<Solution, CcoError> {
    let n = instance.node_count();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(CcoError::TooLarge { solver: "brute force", nodes: n, cap: BRUTE_FORCE_MAX_NODES });
    }
    let eligible_list = preflight(instance)?;
    let mut eligible = vec![false; n];
    for l in eligible_list {
        eligible[l.0] = true;
    }
    let mut search = Search { instance, eligible, best: None };
    let mut labels = vec![0usize; n];
    search.partitions(&mut labels, 0, 0);
    let (_, config, latency) = search.best.ok_or(CcoError::Infeasible(InfeasibleCause::NoFeasiblePartition))?;
    Ok(Solution { config, latency, optimal: true, gap: 0.0 })
}

impl Search<'_> {
    /// Restricted-growth labelling: node `i` joins an existing block or opens
    /// block `blocks`.
    fn partitions(&mut self, labels: &mut Vec<usize>, i: usize, blocks: usize) {
        let n = labels.len();
        if i == n {
            let mut members = vec![Vec::new(); blocks];
            for (node, &b) in labels.iter().enumerate() {
                members[b].push(node);
            }
            let min = self.instance.params.min_committee_size();
            if members.iter().all(|m| m.len() >= min) {
                self.leaders(&members, 0, &mut Vec::new());
            }
            return;
        }
        // prune: remaining nodes cannot fill every open block
        let min = self.instance.params.min_committee_size();
        let mut counts = vec![0usize; blocks];
        for &b in &labels[..i] {
            counts[b] += 1;
        }
        let deficit: usize = counts.iter().map(|&c| min.saturating_sub(c)).sum();
        if deficit > n - i {
            return;
        }
        for b in 0..=blocks {
            labels[i] = b;
            self.partitions(labels, i + 1, blocks.max(b + 1));
        }
    }

    fn leaders(&mut self, members: &[Vec<usize>], k: usize, chosen: &mut Vec<Block>) {
        if k == members.len() {
            self.finish(chosen);
            return;
        }
        let f = self.instance.params.f;
        for &leader in &members[k] {
            if !self.eligible[leader] {
                continue;
            }
            let followers: Vec<usize> = members[k].iter().copied().filter(|&j| j != leader).collect();
            let has_failed = members[k].iter().any(|&j| self.instance.nodes[j].tee_failed);
            for sigma in [false, true] {
                if has_failed && !sigma {
                    continue;
                }
                let need = if sigma { 3 * f } else { 2 * f };
                for links in subsets(&followers, need) {
                    chosen.push(Block { leader, followers: followers.clone(), sigma, links });
                    self.leaders(members, k + 1, chosen);
                    chosen.pop();
                }
            }
        }
    }

    fn finish(&mut self, blocks: &[Block]) {
        let d = &self.instance.delays;
        let mut slowest = 0u64;
        let mut cv = 0u64;
        let mut vc = 0u64;
        for b in blocks {
            for &j in &b.links {
                slowest = slowest.max(2 * (d.between[b.leader][j].0 + d.between[j][b.leader].0));
            }
            cv = cv.max(d.to_verifier[b.leader].0);
            vc = vc.max(d.from_verifier[b.leader].0);
        }
        let v = &self.instance.verification;
        let mut ver = 0u64;
        for m in 0..v.member_count {
            if m != v.leader {
                ver = ver.max(4 * (v.delays[v.leader][m].0 + v.delays[m][v.leader].0));
            }
        }
        let total = Micros(slowest + cv + ver + vc + slowest);
        let key = (total, Reverse(blocks.len()));
        if self.best.as_ref().is_some_and(|(best, _, _)| *best <= key) {
            return;
        }
        let mut leader_of = vec![NodeId(0); self.instance.node_count()];
        let mut active_links = BTreeSet::new();
        let mut sigma = BTreeMap::new();
        for b in blocks {
            leader_of[b.leader] = NodeId(b.leader);
            for &j in &b.followers {
                leader_of[j] = NodeId(b.leader);
            }
            for &j in &b.links {
                active_links.insert((NodeId(b.leader), NodeId(j)));
            }
            sigma.insert(NodeId(b.leader), b.sigma);
        }
        let config = Configuration { leader_of, active_links, sigma, committee_count: blocks.len() };
        let latency = LatencyBreakdown::new(Micros(slowest), Micros(cv), Micros(ver), Micros(vc), Micros(slowest));
        self.best = Some((key, config, latency));
    }
}

fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k > items.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < items.len() - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}
