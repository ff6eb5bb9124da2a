#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topbft_core::model::{DelayMatrix, Instance, Micros, NodeProfile, SystemParams, VerificationCommittee};

/// Heterogeneous random instance: one-way delays between 0.1 and 20 ms,
/// verifier legs between 1 and 10 ms, a quarter of the nodes above the
/// leader thresholds, and TEE failures with probability `tee_rate`.
pub fn random_instance(seed: u64, n: usize, tee_rate: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let between = (0..n)
        .map(|i| (0..n).map(|j| if i == j { Micros(0) } else { Micros(rng.gen_range(100..=20_000)) }).collect())
        .collect();
    let to_verifier = (0..n).map(|_| Micros(rng.gen_range(1000..=10_000))).collect();
    let from_verifier = (0..n).map(|_| Micros(rng.gen_range(1000..=10_000))).collect();
    let mut nodes: Vec<NodeProfile> = (0..n)
        .map(|_| NodeProfile {
            byzantine_rate: if rng.gen_bool(0.25) { 0.5 } else { 0.01 },
            crash_rate: 0.01,
            tee_failed: rng.gen_bool(tee_rate),
        })
        .collect();
    // keep at least one eligible node
    nodes[rng.gen_range(0..n)].byzantine_rate = 0.0;
    let m = 4;
    let vd: Vec<Vec<Micros>> = (0..m)
        .map(|a| (0..m).map(|b| if a == b { Micros(0) } else { Micros(rng.gen_range(200..=2000)) }).collect())
        .collect();
    Instance {
        nodes,
        delays: DelayMatrix { between, to_verifier, from_verifier },
        verification: VerificationCommittee::new(rng.gen_range(0..m), vd),
        params: SystemParams { f: 1, max_byzantine: 0.1, max_crash: 0.1 },
    }
}

/// `t_tr` recomputed from the delay tables for a given membership, flag
/// and link choice, without using the library's evaluator.
pub fn direct_objective(inst: &Instance, leader_of: &[usize], links: &[(usize, usize)]) -> u64 {
    let d = &inst.delays.between;
    let slowest = links.iter().map(|&(i, j)| d[i][j].0 + d[j][i].0).max().unwrap_or(0);
    let leaders: Vec<usize> = (0..leader_of.len()).filter(|&i| leader_of[i] == i).collect();
    let cv = leaders.iter().map(|&i| inst.delays.to_verifier[i].0).max().unwrap_or(0);
    let vc = leaders.iter().map(|&i| inst.delays.from_verifier[i].0).max().unwrap_or(0);
    let v = &inst.verification;
    let ver = (0..v.member_count)
        .filter(|&m| m != v.leader)
        .map(|m| v.delays[v.leader][m].0 + v.delays[m][v.leader].0)
        .max()
        .unwrap_or(0);
    2 * slowest + cv + 4 * ver + vc + 2 * slowest
}

pub mod interleave;
