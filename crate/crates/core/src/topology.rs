//! Synthetic instance generators.
//!
//! The verification committee sits on its own site: every consensus node has
//! the same one-way delay to and from it (`verifier_ms`), and its members
//! talk to each other with `verification_internal_ms`. Node reliability
//! profiles are drawn uniformly from `[0, max_rate]` with thresholds
//! `B = C = max_rate`, so every node is leader-eligible unless the caller
//! tightens the thresholds afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::model::{DelayMatrix, Instance, Micros, NodeProfile, SystemParams, VerificationCommittee};

#[derive(Clone, Debug, PartialEq)]
pub enum TopologyKind {
    /// Every pair at `delay_ms`.
    Uniform { delay_ms: f64 },
    /// `clusters` equal contiguous groups; `intra_ms` inside a group and
    /// `inter_ms` across.
    Clustered { clusters: usize, intra_ms: f64, inter_ms: f64 },
    /// Independent log-normal one-way delays (parameters of the underlying
    /// normal, in log-milliseconds).
    Lognormal { mu: f64, sigma: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub nodes: usize,
    pub f: usize,
    pub seed: u64,
    pub verifier_ms: f64,
    pub verification_members: usize,
    pub verification_internal_ms: f64,
    pub max_rate: f64,
}

impl TopologySpec {
    /// Defaults per kind: the verifier is as far as the slowest typical link.
    pub fn new(kind: TopologyKind, nodes: usize, f: usize, seed: u64) -> Self {
        let (verifier_ms, internal) = match kind {
            TopologyKind::Uniform { delay_ms } => (delay_ms, delay_ms),
            TopologyKind::Clustered { intra_ms, inter_ms, .. } => (inter_ms, intra_ms),
            TopologyKind::Lognormal { mu, .. } => (mu.exp(), mu.exp()),
        };
        TopologySpec {
            kind,
            nodes,
            f,
            seed,
            verifier_ms,
            verification_members: 4,
            verification_internal_ms: internal,
            max_rate: 0.05,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TopologyError {
    #[error("n < 3f+1 ({nodes} < {required})")]
    TooFewNodes { nodes: usize, required: usize },
    #[error("invalid topology parameter: {0}")]
    Invalid(String),
}

/// Cluster index of node `i` when `n` nodes are split into `k` contiguous
/// groups whose sizes differ by at most one.
pub fn cluster_of(n: usize, k: usize, i: usize) -> usize {
    i * k / n
}

pub fn generate(spec: &TopologySpec) -> Result<Instance, TopologyError> {
    let required = 3 * spec.f + 1;
    if spec.f == 0 {
        return Err(TopologyError::Invalid("f must be at least 1".into()));
    }
    if spec.nodes < required {
        return Err(TopologyError::TooFewNodes { nodes: spec.nodes, required });
    }
    let positive = |x: f64, what: &str| {
        if x.is_finite() && x > 0.0 {
            Ok(())
        } else {
            Err(TopologyError::Invalid(format!("{what} must be positive")))
        }
    };
    positive(spec.verifier_ms, "verifier delay")?;
    positive(spec.verification_internal_ms, "verification delay")?;
    if spec.verification_members == 0 {
        return Err(TopologyError::Invalid("verification committee needs a member".into()));
    }
    if !(0.0..=1.0).contains(&spec.max_rate) {
        return Err(TopologyError::Invalid("max rate must lie in [0, 1]".into()));
    }

    let n = spec.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // at least one microsecond so off-diagonal delays stay positive
    let tick = |ms: f64| Micros(Micros::from_ms(ms).0.max(1));
    let between: Vec<Vec<Micros>> = match spec.kind {
        TopologyKind::Uniform { delay_ms } => {
            positive(delay_ms, "delay")?;
            (0..n).map(|i| (0..n).map(|j| if i == j { Micros::ZERO } else { tick(delay_ms) }).collect()).collect()
        }
        TopologyKind::Clustered { clusters, intra_ms, inter_ms } => {
            positive(intra_ms, "intra-cluster delay")?;
            positive(inter_ms, "inter-cluster delay")?;
            if clusters == 0 || clusters > n {
                return Err(TopologyError::Invalid(format!("cluster count must lie in 1..={n}")));
            }
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| match i == j {
                            true => Micros::ZERO,
                            false if cluster_of(n, clusters, i) == cluster_of(n, clusters, j) => tick(intra_ms),
                            false => tick(inter_ms),
                        })
                        .collect()
                })
                .collect()
        }
        TopologyKind::Lognormal { mu, sigma } => {
            let dist =
                LogNormal::new(mu, sigma).map_err(|e| TopologyError::Invalid(format!("log-normal parameters: {e}")))?;
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { Micros::ZERO } else { tick(dist.sample(&mut rng)) }).collect())
                .collect()
        }
    };
    let nodes = (0..n)
        .map(|_| NodeProfile {
            byzantine_rate: rng.gen_range(0.0..=spec.max_rate),
            crash_rate: rng.gen_range(0.0..=spec.max_rate),
            tee_failed: false,
        })
        .collect();
    let m = spec.verification_members;
    let internal = tick(spec.verification_internal_ms);
    let vdelays = (0..m).map(|a| (0..m).map(|b| if a == b { Micros::ZERO } else { internal }).collect()).collect();
    let verifier = tick(spec.verifier_ms);
    Ok(Instance {
        nodes,
        delays: DelayMatrix { between, to_verifier: vec![verifier; n], from_verifier: vec![verifier; n] },
        verification: VerificationCommittee::new(0, vdelays),
        params: SystemParams { f: spec.f, max_byzantine: spec.max_rate, max_crash: spec.max_rate },
    })
}
