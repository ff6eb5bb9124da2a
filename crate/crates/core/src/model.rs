//! Problem instance shared by the optimizer and the simulator.
//!
//! Delays are held as integer microsecond ticks ([`Micros`]) so that the
//! analytic objective and simulated latencies can be compared exactly. The
//! JSON file format stores milliseconds as decimal numbers; conversion rounds
//! to the nearest microsecond.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A duration or timestamp in integer microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn from_ms(ms: f64) -> Micros {
        Micros((ms * 1000.0).round().max(0.0) as u64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: Micros) -> Micros {
        Micros(self.0.saturating_sub(other.0))
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0 - rhs.0)
    }
}

impl Mul<u64> for Micros {
    type Output = Micros;
    fn mul(self, rhs: u64) -> Micros {
        Micros(self.0 * rhs)
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.as_ms())
    }
}

/// Index of a consensus node, dense over `0..N_c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Reliability and TEE status of one consensus node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeProfile {
    pub byzantine_rate: f64,
    pub crash_rate: f64,
    pub tee_failed: bool,
}

impl NodeProfile {
    pub fn reliable() -> Self {
        NodeProfile { byzantine_rate: 0.0, crash_rate: 0.0, tee_failed: false }
    }
}

/// One-way delays between consensus nodes and to/from the verification
/// committee's leader.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayMatrix {
    pub between: Vec<Vec<Micros>>,
    pub to_verifier: Vec<Micros>,
    pub from_verifier: Vec<Micros>,
}

impl DelayMatrix {
    pub fn len(&self) -> usize {
        self.between.len()
    }

    pub fn is_empty(&self) -> bool {
        self.between.is_empty()
    }

    pub fn delay(&self, from: NodeId, to: NodeId) -> Micros {
        self.between[from.0][to.0]
    }

    /// Round-trip time `d_ij + d_ji`.
    ///
    /// # Panics
    ///
    /// Panics if `i == j`.
    pub fn rtt(&self, i: NodeId, j: NodeId) -> Micros {
        assert_ne!(i, j, "rtt is undefined for a node and itself");
        self.between[i.0][j.0] + self.between[j.0][i.0]
    }
}

/// Free-function form of [`DelayMatrix::rtt`].
pub fn rtt(delays: &DelayMatrix, i: NodeId, j: NodeId) -> Micros {
    delays.rtt(i, j)
}

/// The verification committee. Its members live in their own index space;
/// `delays[a][b]` is the one-way delay from member `a` to member `b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerificationCommittee {
    pub member_count: usize,
    pub leader: usize,
    pub delays: Vec<Vec<Micros>>,
    pub fault_tolerance: usize,
}

impl VerificationCommittee {
    pub fn new(leader: usize, delays: Vec<Vec<Micros>>) -> Self {
        let member_count = delays.len();
        VerificationCommittee { member_count, leader, delays, fault_tolerance: member_count.saturating_sub(1) / 3 }
    }

    pub fn followers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.member_count).filter(move |&m| m != self.leader)
    }

    pub fn rtt(&self, a: usize, b: usize) -> Micros {
        self.delays[a][b] + self.delays[b][a]
    }

    /// Largest leader-member round trip inside the committee.
    pub fn max_leader_rtt(&self) -> Micros {
        self.followers().map(|m| self.rtt(self.leader, m)).max().unwrap_or(Micros::ZERO)
    }
}

/// System-wide tolerance parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemParams {
    /// Faults tolerated per consensus committee.
    pub f: usize,
    /// Highest Byzantine rate a leader may have.
    pub max_byzantine: f64,
    /// Highest crash rate a leader may have.
    pub max_crash: f64,
}

impl SystemParams {
    pub fn min_committee_size(&self) -> usize {
        3 * self.f + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub nodes: Vec<NodeProfile>,
    pub delays: DelayMatrix,
    pub verification: VerificationCommittee,
    pub params: SystemParams,
}

impl Instance {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn profile(&self, id: NodeId) -> &NodeProfile {
        &self.nodes[id.0]
    }

    pub fn tee_failed(&self, id: NodeId) -> bool {
        self.nodes[id.0].tee_failed
    }

    pub fn rtt(&self, i: NodeId, j: NodeId) -> Micros {
        self.delays.rtt(i, j)
    }

    /// Largest number of committees a partition can have.
    pub fn max_committees(&self) -> usize {
        self.node_count() / self.params.min_committee_size()
    }

    /// A copy with `failed` nodes marked as TEE-failed.
    pub fn with_tee_failures(&self, failed: impl IntoIterator<Item = NodeId>) -> Instance {
        let mut out = self.clone();
        for id in failed {
            out.nodes[id.0].tee_failed = true;
        }
        out
    }

    /// A copy with every delay multiplied by `num / den`, rounded to the
    /// nearest microsecond.
    pub fn scaled(&self, num: u64, den: u64) -> Instance {
        let s = |m: Micros| Micros((m.0 * num + den / 2) / den);
        let mut out = self.clone();
        for row in &mut out.delays.between {
            for d in row.iter_mut() {
                *d = s(*d);
            }
        }
        for d in out.delays.to_verifier.iter_mut().chain(out.delays.from_verifier.iter_mut()) {
            *d = s(*d);
        }
        for row in &mut out.verification.delays {
            for d in row.iter_mut() {
                *d = s(*d);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), Vec<InstanceViolation>> {
        let violations = validate_instance(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    pub fn from_json(text: &str) -> Result<Instance, ModelError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Ok(file.into_instance())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from_instance(self)).expect("instance serializes")
    }

    pub fn load(path: &Path) -> Result<Instance, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
        Instance::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| ModelError::Io(path.display().to_string(), e))
    }
}

/// A structural problem with an instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InstanceViolation {
    DimensionMismatch(String),
    NonPositiveDelay { from: usize, to: usize },
    NonZeroDiagonal(usize),
    TooFewNodes { nodes: usize, required: usize },
    RateOutOfRange { node: usize, field: &'static str },
    ThresholdOutOfRange(&'static str),
    ZeroFaultTolerance,
    Verification(String),
}

impl fmt::Display for InstanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceViolation::DimensionMismatch(what) => write!(f, "dimension mismatch: {what}"),
            InstanceViolation::NonPositiveDelay { from, to } => {
                write!(f, "off-diagonal delay must be > 0 (d[{from}][{to}])")
            }
            InstanceViolation::NonZeroDiagonal(i) => write!(f, "diagonal delay must be 0 (d[{i}][{i}])"),
            InstanceViolation::TooFewNodes { nodes, required } => {
                write!(f, "N_c < 3f+1 ({nodes} < {required})")
            }
            InstanceViolation::RateOutOfRange { node, field } => {
                write!(f, "node {node}: {field} must lie in [0,1]")
            }
            InstanceViolation::ThresholdOutOfRange(which) => write!(f, "{which} must lie in [0,1]"),
            InstanceViolation::ZeroFaultTolerance => write!(f, "f must be positive"),
            InstanceViolation::Verification(what) => write!(f, "verification committee: {what}"),
        }
    }
}

/// Every structural violation of `instance`; empty means valid.
pub fn validate_instance(instance: &Instance) -> Vec<InstanceViolation> {
    let mut out = Vec::new();
    let n = instance.nodes.len();
    let params = &instance.params;

    if params.f == 0 {
        out.push(InstanceViolation::ZeroFaultTolerance);
    }
    if n < params.min_committee_size() {
        out.push(InstanceViolation::TooFewNodes { nodes: n, required: params.min_committee_size() });
    }
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    if !unit(params.max_byzantine) {
        out.push(InstanceViolation::ThresholdOutOfRange("B"));
    }
    if !unit(params.max_crash) {
        out.push(InstanceViolation::ThresholdOutOfRange("C"));
    }
    for (i, node) in instance.nodes.iter().enumerate() {
        if !unit(node.byzantine_rate) {
            out.push(InstanceViolation::RateOutOfRange { node: i, field: "b" });
        }
        if !unit(node.crash_rate) {
            out.push(InstanceViolation::RateOutOfRange { node: i, field: "c" });
        }
    }

    let d = &instance.delays;
    if d.between.len() != n {
        out.push(InstanceViolation::DimensionMismatch(format!("d has {} rows for {n} nodes", d.between.len())));
    }
    for (i, row) in d.between.iter().enumerate() {
        if row.len() != n {
            out.push(InstanceViolation::DimensionMismatch(format!("d row {i} has {} entries", row.len())));
            continue;
        }
        for (j, &delay) in row.iter().enumerate() {
            if i == j && delay != Micros::ZERO {
                out.push(InstanceViolation::NonZeroDiagonal(i));
            } else if i != j && delay == Micros::ZERO {
                out.push(InstanceViolation::NonPositiveDelay { from: i, to: j });
            }
        }
    }
    if d.to_verifier.len() != n {
        out.push(InstanceViolation::DimensionMismatch(format!("d_to_v has {} entries", d.to_verifier.len())));
    }
    if d.from_verifier.len() != n {
        out.push(InstanceViolation::DimensionMismatch(format!("d_from_v has {} entries", d.from_verifier.len())));
    }

    let v = &instance.verification;
    if v.member_count == 0 {
        out.push(InstanceViolation::Verification("no members".into()));
    } else {
        if v.leader >= v.member_count {
            out.push(InstanceViolation::Verification(format!("leader {} out of range", v.leader)));
        }
        if v.member_count < 3 * v.fault_tolerance + 1 {
            out.push(InstanceViolation::Verification(format!(
                "{} members cannot tolerate {} faults",
                v.member_count, v.fault_tolerance
            )));
        }
        if v.delays.len() != v.member_count || v.delays.iter().any(|r| r.len() != v.member_count) {
            out.push(InstanceViolation::Verification("delay table does not match member count".into()));
        } else {
            for a in 0..v.member_count {
                for b in 0..v.member_count {
                    if a != b && v.delays[a][b] == Micros::ZERO {
                        out.push(InstanceViolation::Verification(format!("delay {a}->{b} must be > 0")));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed instance: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}")]
    Format(String),
}

// On-disk representation.

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    b: f64,
    c: f64,
    t: u8,
}

#[derive(Serialize, Deserialize)]
struct VerificationRecord {
    members: usize,
    leader: usize,
    rtts: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    f: usize,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "C")]
    c: f64,
    nodes: Vec<NodeRecord>,
    d: Vec<Vec<f64>>,
    d_to_v: Vec<f64>,
    d_from_v: Vec<f64>,
    verification: VerificationRecord,
}

fn ms_row(row: &[f64]) -> Vec<Micros> {
    row.iter().map(|&ms| Micros::from_ms(ms)).collect()
}

fn row_ms(row: &[Micros]) -> Vec<f64> {
    row.iter().map(|m| m.as_ms()).collect()
}

impl InstanceFile {
    fn into_instance(self) -> Instance {
        let delays: Vec<Vec<Micros>> = self.verification.rtts.iter().map(|r| ms_row(r)).collect();
        let default_f = self.verification.members.saturating_sub(1) / 3;
        Instance {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeProfile { byzantine_rate: n.b, crash_rate: n.c, tee_failed: n.t != 0 })
                .collect(),
            delays: DelayMatrix {
                between: self.d.iter().map(|r| ms_row(r)).collect(),
                to_verifier: ms_row(&self.d_to_v),
                from_verifier: ms_row(&self.d_from_v),
            },
            verification: VerificationCommittee {
                member_count: self.verification.members,
                leader: self.verification.leader,
                delays,
                fault_tolerance: self.verification.f.unwrap_or(default_f),
            },
            params: SystemParams { f: self.f, max_byzantine: self.b, max_crash: self.c },
        }
    }

    fn from_instance(instance: &Instance) -> InstanceFile {
        let v = &instance.verification;
        let default_f = v.member_count.saturating_sub(1) / 3;
        InstanceFile {
            f: instance.params.f,
            b: instance.params.max_byzantine,
            c: instance.params.max_crash,
            nodes: instance
                .nodes
                .iter()
                .map(|n| NodeRecord { b: n.byzantine_rate, c: n.crash_rate, t: n.tee_failed as u8 })
                .collect(),
            d: instance.delays.between.iter().map(|r| row_ms(r)).collect(),
            d_to_v: row_ms(&instance.delays.to_verifier),
            d_from_v: row_ms(&instance.delays.from_verifier),
            verification: VerificationRecord {
                members: v.member_count,
                leader: v.leader,
                rtts: v.delays.iter().map(|r| row_ms(r)).collect(),
                f: (v.fault_tolerance != default_f).then_some(v.fault_tolerance),
            },
        }
    }
}

/// Uniform instance used throughout the tests: every consensus delay is
/// `delay`, leader links to the verifier are `verifier_delay`, and the
/// verification committee has `members` nodes with one-way delay `vdelay`.
pub fn uniform_instance(
    n: usize,
    f: usize,
    delay: Micros,
    verifier_delay: Micros,
    members: usize,
    vdelay: Micros,
) -> Instance {
    let between = (0..n).map(|i| (0..n).map(|j| if i == j { Micros::ZERO } else { delay }).collect()).collect();
    let vdelays =
        (0..members).map(|a| (0..members).map(|b| if a == b { Micros::ZERO } else { vdelay }).collect()).collect();
    Instance {
        nodes: vec![NodeProfile::reliable(); n],
        delays: DelayMatrix { between, to_verifier: vec![verifier_delay; n], from_verifier: vec![verifier_delay; n] },
        verification: VerificationCommittee::new(0, vdelays),
        params: SystemParams { f, max_byzantine: 1.0, max_crash: 1.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ms(x: u64) -> Micros {
        Micros(x * 1000)
    }

    #[test]
    fn minimal_feasible_instance_is_valid() {
        let inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        assert!(validate_instance(&inst).is_empty());
    }

    #[test]
    fn too_few_nodes() {
        let inst = uniform_instance(3, 1, ms(1), ms(1), 4, ms(1));
        let v = validate_instance(&inst);
        assert_eq!(v, vec![InstanceViolation::TooFewNodes { nodes: 3, required: 4 }]);
        assert!(v[0].to_string().contains("N_c < 3f+1"));
    }

    #[test]
    fn zero_off_diagonal_delay() {
        let mut inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        inst.delays.between[1][2] = Micros::ZERO;
        let v = validate_instance(&inst);
        assert_eq!(v, vec![InstanceViolation::NonPositiveDelay { from: 1, to: 2 }]);
        assert!(v[0].to_string().contains("off-diagonal delay must be > 0"));
    }

    #[test]
    fn reports_every_violation() {
        let mut inst = uniform_instance(4, 1, ms(1), ms(1), 4, ms(1));
        inst.nodes[0].crash_rate = 1.5;
        inst.delays.to_verifier.pop();
        inst.params.max_byzantine = -0.1;
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 3);
        assert_eq!(validate_instance(&inst), v);
    }

    #[test]
    fn rtt_definition() {
        let mut inst = uniform_instance(4, 1, ms(2), ms(1), 1, ms(1));
        assert_eq!(rtt(&inst.delays, NodeId(0), NodeId(1)), ms(4));
        inst.delays.between[0][1] = ms(3);
        inst.delays.between[1][0] = ms(5);
        assert_eq!(rtt(&inst.delays, NodeId(0), NodeId(1)), ms(8));
    }

    #[test]
    #[should_panic]
    fn rtt_rejects_self_pair() {
        let inst = uniform_instance(4, 1, ms(2), ms(1), 1, ms(1));
        inst.rtt(NodeId(2), NodeId(2));
    }

    #[test]
    fn rtt_matches_elementwise_sum_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 6;
        let raw: Vec<Vec<u64>> =
            (0..n).map(|i| (0..n).map(|j| if i == j { 0 } else { rng.gen_range(1..10_000) }).collect()).collect();
        let delays = DelayMatrix {
            between: raw.iter().map(|r| r.iter().map(|&x| Micros(x)).collect()).collect(),
            to_verifier: vec![Micros(1); n],
            from_verifier: vec![Micros(1); n],
        };
        for (i, row) in raw.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                if i != j {
                    assert_eq!(delays.rtt(NodeId(i), NodeId(j)).0, d + raw[j][i]);
                    assert_eq!(delays.rtt(NodeId(i), NodeId(j)), delays.rtt(NodeId(j), NodeId(i)));
                }
            }
        }
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let mut inst = uniform_instance(5, 1, Micros(1500), Micros(2250), 4, Micros(100));
        inst.nodes[2] = NodeProfile { byzantine_rate: 0.25, crash_rate: 0.1, tee_failed: true };
        inst.params.max_byzantine = 0.2;
        let text = inst.to_json();
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn parses_documented_format() {
        let text = r#"{"f":1,"B":0.5,"C":0.5,
            "nodes":[{"b":0,"c":0,"t":0},{"b":0,"c":0,"t":1},{"b":0.1,"c":0,"t":0},{"b":0,"c":0.2,"t":0}],
            "d":[[0,1,1,1],[1,0,1,1],[1,1,0,1],[1,1,1.25,0]],
            "d_to_v":[2,2,2,2],"d_from_v":[3,3,3,3],
            "verification":{"members":1,"leader":0,"rtts":[[0]]}}"#;
        let inst = Instance::from_json(text).unwrap();
        assert!(inst.validate().is_ok());
        assert!(inst.tee_failed(NodeId(1)));
        assert_eq!(inst.delays.between[3][2], Micros(1250));
        assert_eq!(inst.delays.from_verifier[0], ms(3));
    }
}
