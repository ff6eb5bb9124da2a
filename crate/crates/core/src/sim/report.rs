use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::protocol::TraceRecord;

/// One committed transaction. Times are microseconds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub request: u64,
    /// Leader of the committee that ordered it.
    pub committee: usize,
    pub round: u64,
    /// When the client issued the request.
    pub submitted: u64,
    /// When the leader received it.
    pub started: u64,
    /// When the leader replied.
    pub committed: u64,
    pub t_pre: u64,
    pub t_cv: u64,
    pub t_ver: u64,
    pub t_vc: u64,
    pub t_com: u64,
}

impl TxRecord {
    pub fn latency(&self) -> u64 {
        self.committed - self.started
    }
}

/// Safety checks over one run. Every counter except the two equivocation
/// tallies must be zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyAudit {
    pub equivocation_attempts: u64,
    pub equivocation_alarms: u64,
    /// `(committee, sequence)` pairs accepted with more than one digest.
    pub accepted_equivocations: u64,
    /// Log entries whose digest changed after being bound.
    pub sequence_rebinds: u64,
    /// `(committee, sequence)` pairs replied with more than one digest.
    pub conflicting_replies: u64,
    /// Attested counter values not above the node's previous one.
    pub counter_violations: u64,
    /// Block heights on which verification members disagree.
    pub block_mismatches: u64,
    pub blocks: u64,
}

impl SafetyAudit {
    pub fn is_safe(&self) -> bool {
        self.accepted_equivocations == 0
            && self.sequence_rebinds == 0
            && self.conflicting_replies == 0
            && self.counter_violations == 0
            && self.block_mismatches == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultLogEntry {
    pub t: u64,
    pub event: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_requests: u64,
    pub transactions: Vec<TxRecord>,
    pub stalled: u64,
    pub in_flight: u64,
    /// Time of the last commit, microseconds.
    pub wall_time: u64,
    pub rounds: u64,
    pub reconfigurations: u64,
    pub fault_log: Vec<FaultLogEntry>,
    pub audit: SafetyAudit,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

/// Aggregate figures of a run, in milliseconds and operations per second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub total_requests: u64,
    pub committed: u64,
    pub stalled: u64,
    pub in_flight: u64,
    pub throughput: f64,
    pub latency_mean_ms: f64,
    pub latency_median_ms: f64,
    pub latency_p99_ms: f64,
    pub phase_mean_ms: PhaseMeans,
    pub wall_time_ms: f64,
    pub rounds: u64,
    pub reconfigurations: u64,
    pub audit: SafetyAudit,
    pub fault_log: Vec<FaultLogEntry>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseMeans {
    pub t_pre: f64,
    pub t_cv: f64,
    pub t_ver: f64,
    pub t_vc: f64,
    pub t_com: f64,
}

fn ms(us: f64) -> f64 {
    us / 1000.0
}

impl SimReport {
    pub fn committed(&self) -> u64 {
        self.transactions.len() as u64
    }

    /// Committed transactions per simulated second.
    pub fn throughput(&self) -> f64 {
        if self.wall_time == 0 {
            return 0.0;
        }
        self.committed() as f64 * 1e6 / self.wall_time as f64
    }

    fn sorted_latencies(&self) -> Vec<u64> {
        let mut l: Vec<u64> = self.transactions.iter().map(TxRecord::latency).collect();
        l.sort_unstable();
        l
    }

    pub fn mean_latency_ms(&self) -> f64 {
        if self.transactions.is_empty() {
            return 0.0;
        }
        let sum: u64 = self.transactions.iter().map(TxRecord::latency).sum();
        ms(sum as f64 / self.transactions.len() as f64)
    }

    /// Latency quantile by the nearest-rank method.
    pub fn latency_quantile_ms(&self, q: f64) -> f64 {
        let l = self.sorted_latencies();
        if l.is_empty() {
            return 0.0;
        }
        let rank = ((q * l.len() as f64).ceil() as usize).clamp(1, l.len());
        ms(l[rank - 1] as f64)
    }

    pub fn phase_means(&self) -> PhaseMeans {
        let n = self.transactions.len() as f64;
        if n == 0.0 {
            return PhaseMeans::default();
        }
        let mean = |f: fn(&TxRecord) -> u64| ms(self.transactions.iter().map(f).sum::<u64>() as f64 / n);
        PhaseMeans {
            t_pre: mean(|t| t.t_pre),
            t_cv: mean(|t| t.t_cv),
            t_ver: mean(|t| t.t_ver),
            t_vc: mean(|t| t.t_vc),
            t_com: mean(|t| t.t_com),
        }
    }

    pub fn summary(&self) -> SimSummary {
        SimSummary {
            total_requests: self.total_requests,
            committed: self.committed(),
            stalled: self.stalled,
            in_flight: self.in_flight,
            throughput: self.throughput(),
            latency_mean_ms: self.mean_latency_ms(),
            latency_median_ms: self.latency_quantile_ms(0.5),
            latency_p99_ms: self.latency_quantile_ms(0.99),
            phase_mean_ms: self.phase_means(),
            wall_time_ms: ms(self.wall_time as f64),
            rounds: self.rounds,
            reconfigurations: self.reconfigurations,
            audit: self.audit.clone(),
            fault_log: self.fault_log.clone(),
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }

    /// Per-transaction CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for t in &self.transactions {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Message trace as JSON lines.
    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.trace {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
