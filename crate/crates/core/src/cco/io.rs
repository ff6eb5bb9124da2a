//! JSON form of configurations and solver results.
//!
//! ```json
//! {"p": 2,
//!  "committees": [{"leader": 0, "members": [0, 1, 2, 3], "active": [1, 2], "sigma": 0}, ...],
//!  "latency": {"t_pre": 0.4, "t_cv": 5.0, "t_ver": 0.8, "t_vc": 5.0, "t_com": 0.4, "t_tr": 11.6},
//!  "optimal": true, "gap": 0.0}
//! ```
//!
//! `members` includes the leader. Latency terms are milliseconds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Configuration, LatencyBreakdown, Solution};
use crate::model::{Micros, ModelError, NodeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeRecord {
    pub leader: usize,
    pub members: Vec<usize>,
    pub active: Vec<usize>,
    pub sigma: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationFile {
    pub p: usize,
    pub committees: Vec<CommitteeRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub t_pre: f64,
    pub t_cv: f64,
    pub t_ver: f64,
    pub t_vc: f64,
    pub t_com: f64,
    pub t_tr: f64,
}

/// A configuration with optional solver annotations; files without
/// `latency` are plain configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    #[serde(flatten)]
    pub configuration: ConfigurationFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

impl ConfigurationFile {
    pub fn from_config(config: &Configuration) -> Self {
        let committees = config
            .committees()
            .into_iter()
            .map(|c| {
                let mut members: Vec<usize> = c.followers.iter().map(|j| j.0).collect();
                members.push(c.leader.0);
                members.sort_unstable();
                CommitteeRecord {
                    leader: c.leader.0,
                    members,
                    active: c.active.iter().map(|j| j.0).collect(),
                    sigma: u8::from(c.sigma),
                }
            })
            .collect();
        ConfigurationFile { p: config.committee_count, committees }
    }

    /// Rebuilds the configuration for an instance of `node_count` nodes.
    /// Structural problems that the in-memory form cannot represent (a node
    /// listed twice or not at all, ids out of range) are reported here;
    /// everything else is left to the constraint checker.
    pub fn to_config(&self, node_count: usize) -> Result<Configuration, ModelError> {
        let bad = |msg: String| ModelError::Format(msg);
        let mut leader_of: Vec<Option<NodeId>> = vec![None; node_count];
        let mut active_links = BTreeSet::new();
        let mut sigma = BTreeMap::new();
        for c in &self.committees {
            if c.leader >= node_count {
                return Err(bad(format!("leader {} out of range", c.leader)));
            }
            let leader = NodeId(c.leader);
            for &m in c.members.iter().chain(std::iter::once(&c.leader)) {
                let slot = leader_of.get_mut(m).ok_or_else(|| bad(format!("member {m} out of range")))?;
                match slot {
                    Some(l) if *l != leader => return Err(bad(format!("node {m} listed in two committees"))),
                    _ => *slot = Some(leader),
                }
            }
            for &a in &c.active {
                if a >= node_count {
                    return Err(bad(format!("active node {a} out of range")));
                }
                active_links.insert((leader, NodeId(a)));
            }
            if sigma.insert(leader, c.sigma != 0).is_some() {
                return Err(bad(format!("leader {} appears twice", c.leader)));
            }
        }
        let leader_of = leader_of
            .into_iter()
            .enumerate()
            .map(|(j, l)| l.ok_or_else(|| bad(format!("node {j} belongs to no committee"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Configuration { leader_of, active_links, sigma, committee_count: self.p })
    }
}

impl LatencyRecord {
    pub fn from_latency(l: &LatencyBreakdown) -> Self {
        LatencyRecord {
            t_pre: l.t_pre.as_ms(),
            t_cv: l.t_cv.as_ms(),
            t_ver: l.t_ver.as_ms(),
            t_vc: l.t_vc.as_ms(),
            t_com: l.t_com.as_ms(),
            t_tr: l.t_tr.as_ms(),
        }
    }

    pub fn to_latency(&self) -> LatencyBreakdown {
        let m = Micros::from_ms;
        LatencyBreakdown::new(m(self.t_pre), m(self.t_cv), m(self.t_ver), m(self.t_vc), m(self.t_com))
    }
}

impl SolutionFile {
    pub fn from_solution(sol: &Solution) -> Self {
        SolutionFile {
            configuration: ConfigurationFile::from_config(&sol.config),
            latency: Some(LatencyRecord::from_latency(&sol.latency)),
            optimal: Some(sol.optimal),
            gap: Some(sol.gap),
        }
    }

    pub fn from_config(config: &Configuration) -> Self {
        SolutionFile { configuration: ConfigurationFile::from_config(config), latency: None, optimal: None, gap: None }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| ModelError::Io(path.display().to_string(), e))
    }
}
