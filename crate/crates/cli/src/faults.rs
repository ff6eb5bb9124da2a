use std::collections::BTreeMap;

use clap::Args;

use topbft_core::model::{Instance, Micros, NodeId};
use topbft_core::sim::FaultPlan;

use crate::Failure;

#[derive(Args, Clone, Debug, Default)]
pub struct FaultArgs {
    /// Crash `node@ms`, repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    crash: Vec<String>,
    /// TEE failure `node@ms`.
    #[arg(long, value_delimiter = ',')]
    tee_fail: Vec<String>,
    /// TEE recovery `node@ms`.
    #[arg(long, value_delimiter = ',')]
    tee_recover: Vec<String>,
    /// TEE failures at time zero on this fraction of random nodes.
    #[arg(long)]
    tee_fraction: Option<f64>,
    /// Sample crashes from the nodes' crash rates within this horizon (ms).
    #[arg(long)]
    crash_horizon_ms: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    slow: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    slow_factor: f64,
    /// Leaders that send conflicting pre-prepares.
    #[arg(long, value_delimiter = ',')]
    equivocate: Vec<usize>,
}

fn timed(items: &[String], n: usize) -> Result<BTreeMap<NodeId, Micros>, Failure> {
    let mut out = BTreeMap::new();
    for item in items {
        let bad = || Failure::Usage(format!("fault `{item}`: expected node@ms"));
        let (node, at) = item.split_once('@').ok_or_else(bad)?;
        let node: usize = node.trim().parse().map_err(|_| bad())?;
        let at: f64 = at.trim().parse().map_err(|_| bad())?;
        if node >= n || at.is_nan() || at < 0.0 {
            return Err(bad());
        }
        out.insert(NodeId(node), Micros::from_ms(at));
    }
    Ok(out)
}

impl FaultArgs {
    pub fn plan(&self, inst: &Instance, seed: u64) -> Result<FaultPlan, Failure> {
        let n = inst.node_count();
        let mut plan = match self.tee_fraction {
            Some(frac) if (0.0..=1.0).contains(&frac) => FaultPlan::tee_fraction(n, frac, Micros::ZERO, seed),
            Some(frac) => return Err(Failure::Usage(format!("TEE failure fraction {frac} outside [0, 1]"))),
            None => FaultPlan::none(),
        };
        if let Some(h) = self.crash_horizon_ms {
            plan.crashes = FaultPlan::from_rates(inst, Micros::from_ms(h), seed).crashes;
        }
        plan.crashes.extend(timed(&self.crash, n)?);
        plan.tee_failures.extend(timed(&self.tee_fail, n)?);
        plan.tee_recoveries = timed(&self.tee_recover, n)?;
        plan.slow_nodes = self.slow.iter().map(|&j| NodeId(j)).collect();
        plan.slow_factor = self.slow_factor;
        plan.equivocators = self.equivocate.iter().map(|&j| NodeId(j)).collect();
        Ok(plan)
    }
}
