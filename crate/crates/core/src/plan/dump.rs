use serde::{Deserialize, Serialize};

use super::{build_buffer_layout, reorganize, CostParams, DedupPlan, Phase2Mode, Schedule, Volumes};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par::Exec;
use crate::partition::{neighbor_sets, TwoLevelPartition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePlanSummary {
    pub device: usize,
    pub neighbor_sizes: Vec<usize>,
    pub transition_sizes: Vec<usize>,
    pub reused_sizes: Vec<usize>,
    pub loaded_sizes: Vec<usize>,
    pub buffer_capacity: usize,
}

/// Plan statistics for one chunk ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanVariant {
    pub schedule: Schedule,
    pub batch_union_sizes: Vec<usize>,
    pub devices: Vec<DevicePlanSummary>,
    pub volumes: Volumes,
    pub dedup_rows: usize,
    pub cost: f64,
}

impl PlanVariant {
    pub fn new(schedule: Schedule, plan: &DedupPlan, cost: &CostParams) -> Result<Self> {
        let layout = build_buffer_layout(plan);
        let sizes = |grid: &Vec<Vec<usize>>| grid.iter().map(Vec::len).collect::<Vec<_>>();
        let devices = (0..plan.m())
            .map(|i| DevicePlanSummary {
                device: i,
                neighbor_sizes: sizes(&plan.neighbors[i]),
                transition_sizes: sizes(&plan.transition.owned[i]),
                reused_sizes: sizes(&plan.split.reused[i]),
                loaded_sizes: sizes(&plan.split.loaded[i]),
                buffer_capacity: layout.devices[i].capacity,
            })
            .collect();
        let volumes = plan.volumes();
        Ok(Self {
            schedule,
            batch_union_sizes: sizes(&plan.transition.union),
            devices,
            volumes,
            dedup_rows: volumes.original - volumes.after_reuse,
            cost: plan.cost(cost)?,
        })
    }
}

/// Serialized planning result for the identity and reorganized orderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDump {
    pub graph_hash: String,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub cost_params: CostParams,
    pub identity: PlanVariant,
    pub reorganized: PlanVariant,
    /// `"reorganized"` or `"identity"`, whichever has the lower cost.
    pub chosen: String,
    pub reorganized_reuse_leq_identity: bool,
    /// With equal throughputs `T`, every cost collapses to `original / T`.
    pub equal_throughputs: bool,
}

impl PlanDump {
    /// Plans the identity ordering and the greedy reorganization of `p`.
    pub fn build(
        g: &Graph,
        p: &TwoLevelPartition,
        seed: u64,
        costs: &CostParams,
        phase2: Phase2Mode,
        exec: Exec,
    ) -> Result<Self> {
        let nbrs = neighbor_sets(p);
        let ident = Schedule::identity(p.m(), p.n());
        let reorg = reorganize(&nbrs, phase2).schedule;
        let variant = |s: Schedule| -> Result<PlanVariant> {
            let plan = DedupPlan::build(s.apply(&nbrs), p.assignment(), exec)?;
            PlanVariant::new(s, &plan, costs)
        };
        let identity = variant(ident)?;
        let reorganized = variant(reorg)?;
        let chosen = if reorganized.cost <= identity.cost { "reorganized" } else { "identity" };
        Ok(Self {
            graph_hash: g.content_hash(),
            seed,
            m: p.m(),
            n: p.n(),
            cost_params: *costs,
            reorganized_reuse_leq_identity: reorganized.volumes.after_reuse <= identity.volumes.after_reuse,
            equal_throughputs: costs.host_device == costs.device_device && costs.device_device == costs.reuse,
            chosen: chosen.into(),
            identity,
            reorganized,
        })
    }

    pub fn chosen_schedule(&self) -> &Schedule {
        if self.chosen == "reorganized" {
            &self.reorganized.schedule
        } else {
            &self.identity.schedule
        }
    }

    /// Errors if the dump was built for a different graph.
    pub fn check_fresh(&self, g: &Graph) -> Result<()> {
        let hash = g.content_hash();
        if hash != self.graph_hash {
            return Err(Error::Config(format!(
                "plan is stale: built for graph {}, current graph is {hash}; re-run `plan`",
                self.graph_hash
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::toy_fixture;
    use crate::partition::split_chunks;

    #[test]
    fn toy_dump() {
        let (g, a) = toy_fixture();
        let p = split_chunks(&g, &a, 2, Exec::Sequential).unwrap();
        let d = PlanDump::build(&g, &p, 0, &CostParams::default(), Phase2Mode::WholeBatch, Exec::Sequential).unwrap();
        let v = d.identity.volumes;
        assert_eq!((v.original, v.after_p2p, v.after_reuse), (19, 11, 8));
        assert!(d.identity.cost.min(d.reorganized.cost) == match d.chosen.as_str() {
            "reorganized" => d.reorganized.cost,
            _ => d.identity.cost,
        });
        assert!(!d.equal_throughputs);
        d.check_fresh(&g).unwrap();
        let other = crate::Graph::from_edges(8, &[(0, 1)]).unwrap();
        assert!(d.check_fresh(&other).unwrap_err().to_string().contains("stale"));
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<PlanDump>(&json).unwrap(), d);

        let flat = PlanDump::build(&g, &p, 0, &CostParams::uniform(10.0), Phase2Mode::WholeBatch, Exec::Sequential).unwrap();
        assert!(flat.equal_throughputs);
        assert!((flat.identity.cost - 1.9).abs() < 1e-12);
    }
}
