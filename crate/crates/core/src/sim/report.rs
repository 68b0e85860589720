use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::plan::{CostParams, DedupMode, Volumes};

/// What a metered transfer was part of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ForwardGather,
    ForwardDestination,
    ForwardWriteback,
    CheckpointStore,
    CheckpointLoad,
    RecomputeGather,
    RecomputeDestination,
    GradLoad,
    GradScatter,
    DestinationGradFlush,
}

impl Phase {
    /// Phases that run the deduplicated neighbor gather.
    pub fn is_gather(self) -> bool {
        matches!(self, Phase::ForwardGather | Phase::RecomputeGather)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferCounters {
    pub h2d_rows: u64,
    pub d2h_rows: u64,
    pub d2d_rows: u64,
    /// Transition rows kept in place instead of reloaded.
    pub reuse_rows: u64,
    /// Neighbor rows still resident from the previous batch.
    pub resident_rows: u64,
    pub h2d_bytes: u64,
    pub d2h_bytes: u64,
    pub d2d_bytes: u64,
    pub reuse_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    H2d,
    D2h,
    D2d,
    Reuse,
    Resident,
}

impl TransferCounters {
    pub fn add(&mut self, class: Class, rows: usize, row_bytes: usize) {
        let (r, b) = (rows as u64, (rows * row_bytes) as u64);
        match class {
            Class::H2d => {
                self.h2d_rows += r;
                self.h2d_bytes += b;
            }
            Class::D2h => {
                self.d2h_rows += r;
                self.d2h_bytes += b;
            }
            Class::D2d => {
                self.d2d_rows += r;
                self.d2d_bytes += b;
            }
            Class::Reuse => {
                self.reuse_rows += r;
                self.reuse_bytes += b;
            }
            Class::Resident => self.resident_rows += r,
        }
    }

    pub fn merge(&mut self, o: &TransferCounters) {
        self.h2d_rows += o.h2d_rows;
        self.d2h_rows += o.d2h_rows;
        self.d2d_rows += o.d2d_rows;
        self.reuse_rows += o.reuse_rows;
        self.resident_rows += o.resident_rows;
        self.h2d_bytes += o.h2d_bytes;
        self.d2h_bytes += o.d2h_bytes;
        self.d2d_bytes += o.d2d_bytes;
        self.reuse_bytes += o.reuse_bytes;
    }

    /// Analytic transfer time under the three-throughput model. Host
    /// traffic in both directions uses the host link.
    pub fn modeled_time(&self, t: &CostParams) -> f64 {
        (self.h2d_rows + self.d2h_rows) as f64 / t.host_device
            + self.d2d_rows as f64 / t.device_device
            + self.reuse_rows as f64 / t.reuse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub device: usize,
    pub totals: TransferCounters,
    pub by_phase: BTreeMap<Phase, TransferCounters>,
    pub peak_slots: usize,
    pub capacity: usize,
    /// Peak slots × widest row seen, in bytes.
    pub peak_buffer_bytes: usize,
}

/// Metered totals compared against what the planner predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCheck {
    pub volumes: Volumes,
    pub gather_passes: usize,
    pub predicted_gather_h2d: u64,
    pub metered_gather_h2d: u64,
    pub predicted_gather_d2d: u64,
    pub metered_gather_d2d: u64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub mode: DedupMode,
    pub devices: Vec<DeviceReport>,
    pub totals: TransferCounters,
    pub plan_check: PlanCheck,
    /// Modeled cost of one deduplicated gather over all batches.
    pub predicted_gather_cost: f64,
    pub modeled_time: f64,
}

impl TransferReport {
    pub fn phase_totals(&self, phase: Phase) -> TransferCounters {
        let mut t = TransferCounters::default();
        for d in &self.devices {
            if let Some(c) = d.by_phase.get(&phase) {
                t.merge(c);
            }
        }
        t
    }

    /// CSV with one row per (device, phase) plus per-device totals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "device,phase,h2d_rows,d2h_rows,d2d_rows,reuse_rows,resident_rows,h2d_bytes,d2h_bytes,d2d_bytes,reuse_bytes\n",
        );
        let mut line = |dev: &str, phase: &str, c: &TransferCounters| {
            out.push_str(&format!(
                "{dev},{phase},{},{},{},{},{},{},{},{},{}\n",
                c.h2d_rows, c.d2h_rows, c.d2d_rows, c.reuse_rows, c.resident_rows,
                c.h2d_bytes, c.d2h_bytes, c.d2d_bytes, c.reuse_bytes
            ));
        };
        for d in &self.devices {
            let id = d.device.to_string();
            for (p, c) in &d.by_phase {
                let name = serde_json::to_value(p).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                line(&id, &name, c);
            }
            line(&id, "total", &d.totals);
        }
        line("all", "total", &self.totals);
        out
    }
}
