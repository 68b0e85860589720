//! Deduplicated host↔device transfer planning.
//!
//! For batch `j` (the chunks scheduled concurrently at position `j`, one per
//! device) the planner computes the transition set, the union of the batch's
//! neighbor sets, and gives each device `i` the part it owns. Each transition
//! vertex crosses the host boundary at most once per batch; peers fetch it
//! device-to-device. Vertices a device already holds from its previous batch
//! are reused in place instead of being reloaded.

mod dump;
mod layout;
mod reorganize;

pub use dump::{DevicePlanSummary, PlanDump, PlanVariant};
pub use layout::{build_buffer_layout, BufferLayout, DeviceLayout, SlotRecycle};
pub use reorganize::{reorganize, Phase2Mode, Reorganization, Schedule};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::partition::PartitionAssignment;
use crate::sets;

/// Neighbor sets indexed `[device][batch]`, each ascending.
pub type NeighborGrid = Vec<Vec<Vec<usize>>>;

/// Which deduplication stages the simulator applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord, Default)]
#[serde(rename_all = "lowercase")]
pub enum DedupMode {
    /// Every chunk loads its whole neighbor set from the host.
    Baseline,
    /// Inter-device deduplication only.
    P2p,
    /// Inter-device deduplication plus intra-device reuse.
    #[default]
    Full,
}

impl DedupMode {
    pub const ALL: [DedupMode; 3] = [DedupMode::Baseline, DedupMode::P2p, DedupMode::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            DedupMode::Baseline => "baseline",
            DedupMode::P2p => "p2p",
            DedupMode::Full => "full",
        }
    }
}

impl std::str::FromStr for DedupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(DedupMode::Baseline),
            "p2p" => Ok(DedupMode::P2p),
            "full" => Ok(DedupMode::Full),
            other => Err(Error::Config(format!(
                "unknown dedup mode {other:?} (expected baseline, p2p or full)"
            ))),
        }
    }
}

/// Per-batch transition sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSets {
    /// `union[j]`: deduplicated neighbors of batch `j`.
    pub union: Vec<Vec<usize>>,
    /// `owned[i][j]`: the part of `union[j]` owned by device `i`.
    pub owned: Vec<Vec<Vec<usize>>>,
}

/// Intra-device split of each owned transition set.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraSplit {
    /// Rows reused in place from the device's previous batch.
    pub reused: Vec<Vec<Vec<usize>>>,
    /// Rows loaded from the host.
    pub loaded: Vec<Vec<Vec<usize>>>,
}

pub fn transition_sets(
    nbrs: &[Vec<Vec<usize>>],
    owner: &PartitionAssignment,
    exec: Exec,
) -> Result<TransitionSets> {
    let m = nbrs.len();
    if m != owner.m() {
        return Err(Error::Partition(format!(
            "{m} neighbor rows for {} partitions",
            owner.m()
        )));
    }
    let n = nbrs.first().map_or(0, Vec::len);
    if nbrs.iter().any(|row| row.len() != n) {
        return Err(Error::Partition("neighbor grid rows differ in length".into()));
    }

    let per_batch = exec.try_map_range(n, |j| {
        let union = sets::union_many(nbrs.iter().map(|row| row[j].as_slice()));
        let mut owned = vec![Vec::new(); m];
        for &v in &union {
            owned[owner.try_owner(v)?].push(v);
        }
        Ok::<_, Error>((union, owned))
    })?;

    let mut union = Vec::with_capacity(n);
    let mut owned = vec![Vec::with_capacity(n); m];
    for (u, per_dev) in per_batch {
        union.push(u);
        for (i, s) in per_dev.into_iter().enumerate() {
            owned[i].push(s);
        }
    }
    Ok(TransitionSets { union, owned })
}

pub fn intra_split(ts: &TransitionSets) -> IntraSplit {
    let split = |f: fn(&[usize], &[usize]) -> Vec<usize>, first: fn(&[usize]) -> Vec<usize>| {
        ts.owned
            .iter()
            .map(|row| {
                (0..row.len())
                    .map(|j| if j == 0 { first(&row[0]) } else { f(&row[j], &row[j - 1]) })
                    .collect()
            })
            .collect()
    };
    IntraSplit {
        reused: split(sets::intersection, |_| Vec::new()),
        loaded: split(sets::difference, |s| s.to_vec()),
    }
}

/// Host-transfer row volumes under the three transfer strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Volumes {
    /// Every chunk's neighbor set sent in full.
    pub original: usize,
    /// One copy per batch of each neighbor.
    pub after_p2p: usize,
    /// Additionally skipping rows carried over from the previous batch.
    pub after_reuse: usize,
}

impl Volumes {
    pub fn host_rows(&self, mode: DedupMode) -> usize {
        match mode {
            DedupMode::Baseline => self.original,
            DedupMode::P2p => self.after_p2p,
            DedupMode::Full => self.after_reuse,
        }
    }
}

/// Per-unit throughputs (vertex rows per time unit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub host_device: f64,
    pub device_device: f64,
    pub reuse: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            host_device: 25.0,
            device_device: 200.0,
            reuse: 1300.0,
        }
    }
}

impl CostParams {
    pub fn uniform(t: f64) -> Self {
        Self {
            host_device: t,
            device_device: t,
            reuse: t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("host_device", self.host_device),
            ("device_device", self.device_device),
            ("reuse", self.reuse),
        ] {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Config(format!(
                    "throughput {name} must be positive and finite, got {t}"
                )));
            }
        }
        Ok(())
    }
}

pub fn comm_volumes(nbrs: &[Vec<Vec<usize>>], ts: &TransitionSets) -> Volumes {
    let original = nbrs.iter().flatten().map(Vec::len).sum();
    let after_p2p = ts.union.iter().map(Vec::len).sum();
    let after_reuse = ts
        .union
        .iter()
        .enumerate()
        .map(|(j, u)| {
            if j == 0 {
                u.len()
            } else {
                u.len() - sets::intersection_len(u, &ts.union[j - 1])
            }
        })
        .sum();
    Volumes {
        original,
        after_p2p,
        after_reuse,
    }
}

/// Modeled transfer cost:
/// `after_reuse / T_hd + (original − after_p2p) / T_dd + (after_p2p − after_reuse) / T_ru`.
pub fn comm_cost(v: &Volumes, t: &CostParams) -> Result<f64> {
    t.validate()?;
    Ok(v.after_reuse as f64 / t.host_device
        + (v.original - v.after_p2p) as f64 / t.device_device
        + (v.after_p2p - v.after_reuse) as f64 / t.reuse)
}

/// Complete transfer plan for one schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DedupPlan {
    m: usize,
    n: usize,
    owner: PartitionAssignment,
    /// `N_ij` in scheduled order.
    pub neighbors: NeighborGrid,
    pub transition: TransitionSets,
    pub split: IntraSplit,
    /// `local[i][j] = N_ij ∩ owned[i][j]`.
    pub local: Vec<Vec<Vec<usize>>>,
    /// `remote[i][j]`: `(peer, N_ij ∩ owned[peer][j])` in the interleaved
    /// peer order `i+1, …, i+m−1 (mod m)`.
    pub remote: Vec<Vec<Vec<(usize, Vec<usize>)>>>,
}

impl DedupPlan {
    pub fn build(nbrs: NeighborGrid, owner: &PartitionAssignment, exec: Exec) -> Result<Self> {
        let transition = transition_sets(&nbrs, owner, exec)?;
        let split = intra_split(&transition);
        let m = nbrs.len();
        let n = transition.union.len();
        let owned = &transition.owned;
        let (local, remote): (Vec<_>, Vec<_>) = exec
            .map_range(m, |i| {
                let mut local = Vec::with_capacity(n);
                let mut remote = Vec::with_capacity(n);
                for j in 0..n {
                    local.push(sets::intersection(&nbrs[i][j], &owned[i][j]));
                    remote.push(
                        peer_order(i, m)
                            .map(|k| (k, sets::intersection(&nbrs[i][j], &owned[k][j])))
                            .collect(),
                    );
                }
                (local, remote)
            })
            .into_iter()
            .unzip();
        Ok(Self {
            m,
            n,
            owner: owner.clone(),
            neighbors: nbrs,
            transition,
            split,
            local,
            remote,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn owner(&self) -> &PartitionAssignment {
        &self.owner
    }

    pub fn volumes(&self) -> Volumes {
        comm_volumes(&self.neighbors, &self.transition)
    }

    pub fn cost(&self, t: &CostParams) -> Result<f64> {
        comm_cost(&self.volumes(), t)
    }

    /// Rows device `i` must fetch from peers in batch `j`. Under full dedup,
    /// neighbors already resident from the device's previous batch are
    /// skipped.
    pub fn fetch_rows(&self, i: usize, j: usize, mode: DedupMode) -> usize {
        let foreign = sets::difference(&self.neighbors[i][j], &self.local[i][j]);
        match mode {
            DedupMode::Baseline => 0,
            DedupMode::P2p => foreign.len(),
            DedupMode::Full if j == 0 => foreign.len(),
            DedupMode::Full => sets::difference(&foreign, &self.neighbors[i][j - 1]).len(),
        }
    }

    /// Planner-predicted device-to-device rows for one forward gather of all
    /// batches.
    pub fn predicted_fetch_rows(&self, mode: DedupMode) -> usize {
        (0..self.m)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.fetch_rows(i, j, mode))
            .sum()
    }

    /// Planner-predicted host-to-device rows for one forward gather.
    pub fn predicted_host_rows(&self, mode: DedupMode) -> usize {
        self.volumes().host_rows(mode)
    }

    /// Rows retained in place (not reloaded) over one gather under `mode`.
    pub fn predicted_reuse_rows(&self, mode: DedupMode) -> usize {
        match mode {
            DedupMode::Full => self.split.reused.iter().flatten().map(Vec::len).sum(),
            _ => 0,
        }
    }
}

/// Interleaved peer order starting after `i`.
pub fn peer_order(i: usize, m: usize) -> impl Iterator<Item = usize> {
    (1..m).map(move |d| (i + d) % m)
}
