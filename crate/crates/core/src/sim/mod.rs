//! Multi-device transfer simulator.
//!
//! Devices are plain structs holding a merged slot buffer laid out by the
//! planner. Every row moved between host and devices, or between devices,
//! is a real copy of values and is metered per device, phase and class.
//! Each public transfer routine runs its per-device steps as separate
//! phases with an implicit barrier in between; cross-device reads only see
//! buffers as they stood at the previous barrier.

mod host;
mod report;

pub use host::HostStore;
pub use report::{Class, DeviceReport, Phase, PlanCheck, TransferCounters, TransferReport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::par::Exec;
use crate::plan::{BufferLayout, CostParams, DedupMode, DedupPlan};
use crate::sets;
#[cfg(test)]
use crate::matrix::relative_error;

/// When accumulated transition gradients leave the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradFlush {
    /// Keep a row on the device while the next batch still owns it; flush
    /// when it leaves the live set or after the layer's final batch.
    #[default]
    OnEviction,
    /// Flush every owned row after each batch.
    Eager,
}

#[derive(Debug, Clone)]
pub struct DeviceState<F: Real = f64> {
    pub id: usize,
    dim: usize,
    data: Vec<F>,
    occupant: Vec<Option<usize>>,
    grad: Vec<F>,
    grad_occupant: Vec<Option<usize>>,
    counters: BTreeMap<Phase, TransferCounters>,
    peak_slots: usize,
    peak_dim: usize,
}

impl<F: Real> DeviceState<F> {
    fn new(id: usize, capacity: usize) -> Self {
        Self {
            id,
            dim: 0,
            data: Vec::new(),
            occupant: vec![None; capacity],
            grad: Vec::new(),
            grad_occupant: vec![None; capacity],
            counters: BTreeMap::new(),
            peak_slots: 0,
            peak_dim: 0,
        }
    }

    fn capacity(&self) -> usize {
        self.occupant.len()
    }

    fn reset(&mut self, dim: usize) {
        let cap = self.capacity();
        self.dim = dim;
        self.data = vec![F::zero(); cap * dim];
        self.grad = vec![F::zero(); cap * dim];
        self.occupant.iter_mut().for_each(|o| *o = None);
        self.grad_occupant.iter_mut().for_each(|o| *o = None);
        self.peak_dim = self.peak_dim.max(dim);
    }

    fn slot(&self, s: usize) -> &[F] {
        &self.data[s * self.dim..(s + 1) * self.dim]
    }

    fn slot_mut(&mut self, s: usize) -> &mut [F] {
        &mut self.data[s * self.dim..(s + 1) * self.dim]
    }

    fn grad_slot_mut(&mut self, s: usize) -> &mut [F] {
        &mut self.grad[s * self.dim..(s + 1) * self.dim]
    }

    fn meter(&mut self, phase: Phase, class: Class, rows: usize) {
        let row_bytes = self.dim * F::BYTES;
        self.counters.entry(phase).or_default().add(class, rows, row_bytes);
    }

    fn meter_dim(&mut self, phase: Phase, class: Class, rows: usize, dim: usize) {
        self.counters.entry(phase).or_default().add(class, rows, dim * F::BYTES);
    }

    fn update_watermark(&mut self) {
        let top = self.occupant.iter().rposition(Option::is_some).map_or(0, |s| s + 1);
        self.peak_slots = self.peak_slots.max(top);
    }

    pub fn counters(&self) -> TransferCounters {
        let mut t = TransferCounters::default();
        self.counters.values().for_each(|c| t.merge(c));
        t
    }

    pub fn peak_slots(&self) -> usize {
        self.peak_slots
    }
}

/// Recomputation checkpoint handed back to the devices in the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint<F: Real = f64> {
    /// Cached neighbor aggregates of the chunk's destinations.
    Aggregates(Vec<DenseMatrix<F>>),
    /// Reloaded layer inputs for full recomputation.
    Inputs {
        neighbors: Vec<DenseMatrix<F>>,
        destinations: Vec<DenseMatrix<F>>,
    },
}

/// Which checkpoint a layer keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Aggregate,
    LayerInput,
}

pub struct Simulator<'a, F: Real = f64> {
    plan: &'a DedupPlan,
    layout: &'a BufferLayout,
    /// `vertices[i][j]`: destinations of the chunk device `i` runs at batch `j`.
    vertices: Vec<Vec<Vec<usize>>>,
    /// `chunk_ids[i][j]`: original chunk index of that chunk.
    chunk_ids: Vec<Vec<usize>>,
    mode: DedupMode,
    flush: GradFlush,
    exec: Exec,
    devices: Vec<DeviceState<F>>,
    gather_passes: BTreeMap<Phase, usize>,
}

impl<'a, F: Real> Simulator<'a, F> {
    pub fn new(
        plan: &'a DedupPlan,
        layout: &'a BufferLayout,
        vertices: Vec<Vec<Vec<usize>>>,
        chunk_ids: Vec<Vec<usize>>,
        mode: DedupMode,
        flush: GradFlush,
        exec: Exec,
    ) -> Result<Self> {
        let (m, n) = (plan.m(), plan.n());
        let shaped = |g: usize, row: &dyn Fn(usize) -> usize| g == m && (0..m).all(|i| row(i) == n);
        if layout.devices.len() != m
            || !shaped(vertices.len(), &|i| vertices[i].len())
            || !shaped(chunk_ids.len(), &|i| chunk_ids[i].len())
        {
            return Err(Error::Consistency(format!(
                "simulator inputs do not match the {m}x{n} plan"
            )));
        }
        let devices = (0..m)
            .map(|i| DeviceState::new(i, layout.devices[i].capacity))
            .collect();
        Ok(Self {
            plan,
            layout,
            vertices,
            chunk_ids,
            mode,
            flush,
            exec,
            devices,
            gather_passes: BTreeMap::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.plan.m()
    }

    pub fn n(&self) -> usize {
        self.plan.n()
    }

    pub fn mode(&self) -> DedupMode {
        self.mode
    }

    pub fn devices(&self) -> &[DeviceState<F>] {
        &self.devices
    }

    pub fn vertices(&self, i: usize, j: usize) -> &[usize] {
        &self.vertices[i][j]
    }

    /// Clears every device buffer and sizes it for rows of width `dim`.
    /// Call before the first batch of each layer pass.
    pub fn begin_layer(&mut self, dim: usize) {
        self.exec.for_each_mut(&mut self.devices, |_, d| d.reset(dim));
    }


    /// Deduplicated neighbor gather for batch `j`; returns each device's
    /// neighbor rows in ascending neighbor order.
    pub fn dedup_comm_fwd(&mut self, host: &DenseMatrix<F>, j: usize, phase: Phase) -> Result<Vec<DenseMatrix<F>>> {
        let (plan, layout, mode) = (self.plan, self.layout, self.mode);
        let dim = host.cols();
        if self.devices.iter().any(|d| d.dim != dim) {
            return Err(Error::Dimension(format!(
                "device buffers sized for {} columns, host rows have {dim}",
                self.devices[0].dim
            )));
        }
        *self.gather_passes.entry(phase).or_default() += usize::from(j == 0);

        // step 1: evict stale occupants, reuse carried rows, load from host
        let mut step1: Vec<Result<()>> = (0..self.m()).map(|_| Ok(())).collect();
        {
            let mut pairs: Vec<_> = self.devices.iter_mut().zip(step1.iter_mut()).collect();
            self.exec.for_each_mut(&mut pairs, |i, (dev, res)| {
                **res = load_phase(dev, plan, layout, mode, host, i, j, phase);
            });
        }
        step1.into_iter().collect::<Result<()>>()?;

        // step 2: device-to-device fetches, computed from a read-only view
        let devices = &self.devices;
        let mut fetched = self.exec.try_map_range(self.m(), |i| fetch_phase(devices, plan, layout, mode, i, j))?;
        let mut pairs: Vec<_> = self.devices.iter_mut().zip(fetched.iter_mut()).collect();
        self.exec.for_each_mut(&mut pairs, |_, (dev, f)| {
            for (slot, v, row) in f.rows.drain(..) {
                dev.slot_mut(slot).copy_from_slice(&row);
                dev.occupant[slot] = Some(v);
            }
            dev.meter(phase, Class::D2d, f.d2d);
            dev.meter(phase, Class::Resident, f.resident);
            dev.update_watermark();
        });

        let devices = &self.devices;
        self.exec.try_map_range(self.m(), |i| {
            let nbrs = &plan.neighbors[i][j];
            let dev = &devices[i];
            let mut view = DenseMatrix::zeros(nbrs.len(), dim);
            for (r, &v) in nbrs.iter().enumerate() {
                let s = layout.devices[i].slot_of(j, v).ok_or_else(|| {
                    Error::Consistency(format!("neighbor {v} has no slot on device {i}"))
                })?;
                if dev.occupant[s] != Some(v) {
                    return Err(Error::Consistency(format!(
                        "device {i} batch {j}: slot {s} holds {:?}, expected neighbor {v}",
                        dev.occupant[s]
                    )));
                }
                view.row_mut(r).copy_from_slice(dev.slot(s));
            }
            Ok(view)
        })
    }

    /// Loads rows of each device's destination vertices from `host`.
    pub fn load_destinations(&mut self, host: &DenseMatrix<F>, j: usize, phase: Phase) -> Vec<DenseMatrix<F>> {
        let dim = host.cols();
        let out: Vec<DenseMatrix<F>> = (0..self.m()).map(|i| host.gather_rows(&self.vertices[i][j])).collect();
        for (i, dev) in self.devices.iter_mut().enumerate() {
            dev.meter_dim(phase, Class::H2d, self.vertices[i][j].len(), dim);
        }
        out
    }

    /// Copies each device's destination rows to `host`, overwriting or
    /// adding depending on `accumulate`.
    pub fn store_destinations(
        &mut self,
        host: &mut DenseMatrix<F>,
        rows: &[DenseMatrix<F>],
        j: usize,
        phase: Phase,
        accumulate: bool,
    ) -> Result<()> {
        for (i, r) in rows.iter().enumerate() {
            let vs = &self.vertices[i][j];
            if r.rows() != vs.len() || r.cols() != host.cols() {
                return Err(Error::Dimension(format!(
                    "device {i} returned {:?} rows for {} destinations of width {}",
                    r.shape(),
                    vs.len(),
                    host.cols()
                )));
            }
            for (k, &v) in vs.iter().enumerate() {
                if accumulate {
                    for (o, &x) in host.row_mut(v).iter_mut().zip(r.row(k)) {
                        *o += x;
                    }
                } else {
                    host.row_mut(v).copy_from_slice(r.row(k));
                }
            }
            self.devices[i].meter_dim(phase, Class::D2h, vs.len(), host.cols());
        }
        Ok(())
    }

    pub fn store_checkpoint(&mut self, host: &mut HostStore<F>, layer: usize, j: usize, rows: Vec<DenseMatrix<F>>) {
        for (i, r) in rows.into_iter().enumerate() {
            self.devices[i].meter_dim(Phase::CheckpointStore, Class::D2h, r.rows(), r.cols());
            host.put_checkpoint(layer, i, self.chunk_ids[i][j], r);
        }
    }

    /// Reloads the recomputation checkpoint of `layer`, batch `j`. Layer-input
    /// checkpoints go through the deduplicated gather, so the caller must have
    /// called [`Simulator::begin_layer`] for this layer pass.
    pub fn load_recomp_chkpt(
        &mut self,
        host: &HostStore<F>,
        kind: CheckpointKind,
        layer: usize,
        j: usize,
    ) -> Result<Checkpoint<F>> {
        match kind {
            CheckpointKind::Aggregate => {
                let mut out = Vec::with_capacity(self.m());
                for i in 0..self.m() {
                    let c = host.checkpoint(layer, i, self.chunk_ids[i][j])?.clone();
                    self.devices[i].meter_dim(Phase::CheckpointLoad, Class::H2d, c.rows(), c.cols());
                    out.push(c);
                }
                Ok(Checkpoint::Aggregates(out))
            }
            CheckpointKind::LayerInput => {
                if !host.is_forwarded(layer) {
                    return Err(Error::MissingCheckpoint {
                        layer,
                        partition: 0,
                        chunk: self.chunk_ids[0][j],
                    });
                }
                let neighbors = self.dedup_comm_fwd(&host.h[layer], j, Phase::RecomputeGather)?;
                let destinations = self.load_destinations(&host.h[layer], j, Phase::RecomputeDestination);
                Ok(Checkpoint::Inputs {
                    neighbors,
                    destinations,
                })
            }
        }
    }

    /// Deduplicated backward accumulation of batch `j`'s neighbor gradients
    /// into `host_grad`.
    pub fn dedup_comm_bwd(&mut self, host_grad: &mut DenseMatrix<F>, views: &[DenseMatrix<F>], j: usize) -> Result<()> {
        let (plan, layout) = (self.plan, self.layout);
        let (m, n) = (self.m(), self.n());
        let dim = host_grad.cols();
        for (i, v) in views.iter().enumerate() {
            if v.shape() != (plan.neighbors[i][j].len(), dim) {
                return Err(Error::Dimension(format!(
                    "device {i} neighbor gradient is {:?}, expected ({}, {dim})",
                    v.shape(),
                    plan.neighbors[i][j].len()
                )));
            }
        }
        if views.len() != m {
            return Err(Error::Dimension(format!("{} gradient views for {m} devices", views.len())));
        }
        if self.devices.iter().any(|d| d.dim != dim) {
            return Err(Error::Dimension(format!(
                "device gradient buffers sized for {} columns, host gradient has {dim}",
                self.devices[0].dim
            )));
        }

        if self.mode == DedupMode::Baseline {
            for (i, view) in views.iter().enumerate() {
                for (r, &u) in plan.neighbors[i][j].iter().enumerate() {
                    for (o, &x) in host_grad.row_mut(u).iter_mut().zip(view.row(r)) {
                        *o += x;
                    }
                }
                self.devices[i].meter(Phase::GradScatter, Class::D2h, views[i].rows());
            }
            return Ok(());
        }

        let retain = self.mode == DedupMode::Full && self.flush == GradFlush::OnEviction;

        // step 1: every owner accumulates contributions, ascending source device
        let mut sent = vec![0usize; m];
        for (i, s) in sent.iter_mut().enumerate() {
            *s = (0..m)
                .filter(|&k| k != i)
                .map(|k| sets::intersection_len(&plan.neighbors[i][j], &plan.transition.owned[k][j]))
                .sum();
        }
        let mut results: Vec<Result<()>> = (0..m).map(|_| Ok(())).collect();
        {
            let mut pairs: Vec<_> = self.devices.iter_mut().zip(results.iter_mut()).collect();
            self.exec.for_each_mut(&mut pairs, |k, (dev, res)| {
                **res = accumulate_phase(dev, plan, layout, views, retain, k, j);
            });
        }
        results.into_iter().collect::<Result<()>>()?;
        for (i, s) in sent.into_iter().enumerate() {
            self.devices[i].meter(Phase::GradScatter, Class::D2d, s);
        }

        // step 2: flush to host in ascending device order, host-side addition
        for k in 0..m {
            let owned = &plan.transition.owned[k][j];
            let flush: Vec<usize> = if retain && j + 1 < n {
                sets::difference(owned, &plan.transition.owned[k][j + 1])
            } else {
                owned.clone()
            };
            let dev = &mut self.devices[k];
            for &v in &flush {
                let s = layout.devices[k].slot_of(j, v).expect("owned rows have slots");
                let row = &mut dev.grad[s * dim..(s + 1) * dim];
                for (o, x) in host_grad.row_mut(v).iter_mut().zip(row.iter_mut()) {
                    *o += *x;
                    *x = F::zero();
                }
                dev.grad_occupant[s] = None;
            }
            dev.meter(Phase::GradScatter, Class::D2h, flush.len());
            dev.meter(Phase::GradScatter, Class::Reuse, owned.len() - flush.len());
        }
        Ok(())
    }

    pub fn report(&self, costs: &CostParams) -> Result<TransferReport> {
        let devices: Vec<DeviceReport> = self
            .devices
            .iter()
            .map(|d| DeviceReport {
                device: d.id,
                totals: d.counters(),
                by_phase: d.counters.clone(),
                peak_slots: d.peak_slots,
                capacity: d.capacity(),
                peak_buffer_bytes: d.peak_slots * d.peak_dim * F::BYTES,
            })
            .collect();
        let mut totals = TransferCounters::default();
        devices.iter().for_each(|d| totals.merge(&d.totals));

        let volumes = self.plan.volumes();
        let passes: usize = self
            .gather_passes
            .iter()
            .filter(|(p, _)| p.is_gather())
            .map(|(_, c)| *c)
            .sum();
        let (mut h2d, mut d2d) = (0, 0);
        for d in &devices {
            for (p, c) in &d.by_phase {
                if p.is_gather() {
                    h2d += c.h2d_rows;
                    d2d += c.d2d_rows;
                }
            }
        }
        let predicted_gather_h2d = (passes * self.plan.predicted_host_rows(self.mode)) as u64;
        let predicted_gather_d2d = (passes * self.plan.predicted_fetch_rows(self.mode)) as u64;
        Ok(TransferReport {
            mode: self.mode,
            plan_check: PlanCheck {
                volumes,
                gather_passes: passes,
                predicted_gather_h2d,
                metered_gather_h2d: h2d,
                predicted_gather_d2d,
                metered_gather_d2d: d2d,
                consistent: predicted_gather_h2d == h2d && predicted_gather_d2d == d2d,
            },
            predicted_gather_cost: self.plan.cost(costs)?,
            modeled_time: totals.modeled_time(costs),
            devices,
            totals,
        })
    }
}

struct FetchResult<F> {
    rows: Vec<(usize, usize, Vec<F>)>,
    d2d: usize,
    resident: usize,
}

#[allow(clippy::too_many_arguments)]
fn load_phase<F: Real>(
    dev: &mut DeviceState<F>,
    plan: &DedupPlan,
    layout: &BufferLayout,
    mode: DedupMode,
    host: &DenseMatrix<F>,
    i: usize,
    j: usize,
    phase: Phase,
) -> Result<()> {
    let dl = &layout.devices[i];
    for s in 0..dev.capacity() {
        if let Some(v) = dev.occupant[s] {
            if dl.slot_of(j, v) != Some(s) {
                dev.occupant[s] = None;
            }
        }
    }
    let slot_of = |v: usize| {
        dl.slot_of(j, v)
            .ok_or_else(|| Error::Consistency(format!("vertex {v} has no slot on device {i} in batch {j}")))
    };
    let load_rows: &[usize] = match mode {
        DedupMode::Baseline => &plan.neighbors[i][j],
        DedupMode::P2p => &plan.transition.owned[i][j],
        DedupMode::Full => {
            for &v in &plan.split.reused[i][j] {
                let s = slot_of(v)?;
                if dev.occupant[s] != Some(v) {
                    return Err(Error::Consistency(format!(
                        "device {i} batch {j}: reused vertex {v} missing from slot {s}"
                    )));
                }
            }
            dev.meter(phase, Class::Reuse, plan.split.reused[i][j].len());
            &plan.split.loaded[i][j]
        }
    };
    for &v in load_rows {
        let s = slot_of(v)?;
        dev.slot_mut(s).copy_from_slice(host.row(v));
        dev.occupant[s] = Some(v);
    }
    dev.meter(phase, Class::H2d, load_rows.len());
    Ok(())
}

fn fetch_phase<F: Real>(
    devices: &[DeviceState<F>],
    plan: &DedupPlan,
    layout: &BufferLayout,
    mode: DedupMode,
    i: usize,
    j: usize,
) -> Result<FetchResult<F>> {
    let mut out = FetchResult {
        rows: Vec::new(),
        d2d: 0,
        resident: 0,
    };
    if mode == DedupMode::Baseline {
        return Ok(out);
    }
    let dl = &layout.devices[i];
    let dev = &devices[i];
    for (k, wanted) in &plan.remote[i][j] {
        let peer = &devices[*k];
        for &v in wanted {
            let s = dl.slot_of(j, v).ok_or_else(|| {
                Error::Consistency(format!("neighbor {v} has no slot on device {i}"))
            })?;
            if mode == DedupMode::Full && j > 0 && sets::contains(&plan.neighbors[i][j - 1], v) {
                if dev.occupant[s] != Some(v) {
                    return Err(Error::Consistency(format!(
                        "device {i} batch {j}: resident neighbor {v} missing from slot {s}"
                    )));
                }
                out.resident += 1;
                continue;
            }
            let ps = layout.devices[*k].slot_of(j, v).ok_or_else(|| {
                Error::Consistency(format!("vertex {v} not in device {k}'s transition rows"))
            })?;
            if peer.occupant[ps] != Some(v) {
                return Err(Error::Consistency(format!(
                    "device {k} batch {j}: transition vertex {v} not loaded before peer fetch"
                )));
            }
            out.rows.push((s, v, peer.slot(ps).to_vec()));
            out.d2d += 1;
        }
    }
    Ok(out)
}

fn accumulate_phase<F: Real>(
    dev: &mut DeviceState<F>,
    plan: &DedupPlan,
    layout: &BufferLayout,
    views: &[DenseMatrix<F>],
    retain: bool,
    k: usize,
    j: usize,
) -> Result<()> {
    let dl = &layout.devices[k];
    let owned = &plan.transition.owned[k][j];
    let mut slots = Vec::with_capacity(owned.len());
    for &v in owned {
        let s = dl.slot_of(j, v).ok_or_else(|| {
            Error::Consistency(format!("owned vertex {v} has no slot on device {k}"))
        })?;
        let carried = retain && j > 0 && sets::contains(&plan.split.reused[k][j], v);
        if carried {
            if dev.grad_occupant[s] != Some(v) {
                return Err(Error::Consistency(format!(
                    "device {k} batch {j}: retained gradient of {v} missing from slot {s}"
                )));
            }
        } else {
            if dev.grad_occupant[s].is_some() {
                return Err(Error::Consistency(format!(
                    "device {k} batch {j}: slot {s} still holds unflushed gradient of {:?}",
                    dev.grad_occupant[s]
                )));
            }
            dev.grad_slot_mut(s).iter_mut().for_each(|x| *x = F::zero());
            dev.grad_occupant[s] = Some(v);
        }
        slots.push(s);
    }
    for (i, view) in views.iter().enumerate() {
        let nbrs = &plan.neighbors[i][j];
        let contrib = if i == k {
            &plan.local[k][j]
        } else {
            match plan.remote[i][j].iter().find(|(p, _)| *p == k) {
                Some((_, s)) => s,
                None => continue,
            }
        };
        for &u in contrib {
            let r = nbrs.binary_search(&u).expect("contribution is a neighbor");
            let o = owned.binary_search(&u).expect("contribution is owned by k");
            let row = view.row(r);
            for (g, &x) in dev.grad_slot_mut(slots[o]).iter_mut().zip(row) {
                *g += x;
            }
        }
    }
    Ok(())
}
