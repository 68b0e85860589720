//! Chunk-pipelined training over the simulated devices.
//!
//! Each layer runs batch by batch: the simulator gathers neighbor rows into
//! device buffers, every device computes its chunk, and results go back to
//! host memory. The backward pass walks layers in reverse and batches in
//! schedule order so retained gradient rows are flushed exactly once.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::par::Exec;
use crate::partition::{ChunkSubgraph, TwoLevelPartition, neighbor_sets};
use crate::plan::{BufferLayout, CostParams, DedupMode, DedupPlan, Schedule, build_buffer_layout};
use crate::sim::{Checkpoint, CheckpointKind, GradFlush, HostStore, Phase, Simulator, TransferReport};
use crate::synth::Dataset;

use super::gat::{self, GatIntermediates};
use super::gcn::{self, GcnIntermediates};
use super::loss::softmax_cross_entropy;
use super::{ActivationTracker, Gradients, LayerParams, Model, ModelKind};

/// What the forward pass keeps for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// GCN keeps aggregates on the host; GAT recomputes from layer inputs.
    #[default]
    Hybrid,
    /// Every intermediate stays in memory; nothing is recomputed.
    StoreAll,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub mode: DedupMode,
    pub flush: GradFlush,
    pub exec: Exec,
    pub costs: CostParams,
    pub policy: CheckpointPolicy,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            mode: DedupMode::Full,
            flush: GradFlush::OnEviction,
            exec: Exec::Parallel,
            costs: CostParams::default(),
            policy: CheckpointPolicy::Hybrid,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainData<F: Real = f64> {
    pub features: DenseMatrix<F>,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

impl<F: Real> TrainData<F> {
    pub fn from_dataset(d: &Dataset) -> Self {
        Self {
            features: d.features.cast(),
            labels: d.labels.clone(),
            mask: d.train_mask.clone(),
        }
    }
}

/// One forward and backward sweep without a parameter update.
#[derive(Debug, Clone)]
pub struct Pass<F: Real = f64> {
    pub loss: F,
    pub correct: usize,
    pub counted: usize,
    pub grads: Gradients<F>,
    pub logits: DenseMatrix<F>,
    pub transfers: TransferReport,
    pub peak_live_activations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub grad_norm: f64,
    pub peak_live_activations: usize,
    pub transfers: TransferReport,
}

enum Stored<F: Real> {
    Gcn(GcnIntermediates<F>),
    Gat {
        inter: GatIntermediates<F>,
        h_n: DenseMatrix<F>,
        h_v: DenseMatrix<F>,
    },
}

pub struct Trainer<'g> {
    partition: &'g TwoLevelPartition,
    schedule: Schedule,
    plan: DedupPlan,
    layout: BufferLayout,
    options: TrainOptions,
}

impl<'g> Trainer<'g> {
    pub fn new(partition: &'g TwoLevelPartition, schedule: Schedule, options: TrainOptions) -> Result<Self> {
        if schedule.m() != partition.m() || schedule.n() != partition.n() || !schedule.is_valid() {
            return Err(Error::Consistency(format!(
                "schedule of shape {}x{} is not a valid permutation grid for {}x{} chunks",
                schedule.m(),
                schedule.n(),
                partition.m(),
                partition.n()
            )));
        }
        let nbrs = schedule.apply(&neighbor_sets(partition));
        let plan = DedupPlan::build(nbrs, partition.assignment(), options.exec)?;
        let layout = build_buffer_layout(&plan);
        Ok(Self {
            partition,
            schedule,
            plan,
            layout,
            options,
        })
    }

    pub fn plan(&self) -> &DedupPlan {
        &self.plan
    }

    pub fn layout(&self) -> &BufferLayout {
        &self.layout
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn options(&self) -> &TrainOptions {
        &self.options
    }

    /// Chunk device `i` runs at batch `j`.
    pub fn chunk(&self, i: usize, j: usize) -> &ChunkSubgraph {
        self.partition.chunk(i, self.schedule.order[i][j])
    }

    pub fn simulator<F: Real>(&self) -> Result<Simulator<'_, F>> {
        let (m, n) = (self.partition.m(), self.partition.n());
        let vertices = (0..m)
            .map(|i| (0..n).map(|j| self.chunk(i, j).vertices.clone()).collect())
            .collect();
        Simulator::new(
            &self.plan,
            &self.layout,
            vertices,
            self.schedule.order.clone(),
            self.options.mode,
            self.options.flush,
            self.options.exec,
        )
    }

    fn check_inputs<F: Real>(&self, model: &Model<F>, data: &TrainData<F>) -> Result<()> {
        let nv = self.partition.assignment().num_vertices();
        if data.features.rows() != nv || data.labels.len() != nv || data.mask.len() != nv {
            return Err(Error::Dimension(format!(
                "training data covers {} feature rows, {} labels, {} mask entries; graph has {nv} vertices",
                data.features.rows(),
                data.labels.len(),
                data.mask.len()
            )));
        }
        if data.features.cols() != model.dims[0] {
            return Err(Error::Dimension(format!(
                "features have {} columns, model input is {}",
                data.features.cols(),
                model.dims[0]
            )));
        }
        Ok(())
    }

    fn forward<F: Real>(
        &self,
        model: &Model<F>,
        sim: &mut Simulator<'_, F>,
        host: &mut HostStore<F>,
        tracker: &ActivationTracker,
        mut keep: Option<&mut HashMap<(usize, usize, usize), Stored<F>>>,
    ) -> Result<()> {
        let (m, n) = (self.partition.m(), self.partition.n());
        let exec = self.options.exec;
        for (l, params) in model.layers.iter().enumerate() {
            sim.begin_layer(model.dims[l]);
            for j in 0..n {
                let views = sim.dedup_comm_fwd(&host.h[l], j, Phase::ForwardGather)?;
                let dst = match model.kind {
                    ModelKind::Gat => Some(sim.load_destinations(&host.h[l], j, Phase::ForwardDestination)),
                    ModelKind::Gcn => None,
                };
                let outs = exec.try_map_range(m, |i| {
                    tracker.acquire();
                    let adj = &self.chunk(i, j).adjacency;
                    let r = match &dst {
                        None => gcn::forward(adj, &views[i], &params.w).map(|(inter, h)| (h, Stored::Gcn(inter))),
                        Some(dst) => gat::forward(adj, &views[i], &dst[i], params, model.leaky_slope).map(|(inter, h)| {
                            let s = Stored::Gat {
                                inter,
                                h_n: views[i].clone(),
                                h_v: dst[i].clone(),
                            };
                            (h, s)
                        }),
                    };
                    tracker.release();
                    r
                })?;
                let (hs, stored): (Vec<_>, Vec<_>) = outs.into_iter().unzip();
                let mut next = std::mem::replace(&mut host.h[l + 1], DenseMatrix::zeros(0, 0));
                sim.store_destinations(&mut next, &hs, j, Phase::ForwardWriteback, false)?;
                host.h[l + 1] = next;
                match keep.as_deref_mut() {
                    Some(map) => {
                        for (i, s) in stored.into_iter().enumerate() {
                            map.insert((l, i, j), s);
                        }
                    }
                    None if model.kind == ModelKind::Gcn => {
                        let aggs = stored
                            .into_iter()
                            .map(|s| match s {
                                Stored::Gcn(inter) => inter.a,
                                Stored::Gat { .. } => unreachable!("GCN layer"),
                            })
                            .collect();
                        sim.store_checkpoint(host, l, j, aggs);
                    }
                    None => {}
                }
            }
            host.mark_forwarded(l);
        }
        Ok(())
    }

    /// Forward pass only; returns the loss.
    pub fn loss<F: Real>(&self, model: &Model<F>, data: &TrainData<F>) -> Result<F> {
        self.check_inputs(model, data)?;
        let mut sim = self.simulator::<F>()?;
        let mut host = HostStore::new(data.features.clone(), &model.dims)?;
        let tracker = ActivationTracker::default();
        let mut keep = HashMap::new();
        self.forward(model, &mut sim, &mut host, &tracker, Some(&mut keep))?;
        Ok(softmax_cross_entropy(&host.h[model.num_layers()], &data.labels, &data.mask)?.loss)
    }

    pub fn forward_backward<F: Real>(&self, model: &Model<F>, data: &TrainData<F>) -> Result<Pass<F>> {
        self.check_inputs(model, data)?;
        let (m, n) = (self.partition.m(), self.partition.n());
        let exec = self.options.exec;
        let store_all = self.options.policy == CheckpointPolicy::StoreAll;
        let mut sim = self.simulator::<F>()?;
        let mut host = HostStore::new(data.features.clone(), &model.dims)?;
        let tracker = ActivationTracker::default();
        let mut kept = HashMap::new();
        self.forward(model, &mut sim, &mut host, &tracker, store_all.then_some(&mut kept))?;

        let big_l = model.num_layers();
        let loss = softmax_cross_entropy(&host.h[big_l], &data.labels, &data.mask)?;
        host.grad[big_l] = loss.grad.clone();

        let mut dev_grads: Vec<Gradients<F>> = (0..m).map(|_| model.zero_grads()).collect();
        for l in (0..big_l).rev() {
            let params = &model.layers[l];
            sim.begin_layer(model.dims[l]);
            for j in 0..n {
                let gout = sim.load_destinations(&host.grad[l + 1], j, Phase::GradLoad);
                let chk = if store_all {
                    None
                } else {
                    let kind = match model.kind {
                        ModelKind::Gcn => CheckpointKind::Aggregate,
                        ModelKind::Gat => CheckpointKind::LayerInput,
                    };
                    Some(sim.load_recomp_chkpt(&host, kind, l, j)?)
                };
                let results = exec.try_map_range(m, |i| {
                    tracker.acquire();
                    let r = self.chunk_backward(model, params, l, i, j, &gout[i], chk.as_ref(), &kept);
                    tracker.release();
                    r
                })?;
                let mut g_n = Vec::with_capacity(m);
                let mut g_v = Vec::with_capacity(m);
                for (i, (gp, gn, gv)) in results.into_iter().enumerate() {
                    dev_grads[i][l].add_assign(&gp)?;
                    g_n.push(gn);
                    g_v.extend(gv);
                }
                if l > 0 {
                    let mut grad = std::mem::replace(&mut host.grad[l], DenseMatrix::zeros(0, 0));
                    let r = sim.dedup_comm_bwd(&mut grad, &g_n, j).and_then(|()| {
                        if g_v.is_empty() {
                            Ok(())
                        } else {
                            sim.store_destinations(&mut grad, &g_v, j, Phase::DestinationGradFlush, true)
                        }
                    });
                    host.grad[l] = grad;
                    r?;
                }
            }
        }

        let mut grads = model.zero_grads();
        for g in &dev_grads {
            for (acc, x) in grads.iter_mut().zip(g) {
                acc.add_assign(x)?;
            }
        }
        Ok(Pass {
            loss: loss.loss,
            correct: loss.correct,
            counted: loss.counted,
            grads,
            logits: host.h[big_l].clone(),
            transfers: sim.report(&self.options.costs)?,
            peak_live_activations: tracker.peak(),
        })
    }

    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn chunk_backward<F: Real>(
        &self,
        model: &Model<F>,
        params: &LayerParams<F>,
        l: usize,
        i: usize,
        j: usize,
        gout: &DenseMatrix<F>,
        chk: Option<&Checkpoint<F>>,
        kept: &HashMap<(usize, usize, usize), Stored<F>>,
    ) -> Result<(LayerParams<F>, DenseMatrix<F>, Option<DenseMatrix<F>>)> {
        let adj = &self.chunk(i, j).adjacency;
        let missing = || Error::MissingCheckpoint {
            layer: l,
            partition: i,
            chunk: self.schedule.order[i][j],
        };
        match model.kind {
            ModelKind::Gcn => {
                let recomputed;
                let inter = match chk {
                    Some(Checkpoint::Aggregates(a)) => {
                        recomputed = gcn::recompute(a[i].clone(), &params.w)?;
                        &recomputed
                    }
                    Some(Checkpoint::Inputs { .. }) => return Err(missing()),
                    None => match kept.get(&(l, i, j)) {
                        Some(Stored::Gcn(inter)) => inter,
                        _ => return Err(missing()),
                    },
                };
                let (gw, gn) = gcn::backward(adj, inter, &params.w, gout)?;
                let mut gp = params.zeros_like();
                gp.w = gw;
                Ok((gp, gn, None))
            }
            ModelKind::Gat => {
                let recomputed;
                let (inter, h_n, h_v) = match chk {
                    Some(Checkpoint::Inputs {
                        neighbors,
                        destinations,
                    }) => {
                        recomputed = gat::forward(adj, &neighbors[i], &destinations[i], params, model.leaky_slope)?.0;
                        (&recomputed, &neighbors[i], &destinations[i])
                    }
                    Some(Checkpoint::Aggregates(_)) => return Err(missing()),
                    None => match kept.get(&(l, i, j)) {
                        Some(Stored::Gat { inter, h_n, h_v }) => (inter, h_n, h_v),
                        _ => return Err(missing()),
                    },
                };
                let g = gat::backward(adj, inter, h_n, h_v, params, model.leaky_slope, gout)?;
                Ok((g.params, g.h_n, Some(g.h_v)))
            }
        }
    }

    /// Forward, backward and one SGD step.
    pub fn train_epoch<F: Real>(
        &self,
        model: &mut Model<F>,
        data: &TrainData<F>,
        lr: F,
        epoch: usize,
    ) -> Result<EpochReport> {
        let pass = self.forward_backward(model, data)?;
        model.apply(&pass.grads, lr)?;
        let grad_norm = pass
            .grads
            .iter()
            .flat_map(|g| g.flat())
            .map(|x| x.as_f64().powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(EpochReport {
            epoch,
            loss: pass.loss.as_f64(),
            accuracy: if pass.counted == 0 {
                0.0
            } else {
                pass.correct as f64 / pass.counted as f64
            },
            grad_norm,
            peak_live_activations: pass.peak_live_activations,
            transfers: pass.transfers,
        })
    }
}
