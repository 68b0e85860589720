#![allow(dead_code)]

use fgsim_core::Graph;
use fgsim_core::engine::{CheckpointPolicy, GradFlush, Model, ModelKind, TrainData, TrainOptions, Trainer};
use fgsim_core::par::Exec;
use fgsim_core::partition::{TwoLevelPartition, neighbor_sets, partition_vertices, split_chunks};
use fgsim_core::plan::{DedupMode, Phase2Mode, Schedule, reorganize};
use fgsim_core::synth::{Dataset, SyntheticSpec};

pub fn dataset(vertices: usize, feature_dim: usize, classes: usize, seed: u64) -> Dataset {
    SyntheticSpec {
        feature_dim,
        classes,
        ..SyntheticSpec::with_vertices(vertices)
    }
    .generate(seed)
    .unwrap()
}

pub fn two_level(g: &Graph, m: usize, n: usize, seed: u64) -> TwoLevelPartition {
    let a = partition_vertices(g, m, 0.05, seed).unwrap();
    split_chunks(g, &a, n, Exec::Parallel).unwrap()
}

pub fn reorganized(p: &TwoLevelPartition) -> Schedule {
    reorganize(&neighbor_sets(p), Phase2Mode::WholeBatch).schedule
}

pub fn options(mode: DedupMode, flush: GradFlush, policy: CheckpointPolicy) -> TrainOptions {
    TrainOptions {
        mode,
        flush,
        policy,
        ..TrainOptions::default()
    }
}

pub fn trainer<'p>(p: &'p TwoLevelPartition, schedule: Schedule, mode: DedupMode) -> Trainer<'p> {
    Trainer::new(p, schedule, options(mode, GradFlush::OnEviction, CheckpointPolicy::Hybrid)).unwrap()
}

pub fn model(kind: ModelKind, dims: &[usize], seed: u64) -> Model<f64> {
    Model::init(kind, dims, 0.2, seed).unwrap()
}

pub fn data(d: &Dataset) -> TrainData<f64> {
    TrainData::from_dataset(d)
}
