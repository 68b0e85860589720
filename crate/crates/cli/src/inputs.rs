use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use fgsim_core::config::{GraphSource, RunConfig};
use fgsim_core::io::{read_features, read_labels};
use fgsim_core::matrix::DenseMatrix;
use fgsim_core::partition::{PartitionAssignment, PartitionDump, TwoLevelPartition, partition_vertices, split_chunks};
use fgsim_core::plan::PlanDump;
use fgsim_core::synth::{toy_dataset, toy_fixture};
use fgsim_core::{Graph, graph::load_edge_list};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Overrides, Toggle};

pub const PARTITION_FILE: &str = "partition.json";
pub const PLAN_FILE: &str = "plan.json";

pub fn load_config(args: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output = o.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    if let Some(r) = args.reorganize {
        cfg.reorganize = r == Toggle::On;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Graph, node inputs and (for the toy fixture) a fixed assignment.
pub struct Inputs {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    pub fixed_owner: Option<PartitionAssignment>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let dim = cfg.model.dims[0];
    match &cfg.graph {
        GraphSource::Toy => {
            let d = toy_dataset(dim, cfg.seed);
            Ok(Inputs {
                graph: d.graph,
                features: d.features,
                labels: d.labels,
                mask: d.train_mask,
                fixed_owner: Some(toy_fixture().1),
            })
        }
        GraphSource::Synthetic(spec) => {
            if spec.feature_dim != dim {
                bail!("synthetic feature_dim {} does not match model input dimension {dim}", spec.feature_dim);
            }
            let d = spec.generate(cfg.seed)?;
            Ok(Inputs {
                graph: d.graph,
                features: d.features,
                labels: d.labels,
                mask: d.train_mask,
                fixed_owner: None,
            })
        }
        GraphSource::EdgeList { path, features, labels } => {
            let graph = load_edge_list(path)?;
            let nv = graph.num_vertices();
            let features = match features {
                Some(p) => read_features(p)?,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    DenseMatrix::from_fn(nv, dim, |_, _| rng.random_range(-1.0..1.0))
                }
            };
            if features.shape() != (nv, dim) {
                bail!("features are {:?}, expected ({nv}, {dim})", features.shape());
            }
            let raw = match labels {
                Some(p) => read_labels(p)?,
                None => vec![None; nv],
            };
            if raw.len() != nv {
                bail!("{} labels for {nv} vertices", raw.len());
            }
            Ok(Inputs {
                graph,
                features,
                labels: raw.iter().map(|l| l.unwrap_or(0)).collect(),
                mask: raw.iter().map(Option::is_some).collect(),
                fixed_owner: None,
            })
        }
    }
}

pub fn compute_partition(cfg: &RunConfig, inputs: &Inputs) -> Result<TwoLevelPartition> {
    let a = match &inputs.fixed_owner {
        Some(a) => {
            if a.m() != cfg.m {
                bail!("the toy fixture has a fixed {}-way assignment, config asks for m={}", a.m(), cfg.m);
            }
            a.clone()
        }
        None => partition_vertices(&inputs.graph, cfg.m, cfg.epsilon, cfg.seed)?,
    };
    Ok(split_chunks(&inputs.graph, &a, cfg.n, cfg.exec)?)
}

pub fn run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output).with_context(|| format!("cannot create {}", cfg.output.display()))?;
    Ok(cfg.output.clone())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

/// Restores `partition.json` from the run directory, checking it against
/// the graph and the configured grid.
pub fn read_partition(dir: &Path, cfg: &RunConfig, g: &Graph) -> Result<Option<TwoLevelPartition>> {
    let path = dir.join(PARTITION_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let dump: PartitionDump = read_json(&path)?;
    let p = dump.restore(g)?;
    if (dump.m, dump.n, dump.seed) != (cfg.m, cfg.n, cfg.seed) {
        bail!(
            "{} is stale: built for m={} n={} seed={}, config has m={} n={} seed={}; re-run `partition`",
            path.display(),
            dump.m,
            dump.n,
            dump.seed,
            cfg.m,
            cfg.n,
            cfg.seed
        );
    }
    Ok(Some(p))
}

pub fn read_plan(dir: &Path, g: &Graph) -> Result<Option<PlanDump>> {
    let path = dir.join(PLAN_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let dump: PlanDump = read_json(&path)?;
    dump.check_fresh(g)?;
    Ok(Some(dump))
}
