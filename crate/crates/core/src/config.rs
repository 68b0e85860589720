//! Run configuration shared by the CLI commands.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::engine::ModelKind;
use crate::sim::GradFlush;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::plan::{CostParams, DedupMode, Phase2Mode};
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    /// Edge list on disk with optional feature/label files.
    EdgeList {
        path: PathBuf,
        #[serde(default)]
        features: Option<PathBuf>,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
    /// Built-in 8-vertex fixture with a fixed 4-way assignment.
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub dims: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub leaky_slope: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Gcn,
            dims: vec![16, 8, 4],
            lr: 0.5,
            epochs: 5,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub graph: GraphSource,
    pub m: usize,
    pub n: usize,
    pub epsilon: f64,
    pub model: ModelSection,
    pub seed: u64,
    pub cost: CostParams,
    pub mode: DedupMode,
    pub reorganize: bool,
    pub phase2: Phase2Mode,
    pub grad_flush: GradFlush,
    pub precision: Precision,
    pub exec: Exec,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::Synthetic(SyntheticSpec::default()),
            m: 4,
            n: 4,
            epsilon: 0.05,
            model: ModelSection::default(),
            seed: 0,
            cost: CostParams::default(),
            mode: DedupMode::Full,
            reorganize: true,
            phase2: Phase2Mode::WholeBatch,
            grad_flush: GradFlush::OnEviction,
            precision: Precision::F64,
            exec: Exec::Parallel,
            output: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config(format!(
                "m and n must be at least 1 (got m={}, n={})",
                self.m, self.n
            )));
        }
        if self.model.dims.len() < 2 {
            return Err(Error::Config(
                "model.dims needs at least an input and an output dimension".into(),
            ));
        }
        if self.model.dims.contains(&0) {
            return Err(Error::Config("model.dims entries must be positive".into()));
        }
        if !(self.model.lr >= 0.0) {
            return Err(Error::Config("model.lr must be non-negative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        self.cost.validate()?;
        if let GraphSource::EdgeList { path, features, labels } = &self.graph {
            for p in std::iter::once(path).chain(features).chain(labels) {
                if !p.exists() {
                    return Err(Error::Config(format!("input file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}
