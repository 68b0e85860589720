use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result, bail};
use fgsim_core::config::{GraphSource, Precision, RunConfig};
use fgsim_core::engine::{
    CheckpointPolicy, EpochReport, Model, ModelKind, TrainData, TrainOptions, Trainer, grad_relative_error, reference,
};
use fgsim_core::matrix::Real;
use fgsim_core::partition::{PartitionDump, TwoLevelPartition};
use fgsim_core::plan::{PlanDump, Schedule, Volumes};
use fgsim_core::sim::{TransferCounters, TransferReport};
use serde::{Deserialize, Serialize};

use crate::inputs::{
    Inputs, PARTITION_FILE, PLAN_FILE, compute_partition, load_config, load_inputs, read_partition, read_plan, run_dir,
    write_json,
};
use crate::{Overrides, VerificationFailed};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRANSFERS_FILE: &str = "transfers.csv";

pub fn partition(args: &Overrides) -> Result<()> {
    let cfg = load_config(args)?;
    let inputs = load_inputs(&cfg)?;
    let p = compute_partition(&cfg, &inputs)?;
    let dump = PartitionDump::new(&inputs.graph, &p, cfg.seed, cfg.epsilon)?;
    let dir = run_dir(&cfg)?;
    write_json(&dir.join(PARTITION_FILE), &dump)?;
    println!(
        "partition: m={} n={} edge_cut={} replication_factor={:.6}",
        dump.m, dump.n, dump.edge_cut, dump.replication_factor
    );
    Ok(())
}

fn build_plan(cfg: &RunConfig, inputs: &Inputs, p: &TwoLevelPartition) -> Result<PlanDump> {
    Ok(PlanDump::build(&inputs.graph, p, cfg.seed, &cfg.cost, cfg.phase2, cfg.exec)?)
}

pub fn plan(args: &Overrides) -> Result<()> {
    let cfg = load_config(args)?;
    let inputs = load_inputs(&cfg)?;
    let dir = run_dir(&cfg)?;
    let Some(p) = read_partition(&dir, &cfg, &inputs.graph)? else {
        bail!("{} not found; run `fgsim partition` first", dir.join(PARTITION_FILE).display());
    };
    let dump = build_plan(&cfg, &inputs, &p)?;
    write_json(&dir.join(PLAN_FILE), &dump)?;
    for (name, v) in [("identity", &dump.identity), ("reorganized", &dump.reorganized)] {
        let vol = v.volumes;
        println!(
            "{name:<12} V_ori={} V_p2p={} V_ru={} ori-p2p={} cost={:.6}",
            vol.original,
            vol.after_p2p,
            vol.after_reuse,
            vol.original - vol.after_p2p,
            v.cost
        );
    }
    println!(
        "chosen={} reorganized_reuse_leq_identity={}",
        dump.chosen, dump.reorganized_reuse_leq_identity
    );
    if dump.equal_throughputs {
        let t = dump.cost_params.host_device;
        for (name, v) in [("identity", &dump.identity), ("reorganized", &dump.reorganized)] {
            let expect = v.volumes.original as f64 / t;
            let rel = (v.cost - expect).abs() / expect.abs().max(f64::MIN_POSITIVE);
            println!("telescoping {name}: cost={:.12} V_ori/T={expect:.12} rel={rel:.3e}", v.cost);
        }
    }
    Ok(())
}

/// One line of `train_log.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub grad_norm: f64,
    pub h2d_rows: u64,
    pub d2h_rows: u64,
    pub d2d_rows: u64,
    pub reuse_rows: u64,
    pub resident_rows: u64,
    pub modeled_time: f64,
    pub peak_live_activations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_loss: Option<f64>,
}

impl LogLine {
    fn new(r: &EpochReport, reference_loss: Option<f64>) -> Self {
        let t = r.transfers.totals;
        Self {
            epoch: r.epoch,
            loss: r.loss,
            accuracy: r.accuracy,
            grad_norm: r.grad_norm,
            h2d_rows: t.h2d_rows,
            d2h_rows: t.d2h_rows,
            d2d_rows: t.d2d_rows,
            reuse_rows: t.reuse_rows,
            resident_rows: t.resident_rows,
            modeled_time: r.transfers.modeled_time,
            peak_live_activations: r.peak_live_activations,
            reference_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub passed: bool,
    pub tolerance: f64,
    pub max_loss_rel: f64,
    pub param_rel: f64,
}

/// Final run record written to `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config: RunConfig,
    pub seed: u64,
    pub graph_hash: String,
    pub vertices: usize,
    pub edges: usize,
    pub ordering: String,
    pub schedule: Schedule,
    pub epochs: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub volumes: Volumes,
    pub predicted_cost: f64,
    /// Per-epoch transfer totals (every epoch moves the same rows).
    pub transfer_totals: TransferCounters,
    pub modeled_time_per_epoch: f64,
    pub peak_buffer_bytes: usize,
    pub plan_consistent: bool,
    pub verify: Option<Verification>,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn tolerance(kind: ModelKind, precision: Precision) -> f64 {
    match (precision, kind) {
        (Precision::F64, ModelKind::Gcn) => 1e-10,
        (Precision::F64, ModelKind::Gat) => 1e-8,
        (Precision::F32, _) => 1e-4,
    }
}

struct Outcome {
    reports: Vec<EpochReport>,
    reference_losses: Option<Vec<f64>>,
    param_rel: Option<f64>,
}

fn run_epochs<F: Real>(cfg: &RunConfig, inputs: &Inputs, trainer: &Trainer<'_>, verify: bool) -> Result<Outcome> {
    let m = &cfg.model;
    let mut model: Model<F> = Model::<f64>::init(m.kind, &m.dims, m.leaky_slope, cfg.seed)?.cast();
    let mut twin = verify.then(|| model.clone());
    let data = TrainData::<F> {
        features: inputs.features.cast(),
        labels: inputs.labels.clone(),
        mask: inputs.mask.clone(),
    };
    let lr = F::of_f64(m.lr);
    let mut reports = Vec::with_capacity(m.epochs);
    let mut ref_losses = Vec::new();
    for epoch in 0..m.epochs {
        reports.push(trainer.train_epoch(&mut model, &data, lr, epoch)?);
        if let Some(t) = twin.as_mut() {
            ref_losses.push(reference::train_epoch(&inputs.graph, t, &data, lr)?.as_f64());
        }
    }
    let param_rel = twin.as_ref().map(|t| grad_relative_error(&model.layers, &t.layers));
    Ok(Outcome {
        reports,
        reference_losses: verify.then_some(ref_losses),
        param_rel,
    })
}

fn peak_bytes(t: &TransferReport) -> usize {
    t.devices.iter().map(|d| d.peak_buffer_bytes).max().unwrap_or(0)
}

pub fn train(args: &Overrides, verify: bool) -> Result<()> {
    let cfg = load_config(args)?;
    if cfg.model.epochs == 0 {
        bail!("model.epochs must be at least 1");
    }
    let inputs = load_inputs(&cfg)?;
    if !inputs.mask.iter().any(|&b| b) {
        eprintln!("warning: no labelled training vertices; loss and gradients will be zero");
    }
    if let Some(&bad) = inputs.labels.iter().find(|&&l| l >= *cfg.model.dims.last().unwrap()) {
        bail!("label {bad} does not fit the output dimension {}", cfg.model.dims.last().unwrap());
    }
    let dir = run_dir(&cfg)?;

    let p = match read_partition(&dir, &cfg, &inputs.graph)? {
        Some(p) => p,
        None => {
            let p = compute_partition(&cfg, &inputs)?;
            write_json(&dir.join(PARTITION_FILE), &PartitionDump::new(&inputs.graph, &p, cfg.seed, cfg.epsilon)?)?;
            p
        }
    };
    let plan = match read_plan(&dir, &inputs.graph)? {
        Some(d) if (d.m, d.n, d.seed, d.cost_params) == (cfg.m, cfg.n, cfg.seed, cfg.cost) => d,
        Some(_) => bail!(
            "{} is stale: built for a different grid, seed or cost model; re-run `plan`",
            dir.join(PLAN_FILE).display()
        ),
        None => {
            let d = build_plan(&cfg, &inputs, &p)?;
            write_json(&dir.join(PLAN_FILE), &d)?;
            d
        }
    };
    let (ordering, variant) = if cfg.reorganize {
        let v = if plan.chosen == "reorganized" { &plan.reorganized } else { &plan.identity };
        (plan.chosen.clone(), v)
    } else {
        ("identity".to_string(), &plan.identity)
    };

    let options = TrainOptions {
        mode: cfg.mode,
        flush: cfg.grad_flush,
        exec: cfg.exec,
        costs: cfg.cost,
        policy: CheckpointPolicy::Hybrid,
    };
    let trainer = Trainer::new(&p, variant.schedule.clone(), options)?;
    let out = match cfg.precision {
        Precision::F64 => run_epochs::<f64>(&cfg, &inputs, &trainer, verify)?,
        Precision::F32 => run_epochs::<f32>(&cfg, &inputs, &trainer, verify)?,
    };

    let mut log = String::new();
    for (k, r) in out.reports.iter().enumerate() {
        let line = LogLine::new(r, out.reference_losses.as_ref().map(|l| l[k]));
        writeln!(log, "{}", serde_json::to_string(&line)?)?;
    }
    fs::write(dir.join(LOG_FILE), log).with_context(|| format!("cannot write {}", dir.join(LOG_FILE).display()))?;

    let last = out.reports.last().expect("at least one epoch");
    let transfers = &last.transfers;
    fs::write(dir.join(TRANSFERS_FILE), transfers.to_csv())?;

    let verification = out.reference_losses.as_ref().map(|refs| {
        let tol = tolerance(cfg.model.kind, cfg.precision);
        let max_loss_rel = out.reports.iter().zip(refs).map(|(r, &l)| rel(r.loss, l)).fold(0.0, f64::max);
        let param_rel = out.param_rel.unwrap_or(0.0);
        Verification {
            passed: max_loss_rel <= tol && param_rel <= tol,
            tolerance: tol,
            max_loss_rel,
            param_rel,
        }
    });

    let summary = Summary {
        config: cfg.clone(),
        seed: cfg.seed,
        graph_hash: inputs.graph.content_hash(),
        vertices: inputs.graph.num_vertices(),
        edges: inputs.graph.num_edges(),
        ordering,
        schedule: variant.schedule.clone(),
        epochs: out.reports.len(),
        final_loss: last.loss,
        final_accuracy: last.accuracy,
        volumes: variant.volumes,
        predicted_cost: variant.cost,
        transfer_totals: transfers.totals,
        modeled_time_per_epoch: transfers.modeled_time,
        peak_buffer_bytes: peak_bytes(transfers),
        plan_consistent: transfers.plan_check.consistent,
        verify: verification.clone(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;

    let t = transfers.totals;
    println!(
        "train: {} epochs, final loss {:.6}, h2d {} d2h {} d2d {} reuse {} rows per epoch",
        summary.epochs, summary.final_loss, t.h2d_rows, t.d2h_rows, t.d2d_rows, t.reuse_rows
    );
    if let Some(v) = verification {
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!(
            "verify: {status} max_loss_rel={:.3e} param_rel={:.3e} tolerance={:.0e}",
            v.max_loss_rel, v.param_rel, v.tolerance
        );
        if !v.passed {
            return Err(VerificationFailed(format!(
                "loss rel {:.3e}, params rel {:.3e} exceed {:.0e}",
                v.max_loss_rel, v.param_rel, v.tolerance
            ))
            .into());
        }
    }
    Ok(())
}

/// Used by `report` for rows that lack a config-level graph description.
pub fn graph_label(src: &GraphSource) -> String {
    match src {
        GraphSource::Toy => "toy".into(),
        GraphSource::Synthetic(s) => format!("synthetic({})", s.vertices),
        GraphSource::EdgeList { path, .. } => Path::new(path)
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
    }
}
