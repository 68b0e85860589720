use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use fgsim_core::plan::DedupMode;

use crate::Overrides;
use crate::commands::{LOG_FILE, SUMMARY_FILE, Summary, TRANSFERS_FILE, graph_label};
use crate::inputs::{PARTITION_FILE, PLAN_FILE};

pub const REPORT_FILE: &str = "report.csv";
const EXPECTED: [&str; 5] = [PARTITION_FILE, PLAN_FILE, LOG_FILE, SUMMARY_FILE, TRANSFERS_FILE];

const COLUMNS: [&str; 16] = [
    "run",
    "graph",
    "mode",
    "ordering",
    "v_ori",
    "v_p2p",
    "v_ru",
    "predicted_cost",
    "h2d_rows",
    "d2h_rows",
    "d2d_rows",
    "reuse_rows",
    "modeled_time",
    "peak_buffer_bytes",
    "final_loss",
    "verify",
];

fn missing(dir: &Path) -> Vec<&'static str> {
    EXPECTED.iter().copied().filter(|f| !dir.join(f).is_file()).collect()
}

/// Run directories under `root`: `root` itself if it holds a summary,
/// otherwise its immediate subdirectories that hold any run artifact.
fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if EXPECTED.iter().any(|f| root.join(f).is_file()) {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("cannot read {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() && EXPECTED.iter().any(|f| path.join(f).is_file()) {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn mode_rank(m: DedupMode) -> usize {
    DedupMode::ALL.iter().position(|&x| x == m).unwrap_or(usize::MAX)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report(dir: Option<PathBuf>, args: &Overrides) -> Result<()> {
    let root = match (dir, &args.out) {
        (Some(d), _) => d,
        (None, Some(o)) => o.clone(),
        (None, None) => crate::inputs::load_config(args)?.output,
    };
    if !root.is_dir() {
        bail!("run directory {} does not exist", root.display());
    }
    let dirs = run_dirs(&root)?;
    if dirs.is_empty() {
        bail!("no run artifacts in {}; expected {}", root.display(), EXPECTED.join(", "));
    }
    let mut incomplete = Vec::new();
    for d in &dirs {
        let gone = missing(d);
        if !gone.is_empty() {
            incomplete.push(format!("{}: missing {}", d.display(), gone.join(", ")));
        }
    }
    if !incomplete.is_empty() {
        bail!("incomplete runs:\n  {}", incomplete.join("\n  "));
    }

    let mut runs = Vec::new();
    for d in &dirs {
        let path = d.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let s: Summary = serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))?;
        let name = if d == &root {
            d.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| ".".into())
        } else {
            d.strip_prefix(&root).unwrap_or(d).display().to_string()
        };
        runs.push((name, s));
    }
    runs.sort_by(|a, b| mode_rank(a.1.config.mode).cmp(&mode_rank(b.1.config.mode)).then_with(|| a.0.cmp(&b.0)));

    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|(name, s)| {
            let t = s.transfer_totals;
            let v = s.volumes;
            vec![
                name.clone(),
                graph_label(&s.config.graph),
                s.config.mode.as_str().to_string(),
                s.ordering.clone(),
                v.original.to_string(),
                v.after_p2p.to_string(),
                v.after_reuse.to_string(),
                format!("{:.6}", s.predicted_cost),
                t.h2d_rows.to_string(),
                t.d2h_rows.to_string(),
                t.d2d_rows.to_string(),
                t.reuse_rows.to_string(),
                format!("{:.6}", s.modeled_time_per_epoch),
                s.peak_buffer_bytes.to_string(),
                format!("{:.8}", s.final_loss),
                match &s.verify {
                    None => "-".into(),
                    Some(v) if v.passed => "pass".into(),
                    Some(_) => "fail".into(),
                },
            ]
        })
        .collect();

    let mut csv = COLUMNS.join(",");
    csv.push('\n');
    for r in &rows {
        let fields: Vec<String> = r.iter().map(|f| csv_field(f)).collect();
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    let out = root.join(REPORT_FILE);
    fs::write(&out, &csv).with_context(|| format!("cannot write {}", out.display()))?;

    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap_or(0))
        .collect();
    let mut table = String::new();
    let line = |cells: &[&str], table: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(table, "{}", padded.join("  ").trim_end());
    };
    line(&COLUMNS, &mut table);
    for r in &rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        line(&cells, &mut table);
    }
    print!("{table}");
    Ok(())
}
