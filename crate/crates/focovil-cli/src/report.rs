//! Rendering and serialization of evaluation artifacts: metrics reports,
//! embedding exports, epoch logs, and the ablation table.

use std::io::Write;
use std::path::Path;

use focovil_core::evaluation::{EmbeddingSet, MetricsReport};
use focovil_core::training::{Ablation, AblationRow, AblationSummary, EpochStats};
use serde::Serialize;

use crate::errors::{CliError, CliResult};

/// Pretty JSON plus trailing newline, for diffable artifacts.
fn to_json_pretty<T: Serialize>(value: &T, path: &Path) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Io(format!("{}: cannot serialize: {e}", path.display())))
}

pub fn write_metrics_report(path: &Path, report: &MetricsReport) -> CliResult<()> {
    let body = to_json_pretty(report, path)?;
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

/// Human-readable summary of a metrics report.
pub fn render_metrics(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "train rows {}  test rows {}  classes {}\n",
        report.n_train, report.n_test, report.n_classes
    ));
    out.push_str(&format!("1-nn accuracy          {:.6}\n", report.one_nn_accuracy));
    out.push_str(&format!(
        "linear probe accuracy  {:.6}\n",
        report.linear_probe_accuracy
    ));
    out.push_str(&format!(
        "k-means   purity {:.6}  ari {:.6}\n",
        report.kmeans_purity, report.kmeans_ari
    ));
    out.push_str(&format!(
        "gmm       purity {:.6}  ari {:.6}\n",
        report.gmm_purity, report.gmm_ari
    ));
    out.push_str("confusion matrix (rows = true class, cols = 1-nn prediction):\n");
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        out.push_str(&format!("  {}\n", cells.join(" ")));
    }
    out
}

/// Comma-separated embedding export: one row per sequence, identity
/// columns first, then the embedding coordinates in shortest
/// round-trip decimal form.
pub fn write_embeddings_csv(path: &Path, set: &EmbeddingSet) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |line: &str| -> CliResult<()> {
        writeln!(w, "{line}").map_err(|e| CliError::io(path, e))
    };
    let header: Vec<String> = ["scene_id", "view_id", "class_label"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..set.dim()).map(|i| format!("e{i}")))
        .collect();
    emit(&header.join(","))?;
    for r in 0..set.len() {
        let mut cells = vec![
            set.scene_ids()[r].to_string(),
            set.view_ids()[r].to_string(),
            set.labels()[r].to_string(),
        ];
        for c in 0..set.dim() {
            cells.push(format!("{}", set.matrix().at(r, c)));
        }
        emit(&cells.join(","))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One epoch log line: the epoch statistics as a JSON object.
pub fn epoch_log_line(stats: &EpochStats) -> String {
    serde_json::to_string(stats).expect("epoch stats serialize")
}

/// Monotone-trend verdict over the reconstruction-to-full chain of the
/// ablation table. Only the chain variants present in the summary
/// participate; the check needs at least two of them.
#[derive(Debug, Clone, Serialize)]
pub struct TrendCheck {
    /// Chain actually checked, weakest variant first.
    pub chain: Vec<Ablation>,
    pub applicable: bool,
    pub accuracy_pass: bool,
    pub purity_pass: bool,
}

/// The canonical baseline-to-full chain the trend is defined over.
pub const TREND_CHAIN: [Ablation; 4] = [
    Ablation::RawReconst,
    Ablation::AlignReconst,
    Ablation::Covil,
    Ablation::Full,
];

pub fn check_trend(summary: &[AblationSummary]) -> TrendCheck {
    let present: Vec<&AblationSummary> = TREND_CHAIN
        .iter()
        .filter_map(|v| summary.iter().find(|s| s.variant == *v))
        .collect();
    let applicable = present.len() >= 2;
    let non_decreasing = |f: fn(&AblationSummary) -> f64| -> bool {
        present.windows(2).all(|w| f(w[0]) <= f(w[1]))
    };
    TrendCheck {
        chain: present.iter().map(|s| s.variant).collect(),
        applicable,
        accuracy_pass: applicable && non_decreasing(|s| s.mean_one_nn_accuracy),
        purity_pass: applicable && non_decreasing(|s| s.mean_gmm_purity),
    }
}

/// Fixed-width ablation table: one row per (variant, seed), then the
/// per-variant means, then the trend verdict.
pub fn render_ablation_table(
    rows: &[AblationRow],
    summary: &[AblationSummary],
    trend: &TrendCheck,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>6} {:>10} {:>10}\n",
        "variant", "seed", "1-nn", "purity"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<14} {:>6} {:>10.4} {:>10.4}\n",
            row.variant.name(),
            row.seed,
            row.one_nn_accuracy,
            row.gmm_purity
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:<14} {:>6} {:>10} {:>10}\n",
        "variant", "runs", "mean 1-nn", "mean pur."
    ));
    for s in summary {
        out.push_str(&format!(
            "{:<14} {:>6} {:>10.4} {:>10.4}\n",
            s.variant.name(),
            s.n_runs,
            s.mean_one_nn_accuracy,
            s.mean_gmm_purity
        ));
    }
    out.push('\n');
    if trend.applicable {
        let chain: Vec<&str> = trend.chain.iter().map(|v| v.name()).collect();
        let verdict = |pass: bool| if pass { "PASS" } else { "FAIL" };
        out.push_str(&format!(
            "trend {}: accuracy {}, purity {}\n",
            chain.join(" <= "),
            verdict(trend.accuracy_pass),
            verdict(trend.purity_pass)
        ));
    } else {
        out.push_str(
            "trend check skipped: needs at least two of raw_reconst, align_reconst, covil, full\n",
        );
    }
    out
}

/// The machine-readable ablation artifact.
#[derive(Debug, Serialize)]
pub struct AblationArtifact<'a> {
    pub rows: &'a [AblationRow],
    pub summary: &'a [AblationSummary],
    pub trend: &'a TrendCheck,
}

pub fn write_ablation_artifacts(
    dir: &Path,
    rows: &[AblationRow],
    summary: &[AblationSummary],
    trend: &TrendCheck,
) -> CliResult<String> {
    let table = render_ablation_table(rows, summary, trend);
    let txt_path = dir.join("ablation.txt");
    std::fs::write(&txt_path, &table).map_err(|e| CliError::io(&txt_path, e))?;
    let json_path = dir.join("ablation.json");
    let artifact = AblationArtifact {
        rows,
        summary,
        trend,
    };
    let body = to_json_pretty(&artifact, &json_path)?;
    std::fs::write(&json_path, body).map_err(|e| CliError::io(&json_path, e))?;
    Ok(table)
}
