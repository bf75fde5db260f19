//! CSV emission for benchmark runs.
//!
//! Every run produces a flat table of per-round measurements. Numbers are
//! written with 17 significant digits so a CSV round-trips the underlying
//! f64 bits exactly; rows end with `\n` on every platform.

use std::fmt::Write as _;

use thiserror::Error;

pub const CSV_HEADER: &str =
    "scenario,seed,round,task,node,risk,cross_node_residual,cross_task_residual,objective";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("no records to emit")]
    Empty,
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One measurement row. `node: None` is the network-wide aggregate and is
/// rendered as the literal string `global`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub round: usize,
    pub task: usize,
    pub node: Option<usize>,
    pub risk: f64,
    pub cross_node_residual: f64,
    pub cross_task_residual: f64,
    pub objective: f64,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn emit_csv(records: &[RunRecord]) -> Result<String, CsvError> {
    if records.is_empty() {
        return Err(CsvError::Empty);
    }
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let node = match r.node {
            Some(v) => v.to_string(),
            None => "global".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.seed,
            r.round,
            r.task,
            node,
            fmt_f64(r.risk),
            fmt_f64(r.cross_node_residual),
            fmt_f64(r.cross_task_residual),
            fmt_f64(r.objective),
        );
    }
    Ok(out)
}

pub fn write_csv(records: &[RunRecord], path: &std::path::Path) -> Result<(), CsvError> {
    let text = emit_csv(records)?;
    std::fs::write(path, text).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Feature matrix with one label column: `feature_0..feature_{p-1},label`.
/// Used for exporting prepared datasets; labels print via `Display` so both
/// ±1 classes and raw digits come out as plain integers.
pub fn dataset_csv<L: std::fmt::Display>(
    features: &ndarray::Array2<f64>,
    labels: impl IntoIterator<Item = L>,
) -> Result<String, CsvError> {
    if features.nrows() == 0 {
        return Err(CsvError::Empty);
    }
    let p = features.ncols();
    let mut out = String::new();
    for j in 0..p {
        let _ = write!(out, "feature_{j},");
    }
    out.push_str("label\n");
    let mut labels = labels.into_iter();
    for row in features.rows() {
        for x in row {
            let _ = write!(out, "{x:.16e},");
        }
        let label = labels.next().expect("one label per row");
        let _ = writeln!(out, "{label}");
    }
    Ok(out)
}
