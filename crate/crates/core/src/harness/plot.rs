use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::error::{Error, Result};

/// One point of a forgetting curve: seed-mean recall of the first evaluation
/// group after a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub checkpoint: usize,
    pub method: String,
    pub recall: f64,
}

fn rows(records: &[RunRecord], k: usize) -> Result<Vec<PlotRow>> {
    let Some(reference) = records.first() else {
        return Ok(Vec::new());
    };
    for r in &records[1..] {
        if r.checkpoints() != reference.checkpoints() {
            return Err(Error::InconsistentCheckpoints(format!(
                "`{}` has checkpoints {:?}, `{}` has {:?}",
                reference.label,
                reference.checkpoints(),
                r.label,
                r.checkpoints()
            )));
        }
    }
    let curves: Vec<Vec<f64>> = records.iter().map(|r| r.mean_curve(0, k)).collect();
    let mut out = Vec::with_capacity(records.len() * reference.checkpoints().len());
    for checkpoint in 0..reference.checkpoints().len() {
        for (r, curve) in records.iter().zip(&curves) {
            out.push(PlotRow {
                checkpoint,
                method: r.label.clone(),
                recall: curve[checkpoint],
            });
        }
    }
    Ok(out)
}

/// Comma-separated `checkpoint,method,recall_at_<k>` rows, grouped by
/// checkpoint so several methods interleave. Recalls are printed in
/// shortest round-trip form.
pub fn emit_plot_data(records: &[RunRecord], k: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::parse("plot data", e.to_string());
    w.write_record(["checkpoint", "method", &format!("recall_at_{k}")])
        .map_err(csv_err)?;
    for row in rows(records, k)? {
        w.write_record([row.checkpoint.to_string(), row.method, row.recall.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("plot data", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_plot_data(records: &[RunRecord], k: usize, path: &Path) -> Result<()> {
    let text = emit_plot_data(records, k)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_plot_data(text: &str) -> Result<Vec<PlotRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse("plot data", e.to_string()))?;
        let field = |i: usize| {
            record
                .get(i)
                .ok_or_else(|| Error::parse("plot data", format!("row {}: missing column {i}", line + 1)))
        };
        let bad = |e: &dyn std::fmt::Display| Error::parse("plot data", format!("row {}: {e}", line + 1));
        out.push(PlotRow {
            checkpoint: field(0)?.parse().map_err(|e| bad(&e))?,
            method: field(1)?.to_string(),
            recall: field(2)?.parse().map_err(|e| bad(&e))?,
        });
    }
    Ok(out)
}
