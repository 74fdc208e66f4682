use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::RecallAtK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub name: String,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub checkpoint: usize,
    pub group: usize,
    pub k: usize,
    pub recall: f64,
    pub queries: usize,
    pub flagged: usize,
    pub gallery: usize,
}

/// First-group recall, last-group recall and their unweighted mean over all
/// groups, laid out like a results-table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub first: f64,
    pub last: f64,
    pub average: f64,
}

/// Recall values per (checkpoint, group, K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub groups: Vec<GroupInfo>,
    pub ks: Vec<usize>,
    pub checkpoints: Vec<String>,
    pub entries: Vec<RecallEntry>,
}

impl RetrievalReport {
    pub fn new(groups: Vec<GroupInfo>, ks: Vec<usize>) -> Self {
        Self {
            groups,
            ks,
            checkpoints: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn push_checkpoint(&mut self, label: &str, per_group: Vec<Vec<RecallAtK>>) {
        let checkpoint = self.checkpoints.len();
        self.checkpoints.push(label.to_string());
        for (group, values) in per_group.into_iter().enumerate() {
            for v in values {
                self.entries.push(RecallEntry {
                    checkpoint,
                    group,
                    k: v.k,
                    recall: v.recall,
                    queries: v.queries,
                    flagged: v.flagged,
                    gallery: v.gallery,
                });
            }
        }
    }

    pub fn num_checkpoints(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn recall(&self, checkpoint: usize, group: usize, k: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.checkpoint == checkpoint && e.group == group && e.k == k)
            .map(|e| e.recall)
    }

    /// Unweighted mean of the per-group recalls at one checkpoint.
    pub fn average(&self, checkpoint: usize, k: usize) -> Option<f64> {
        let values: Option<Vec<f64>> = (0..self.groups.len()).map(|g| self.recall(checkpoint, g, k)).collect();
        let values = values?;
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn summary_at(&self, checkpoint: usize, k: usize) -> Option<SummaryRow> {
        Some(SummaryRow {
            first: self.recall(checkpoint, 0, k)?,
            last: self.recall(checkpoint, self.groups.len().checked_sub(1)?, k)?,
            average: self.average(checkpoint, k)?,
        })
    }

    /// Summary row at the final checkpoint.
    pub fn summary(&self, k: usize) -> Option<SummaryRow> {
        self.summary_at(self.num_checkpoints().checked_sub(1)?, k)
    }

    /// Recall of one group across all checkpoints, in training order.
    pub fn curve(&self, group: usize, k: usize) -> Vec<f64> {
        (0..self.num_checkpoints())
            .filter_map(|c| self.recall(c, group, k))
            .collect()
    }

    /// One tab-separated table per checkpoint followed by the Recall@1-style
    /// summary row at the final checkpoint.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (c, label) in self.checkpoints.iter().enumerate() {
            writeln!(out, "# checkpoint {c}: {label}").unwrap();
            writeln!(out, "group\tclasses\tK\trecall\tqueries\tgallery").unwrap();
            for e in self.entries.iter().filter(|e| e.checkpoint == c) {
                let g = &self.groups[e.group];
                writeln!(
                    out,
                    "{}\t{}\t{}\t{:.4}\t{}\t{}",
                    g.name, g.classes, e.k, e.recall, e.queries, e.gallery
                )
                .unwrap();
            }
            out.push('\n');
        }
        if let (Some(&k), Some(first), Some(last)) = (self.ks.first(), self.groups.first(), self.groups.last()) {
            if let Some(row) = self.summary(k) {
                writeln!(out, "# summary: Recall@{k} at final checkpoint").unwrap();
                writeln!(out, "{}\t{}\taverage", first.name, last.name).unwrap();
                writeln!(
                    out,
                    "{:.1}\t{:.1}\t{:.1}",
                    100.0 * row.first,
                    100.0 * row.last,
                    100.0 * row.average
                )
                .unwrap();
            }
        }
        out
    }
}
