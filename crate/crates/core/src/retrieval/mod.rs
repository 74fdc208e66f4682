//! Cosine nearest-neighbour retrieval and leave-one-out Recall@K.

mod report;

use rayon::prelude::*;

use crate::data::{stack_inputs, Sample, TaskSequence};
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::model::FeatureExtractor;

pub use report::{GroupInfo, RecallEntry, RetrievalReport, SummaryRow};

/// `1 - a.b / (|a| |b|)`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b) / (norm(a) * norm(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    /// Row of the gallery matrix.
    pub position: usize,
    pub id: usize,
    pub label: usize,
    pub distance: f64,
}

/// Immutable gallery of feature vectors with labels and source ids.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    features: Matrix,
    norms: Vec<f64>,
    labels: Vec<usize>,
    ids: Vec<usize>,
}

/// Indexes gallery features; ids default to row positions.
pub fn index_gallery(features: Matrix, labels: Vec<usize>) -> Result<GalleryIndex> {
    let ids = (0..labels.len()).collect();
    GalleryIndex::with_ids(features, labels, ids)
}

impl GalleryIndex {
    pub fn with_ids(features: Matrix, labels: Vec<usize>, ids: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyGallery);
        }
        if labels.len() != features.rows() || ids.len() != features.rows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels and ids", features.rows()),
                actual: format!("{} labels, {} ids", labels.len(), ids.len()),
            });
        }
        let mut norms = Vec::with_capacity(features.rows());
        for (i, row) in features.iter_rows().enumerate() {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::ShapeMismatch {
                    expected: "finite gallery features".into(),
                    actual: format!("non-finite value in row {i}"),
                });
            }
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::ZeroVector(i));
            }
            norms.push(n);
        }
        Ok(Self {
            features,
            norms,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    fn query_norm(query: &[f64]) -> Result<f64> {
        let n = norm(query);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroQuery);
        }
        Ok(n)
    }

    #[inline]
    fn distance_at(&self, query: &[f64], query_norm: f64, pos: usize) -> f64 {
        1.0 - dot(query, self.features.row(pos)) / (query_norm * self.norms[pos])
    }

    /// Cosine distance from `query` to every gallery row.
    pub fn distances(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.check_query(query)?;
        let qn = Self::query_norm(query)?;
        Ok((0..self.len()).map(|g| self.distance_at(query, qn, g)).collect())
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.features.cols() {
            return Err(Error::ShapeMismatch {
                expected: format!("query of dimension {}", self.features.cols()),
                actual: format!("dimension {}", query.len()),
            });
        }
        Ok(())
    }

    /// The `k` gallery entries closest to `query`, by ascending cosine
    /// distance with ties broken by lower gallery position. Entries whose id
    /// equals `exclude_id` are skipped.
    pub fn nearest(&self, query: &[f64], k: usize, exclude_id: Option<usize>) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::config("k", "must be positive"));
        }
        let dist = self.distances(query)?;
        let mut candidates: Vec<usize> = (0..self.len()).filter(|&g| Some(self.ids[g]) != exclude_id).collect();
        if k > candidates.len() {
            return Err(Error::KTooLarge {
                k,
                available: candidates.len(),
            });
        }
        let order = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, order);
            candidates.truncate(k);
        }
        candidates.sort_unstable_by(order);
        Ok(candidates
            .into_iter()
            .map(|g| Neighbor {
                position: g,
                id: self.ids[g],
                label: self.labels[g],
                distance: dist[g],
            })
            .collect())
    }

    /// Leave-one-out rank of the closest same-label entry for gallery row
    /// `q` used as query, or `None` when no other entry shares its label.
    fn first_hit_rank(&self, q: usize) -> Option<usize> {
        let query = self.features.row(q);
        let qn = self.norms[q];
        let dist: Vec<f64> = (0..self.len()).map(|g| self.distance_at(query, qn, g)).collect();
        let label = self.labels[q];
        let before = |a: usize, b: usize| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)).is_lt();
        let best = (0..self.len())
            .filter(|&g| g != q && self.labels[g] == label)
            .reduce(|a, b| if before(b, a) { b } else { a })?;
        Some((0..self.len()).filter(|&g| g != q && before(g, best)).count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallAtK {
    pub k: usize,
    pub recall: f64,
    /// Queries that had at least one same-class gallery entry.
    pub queries: usize,
    /// Queries whose class has no other member; excluded from `recall`.
    pub flagged: usize,
    pub gallery: usize,
}

/// Leave-one-out Recall@K over a labelled feature set: every row queries all
/// other rows and counts as a hit when one of its `k` nearest shares its
/// label.
pub fn recall_at_k_features(features: &Matrix, labels: &[usize], ks: &[usize]) -> Result<Vec<RecallAtK>> {
    if ks.contains(&0) {
        return Err(Error::config("eval.k", "values must be positive"));
    }
    let index = index_gallery(features.clone(), labels.to_vec())?;
    let ranks: Vec<Option<usize>> = (0..index.len())
        .into_par_iter()
        .map(|q| index.first_hit_rank(q))
        .collect();
    let answered: Vec<usize> = ranks.iter().flatten().copied().collect();
    if answered.is_empty() {
        return Err(Error::DegenerateSplit);
    }
    let flagged = ranks.len() - answered.len();
    Ok(ks
        .iter()
        .map(|&k| RecallAtK {
            k,
            recall: answered.iter().filter(|&&r| r < k).count() as f64 / answered.len() as f64,
            queries: answered.len(),
            flagged,
            gallery: index.len() - 1,
        })
        .collect())
}

/// Recall@K of `model` on a test split, every sample querying the others.
pub fn recall_at_k<M: FeatureExtractor + ?Sized>(model: &M, test: &[Sample], ks: &[usize]) -> Result<Vec<RecallAtK>> {
    if test.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let features = model.embed(&stack_inputs(test))?;
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    recall_at_k_features(&features, &labels, ks)
}

/// Recall@K on the first task's test split at each checkpoint, in order.
pub fn forgetting_curve<M: FeatureExtractor>(
    checkpoints: &[M],
    first_task_test: &[Sample],
    k: usize,
) -> Result<Vec<f64>> {
    if checkpoints.is_empty() {
        return Err(Error::config("checkpoints", "need at least one checkpoint"));
    }
    checkpoints
        .iter()
        .map(|m| Ok(recall_at_k(m, first_task_test, &[k])?[0].recall))
        .collect()
}

/// Test split of one evaluation group (the pretraining split or a task).
#[derive(Debug, Clone)]
pub struct EvalGroup {
    pub name: String,
    pub classes: usize,
    pub test: Vec<Sample>,
}

/// Evaluates every group at every checkpoint.
#[derive(Debug, Clone)]
pub struct RecallEvaluator {
    pub groups: Vec<EvalGroup>,
    pub ks: Vec<usize>,
}

impl RecallEvaluator {
    pub fn from_sequence(seq: &TaskSequence, ks: &[usize]) -> Self {
        Self {
            groups: seq
                .stages()
                .map(|s| EvalGroup {
                    name: s.name(),
                    classes: s.classes.len(),
                    test: s.test.clone(),
                })
                .collect(),
            ks: ks.to_vec(),
        }
    }

    pub fn empty_report(&self) -> RetrievalReport {
        RetrievalReport::new(
            self.groups
                .iter()
                .map(|g| GroupInfo {
                    name: g.name.clone(),
                    classes: g.classes,
                })
                .collect(),
            self.ks.clone(),
        )
    }

    /// Evaluates `model` on every group and appends the results to `report`
    /// as a new checkpoint.
    pub fn evaluate_into<M: FeatureExtractor + ?Sized>(
        &self,
        model: &M,
        checkpoint_label: &str,
        report: &mut RetrievalReport,
    ) -> Result<()> {
        let mut per_group = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            per_group.push(recall_at_k(model, &g.test, &self.ks)?);
        }
        report.push_checkpoint(checkpoint_label, per_group);
        Ok(())
    }
}
