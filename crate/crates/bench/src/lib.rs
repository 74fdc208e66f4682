//! Shared fixtures for the criterion benchmarks.

use csd_core::data::{generate_blobs, split_even, BlobConfig};
use csd_core::model::snapshot;
use csd_core::{EmbeddingModel, ForwardResult, Matrix, ModelSnapshot, TaskSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// `p` classes with `k` rows each, laid out class by class.
pub fn pk_labels(p: usize, k: usize) -> Vec<usize> {
    (0..p).flat_map(|c| std::iter::repeat_n(c, k)).collect()
}

/// Student and teacher outputs for one batch of `p * k` rows.
pub struct LossBatch {
    pub student: ForwardResult,
    pub teacher: ForwardResult,
    pub labels: Vec<usize>,
}

pub fn loss_batch(p: usize, k: usize, dim: usize, classes: usize) -> LossBatch {
    let b = p * k;
    LossBatch {
        student: ForwardResult {
            features: random_matrix(b, dim, 1),
            logits: random_matrix(b, classes, 2),
        },
        teacher: ForwardResult {
            features: random_matrix(b, dim, 3),
            logits: random_matrix(b, classes / 2, 4),
        },
        labels: pk_labels(p, k),
    }
}

/// A student that has seen classes `0..classes` and a frozen teacher that
/// knows the first half of them.
pub fn student_and_teacher(
    input: usize,
    hidden: &[usize],
    feature: usize,
    classes: usize,
) -> (EmbeddingModel, ModelSnapshot) {
    let old: Vec<usize> = (0..classes / 2).collect();
    let new: Vec<usize> = (classes / 2..classes).collect();
    let teacher = csd_core::model::reference_network(input, hidden, feature, 0)
        .unwrap()
        .extend_classifier(&old)
        .unwrap();
    let student = teacher.clone().extend_classifier(&new).unwrap();
    (student, snapshot(&teacher))
}

pub fn blob_sequence(classes: usize, dim: usize, per_class: usize, tasks: usize) -> TaskSequence {
    let data = generate_blobs(&BlobConfig {
        classes,
        dim,
        per_class,
        spread: 1.0,
        seed: 0,
    })
    .unwrap();
    split_even(&data, tasks, 0).unwrap()
}
