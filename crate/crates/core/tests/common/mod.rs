//! Independent reference implementations and random instance generators
//! shared by the integration tests. Nothing here calls into the kernels it
//! is used to check.

#![allow(dead_code)]

use csd_core::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Labels in which every class appears at least twice (needs `batch >= 4`
/// to also guarantee a second class).
pub fn pk_labels(rng: &mut ChaCha8Rng, batch: usize, max_classes: usize) -> Vec<usize> {
    assert!(batch >= 4);
    let classes = rng.random_range(2..=max_classes.min(batch / 2));
    let mut labels: Vec<usize> = (0..classes).flat_map(|c| [c, c]).collect();
    while labels.len() < batch {
        labels.push(rng.random_range(0..classes));
    }
    labels.shuffle(rng);
    labels
}

/// Arbitrary labels, singletons allowed.
pub fn any_labels(rng: &mut ChaCha8Rng, batch: usize, classes: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..classes)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn softmax(z: &[f64], t: f64) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in z {
        if v / t > m {
            m = v / t;
        }
    }
    let mut e = vec![0.0; z.len()];
    let mut s = 0.0;
    for c in 0..z.len() {
        e[c] = (z[c] / t - m).exp();
        s += e[c];
    }
    for v in &mut e {
        *v /= s;
    }
    e
}

pub fn ce_oracle(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..logits.rows() {
        let p = softmax(logits.row(i), 1.0);
        total -= p[labels[i]].ln();
    }
    total / logits.rows() as f64
}

/// Hinge maximized over every (positive, negative) pair of each anchor,
/// which equals the batch-hard choice because the hinge is monotone in
/// both distances.
pub fn triplet_oracle(features: &Matrix, labels: &[usize], margin: f64) -> f64 {
    let b = features.rows();
    let mut total = 0.0;
    for i in 0..b {
        let mut worst = f64::NEG_INFINITY;
        for p in 0..b {
            if p == i || labels[p] != labels[i] {
                continue;
            }
            for n in 0..b {
                if labels[n] == labels[i] {
                    continue;
                }
                let h = sq_dist(features.row(i), features.row(p)) - sq_dist(features.row(i), features.row(n)) + margin;
                if h > worst {
                    worst = h;
                }
            }
        }
        total += worst.max(0.0);
    }
    total / b as f64
}

pub fn kd_oracle(student: &Matrix, teacher: &Matrix, t: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..student.rows() {
        let q = softmax(teacher.row(i), t);
        let p = softmax(student.row(i), t);
        for c in 0..q.len() {
            total -= q[c] * p[c].ln();
        }
    }
    total / student.rows() as f64
}

pub fn entropy(logits: &Matrix, t: f64) -> f64 {
    kd_oracle(logits, logits, t)
}

fn normalized(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let n = dot(m.row(i), m.row(i)).sqrt();
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    out
}

/// Literal probability-ratio form, no log-sum-exp.
pub fn csd_oracle(teacher: &Matrix, student: &Matrix, labels: &[usize], t: f64, normalize: bool) -> f64 {
    let (teacher, student) = if normalize {
        (normalized(teacher), normalized(student))
    } else {
        (teacher.clone(), student.clone())
    };
    let b = student.rows();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let mut denom = 0.0;
        for a in 0..b {
            if a != i {
                denom += (dot(teacher.row(i), student.row(a)) / t).exp();
            }
        }
        let mut sum = 0.0;
        for &p in &positives {
            sum -= ((dot(teacher.row(i), student.row(p)) / t).exp() / denom).ln();
        }
        total += sum / positives.len() as f64;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

/// Central differences of `f` at every entry of `x`.
pub fn finite_difference(x: &Matrix, step: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for idx in 0..x.as_slice().len() {
        let orig = x.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[idx] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        grad.as_mut_slice()[idx] = (up - down) / (2.0 * step);
    }
    grad
}

/// Entries smaller than this in both gradients are compared absolutely.
/// Central differences at step 1e-6 on a loss of order 1 carry up to about
/// 1e-9 of rounding noise, so relative error on tinier entries measures only
/// that noise.
pub const GRAD_FLOOR: f64 = 1e-4;

/// Largest `|a - n| / max(|a|, |n|, GRAD_FLOOR)` over all entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR))
        .fold(0.0, f64::max)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Gallery positions sorted by (cosine distance, position), skipping
/// `exclude`.
pub fn brute_force_ranking(gallery: &Matrix, query: &[f64], exclude: Option<usize>) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = (0..gallery.rows())
        .filter(|&g| Some(g) != exclude)
        .map(|g| (cosine(query, gallery.row(g)), g))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    order.into_iter().map(|(_, g)| g).collect()
}

/// Leave-one-out Recall@K by full sort per query; queries without a
/// same-class partner are skipped.
pub fn brute_force_recall(features: &Matrix, labels: &[usize], k: usize) -> f64 {
    let (mut hits, mut queries) = (0usize, 0usize);
    for q in 0..features.rows() {
        if !(0..features.rows()).any(|g| g != q && labels[g] == labels[q]) {
            continue;
        }
        queries += 1;
        let ranking = brute_force_ranking(features, features.row(q), Some(q));
        if ranking.iter().take(k).any(|&g| labels[g] == labels[q]) {
            hits += 1;
        }
    }
    hits as f64 / queries as f64
}
