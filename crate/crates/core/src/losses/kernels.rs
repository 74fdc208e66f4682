//! Loss kernels. Each returns the scalar value together with its gradient
//! with respect to the student-side input (logits or features).

use crate::error::{Error, Result};
use crate::matrix::{dot, log_sum_exp, norm, softmax_into, squared_distance, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
    /// Set when the kernel had nothing to measure (a CSD batch with no
    /// positive pairs); the value is then exactly 0.
    pub degenerate: bool,
}

impl LossValue {
    fn new(value: f64, grad: Matrix) -> Self {
        Self {
            value,
            grad,
            degenerate: false,
        }
    }
}

/// For every batch row, the other rows sharing its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveIndex {
    positives: Vec<Vec<usize>>,
}

impl PositiveIndex {
    pub fn new(labels: &[usize]) -> Self {
        let positives = labels
            .iter()
            .enumerate()
            .map(|(i, li)| {
                labels
                    .iter()
                    .enumerate()
                    .filter(|&(p, lp)| p != i && lp == li)
                    .map(|(p, _)| p)
                    .collect()
            })
            .collect();
        Self { positives }
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

fn check_batch(rows: usize, labels: &[usize], what: &str) -> Result<()> {
    if rows == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("a nonempty {what} batch"),
            actual: "0 rows".into(),
        });
    }
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            expected: format!("{rows} labels"),
            actual: format!("{} labels", labels.len()),
        });
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::config("loss.temperature", format!("must be positive, got {t}")))
    }
}

/// Mean negative log-likelihood of the true class under a softmax over classes.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    let (batch, classes) = logits.shape();
    check_batch(batch, labels, "logit")?;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let scale = 1.0 / batch as f64;
    let mut grad = Matrix::zeros(batch, classes);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        total += log_sum_exp(z) - z[y];
        let g = grad.row_mut(i);
        softmax_into(z, 1.0, g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(LossValue::new(total * scale, grad))
}

/// Batch-hard triplet loss on squared Euclidean distances:
/// mean over anchors of `max(0, d(a, p*) - d(a, n*) + margin)` where `p*` is
/// the farthest positive and `n*` the closest negative. Ties go to the lowest
/// batch index.
pub fn triplet_loss(features: &Matrix, labels: &[usize], margin: f64) -> Result<LossValue> {
    let (batch, dim) = features.shape();
    check_batch(batch, labels, "feature")?;
    if margin.is_nan() || margin < 0.0 {
        return Err(Error::config("loss.triplet_margin", "must be nonnegative"));
    }
    let mut dist = vec![0.0; batch * batch];
    for i in 0..batch {
        for j in i + 1..batch {
            let d = squared_distance(features.row(i), features.row(j));
            dist[i * batch + j] = d;
            dist[j * batch + i] = d;
        }
    }
    let scale = 1.0 / batch as f64;
    let mut grad = Matrix::zeros(batch, dim);
    let mut total = 0.0;
    for i in 0..batch {
        let row = &dist[i * batch..(i + 1) * batch];
        let mut hardest_pos: Option<usize> = None;
        let mut hardest_neg: Option<usize> = None;
        for j in 0..batch {
            if j == i {
                continue;
            }
            if labels[j] == labels[i] {
                if hardest_pos.is_none_or(|p| row[j] > row[p]) {
                    hardest_pos = Some(j);
                }
            } else if hardest_neg.is_none_or(|n| row[j] < row[n]) {
                hardest_neg = Some(j);
            }
        }
        let p = hardest_pos.ok_or(Error::NoPositive(i))?;
        let n = hardest_neg.ok_or(Error::NoNegative(i))?;
        let hinge = row[p] - row[n] + margin;
        if hinge > 0.0 {
            total += hinge;
            let (fi, fp, fn_) = (
                features.row(i).to_vec(),
                features.row(p).to_vec(),
                features.row(n).to_vec(),
            );
            for k in 0..dim {
                let gi = 2.0 * (fn_[k] - fp[k]) * scale;
                let gp = -2.0 * (fi[k] - fp[k]) * scale;
                let gn = 2.0 * (fi[k] - fn_[k]) * scale;
                grad.row_mut(i)[k] += gi;
                grad.row_mut(p)[k] += gp;
                grad.row_mut(n)[k] += gn;
            }
        }
    }
    Ok(LossValue::new(total * scale, grad))
}

/// Soft cross-entropy from the teacher's tempered class distribution to the
/// student's, averaged over the batch.
pub fn kd_loss(student_logits: &Matrix, teacher_logits: &Matrix, temperature: f64) -> Result<LossValue> {
    if student_logits.shape() != teacher_logits.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("teacher logits {:?}", teacher_logits.shape()),
            actual: format!("student logits {:?}", student_logits.shape()),
        });
    }
    check_temperature(temperature)?;
    let (batch, classes) = student_logits.shape();
    let mut grad = Matrix::zeros(batch, classes);
    if batch == 0 || classes == 0 {
        return Ok(LossValue::new(0.0, grad));
    }
    let scale = 1.0 / batch as f64;
    let mut q = vec![0.0; classes];
    let mut tempered = vec![0.0; classes];
    let mut total = 0.0;
    for i in 0..batch {
        softmax_into(teacher_logits.row(i), temperature, &mut q);
        for (t, s) in tempered.iter_mut().zip(student_logits.row(i)) {
            *t = s / temperature;
        }
        let lse = log_sum_exp(&tempered);
        let g = grad.row_mut(i);
        for c in 0..classes {
            let log_p = tempered[c] - lse;
            total -= q[c] * log_p;
            g[c] = (log_p.exp() - q[c]) * scale / temperature;
        }
    }
    Ok(LossValue::new(total * scale, grad))
}

fn normalized_rows(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if n == 0.0 {
            return Err(Error::ZeroVector(i));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Contrastive supervised distillation. Each teacher feature `t_i` is an
/// anchor; the student features sharing its label are pulled towards it and
/// all other student features (except row `i`) are pushed away:
///
/// `L = -1/|B'| sum_i 1/|P(i)| sum_{p in P(i)} log( exp(t_i.f_p/T) / sum_{a != i} exp(t_i.f_a/T) )`
///
/// Anchors without positives are skipped and `B'` counts the rest. The
/// teacher side is constant, so only the student gradient is returned.
pub fn csd_loss(
    teacher_features: &Matrix,
    student_features: &Matrix,
    labels: &[usize],
    temperature: f64,
    normalize: bool,
) -> Result<LossValue> {
    if teacher_features.shape() != student_features.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("teacher features {:?}", teacher_features.shape()),
            actual: format!("student features {:?}", student_features.shape()),
        });
    }
    let (batch, dim) = student_features.shape();
    check_batch(batch, labels, "feature")?;
    check_temperature(temperature)?;

    let (teacher, student, student_norms) = if normalize {
        let (t, _) = normalized_rows(teacher_features)?;
        let (s, n) = normalized_rows(student_features)?;
        (t, s, Some(n))
    } else {
        (teacher_features.clone(), student_features.clone(), None)
    };

    let positives = PositiveIndex::new(labels);
    let anchors: Vec<usize> = (0..batch).filter(|&i| !positives.of(i).is_empty()).collect();
    let mut grad = Matrix::zeros(batch, dim);
    if anchors.is_empty() {
        return Ok(LossValue {
            value: 0.0,
            grad,
            degenerate: true,
        });
    }
    let scale = 1.0 / anchors.len() as f64;
    let mut logits = vec![0.0; batch];
    let mut weights = vec![0.0; batch];
    let mut total = 0.0;
    for &i in &anchors {
        let anchor = teacher.row(i);
        for (a, logit) in logits.iter_mut().enumerate() {
            *logit = if a == i {
                f64::NEG_INFINITY
            } else {
                dot(anchor, student.row(a)) / temperature
            };
        }
        let lse = log_sum_exp(&logits);
        let pos = positives.of(i);
        let inv_pos = 1.0 / pos.len() as f64;
        total += pos.iter().map(|&p| lse - logits[p]).sum::<f64>() * inv_pos;

        // d/d(logit_a) = softmax_a - [a in P(i)] / |P(i)|
        for (a, (w, &l)) in weights.iter_mut().zip(&logits).enumerate() {
            *w = if a == i { 0.0 } else { (l - lse).exp() };
        }
        for &p in pos {
            weights[p] -= inv_pos;
        }
        for (a, &weight) in weights.iter().enumerate() {
            let w = weight * scale / temperature;
            if w != 0.0 {
                for (g, t) in grad.row_mut(a).iter_mut().zip(anchor) {
                    *g += w * t;
                }
            }
        }
    }

    if let Some(norms) = student_norms {
        // Chain rule through f / |f|: (g - (g.u) u) / |f|
        for (a, &n) in norms.iter().enumerate() {
            let u = student.row(a).to_vec();
            let g = grad.row_mut(a);
            let proj = dot(g, &u);
            for (gk, uk) in g.iter_mut().zip(&u) {
                *gk = (*gk - proj * uk) / n;
            }
        }
    }
    Ok(LossValue::new(total * scale, grad))
}
