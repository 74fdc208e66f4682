//! Plasticity and stability objectives built from the four loss kernels.
//!
//! * plasticity = CE + triplet
//! * stability = lambda_kd * KD + lambda_csd * CSD
//! * total = plasticity, plus stability on every task after the first

mod kernels;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::ForwardResult;

pub use kernels::{cross_entropy, csd_loss, kd_loss, triplet_loss, LossValue, PositiveIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_kd: f64,
    pub lambda_csd: f64,
    pub triplet_margin: f64,
    pub kd_temperature: f64,
    pub csd_temperature: f64,
    pub normalize_csd_features: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_kd: 1.0,
            lambda_csd: 1.0,
            triplet_margin: 0.3,
            kd_temperature: 1.0,
            csd_temperature: 1.0,
            normalize_csd_features: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let nonneg = [
            ("lambda_kd", self.lambda_kd),
            ("lambda_csd", self.lambda_csd),
            ("triplet_margin", self.triplet_margin),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    format!("{prefix}.{name}"),
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("kd_temperature", self.kd_temperature),
            ("csd_temperature", self.csd_temperature),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("{prefix}.{name}"),
                    format!("must be > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Which loss components take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentMask {
    pub ce: bool,
    pub triplet: bool,
    pub kd: bool,
    pub csd: bool,
}

impl Default for ComponentMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl ComponentMask {
    pub const ALL: Self = Self {
        ce: true,
        triplet: true,
        kd: true,
        csd: true,
    };

    /// Plasticity only: the fine-tuning baseline.
    pub const FINE_TUNING: Self = Self {
        ce: true,
        triplet: true,
        kd: false,
        csd: false,
    };

    /// Every mask that includes CE, in a fixed order.
    pub fn all_with_ce() -> Vec<Self> {
        (0..8u8)
            .map(|bits| Self {
                ce: true,
                triplet: bits & 1 != 0,
                kd: bits & 2 != 0,
                csd: bits & 4 != 0,
            })
            .collect()
    }
}

impl fmt::Display for ComponentMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            ("ce", self.ce),
            ("triplet", self.triplet),
            ("kd", self.kd),
            ("csd", self.csd),
        ]
        .into_iter()
        .filter_map(|(n, on)| on.then_some(n))
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

impl FromStr for ComponentMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut mask = Self {
            ce: false,
            triplet: false,
            kd: false,
            csd: false,
        };
        for part in s.split('+').map(str::trim) {
            match part.to_ascii_lowercase().as_str() {
                "ce" => mask.ce = true,
                "triplet" => mask.triplet = true,
                "kd" => mask.kd = true,
                "csd" => mask.csd = true,
                other => return Err(Error::config("components", format!("unknown component `{other}`"))),
            }
        }
        Ok(mask)
    }
}

/// Unweighted component values; 0 for components that were not evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentValues {
    pub ce: f64,
    pub triplet: f64,
    pub kd: f64,
    pub csd: f64,
}

/// Scalar objective with gradients on the student's features and logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub plasticity: f64,
    pub stability: f64,
    pub parts: ComponentValues,
    pub grad_features: Matrix,
    pub grad_logits: Matrix,
    pub csd_degenerate: bool,
}

impl Objective {
    fn zero(student: &ForwardResult) -> Self {
        Self {
            total: 0.0,
            plasticity: 0.0,
            stability: 0.0,
            parts: ComponentValues::default(),
            grad_features: Matrix::zeros(student.features.rows(), student.features.cols()),
            grad_logits: Matrix::zeros(student.logits.rows(), student.logits.cols()),
            csd_degenerate: false,
        }
    }

    fn add_plasticity(
        &mut self,
        student: &ForwardResult,
        labels: &[usize],
        weights: &LossWeights,
        mask: &ComponentMask,
    ) -> Result<()> {
        if mask.ce {
            let ce = cross_entropy(&student.logits, labels)?;
            self.parts.ce = ce.value;
            self.plasticity += ce.value;
            self.grad_logits.add_scaled(&ce.grad, 1.0);
        }
        if mask.triplet {
            let tr = triplet_loss(&student.features, labels, weights.triplet_margin)?;
            self.parts.triplet = tr.value;
            self.plasticity += tr.value;
            self.grad_features.add_scaled(&tr.grad, 1.0);
        }
        Ok(())
    }

    fn add_stability(
        &mut self,
        student: &ForwardResult,
        teacher: &ForwardResult,
        labels: &[usize],
        weights: &LossWeights,
        mask: &ComponentMask,
    ) -> Result<()> {
        if mask.kd {
            let old = teacher.logits.cols();
            if old > student.logits.cols() || teacher.logits.rows() != student.logits.rows() {
                return Err(Error::ShapeMismatch {
                    expected: format!("student logits covering the teacher's {:?}", teacher.logits.shape()),
                    actual: format!("{:?}", student.logits.shape()),
                });
            }
            let kd = kd_loss(
                &student.logits.leading_columns(old),
                &teacher.logits,
                weights.kd_temperature,
            )?;
            self.parts.kd = kd.value;
            self.stability += weights.lambda_kd * kd.value;
            if weights.lambda_kd != 0.0 {
                for i in 0..kd.grad.rows() {
                    for (g, k) in self.grad_logits.row_mut(i)[..old].iter_mut().zip(kd.grad.row(i)) {
                        *g += weights.lambda_kd * k;
                    }
                }
            }
        }
        if mask.csd {
            let csd = csd_loss(
                &teacher.features,
                &student.features,
                labels,
                weights.csd_temperature,
                weights.normalize_csd_features,
            )?;
            self.parts.csd = csd.value;
            self.csd_degenerate = csd.degenerate;
            self.stability += weights.lambda_csd * csd.value;
            if weights.lambda_csd != 0.0 {
                self.grad_features.add_scaled(&csd.grad, weights.lambda_csd);
            }
        }
        Ok(())
    }
}

/// CE + triplet on the student's own outputs.
pub fn plasticity_loss(student: &ForwardResult, labels: &[usize], weights: &LossWeights) -> Result<Objective> {
    objective(student, None, labels, weights, &ComponentMask::FINE_TUNING, true)
}

/// `lambda_kd * KD + lambda_csd * CSD`, with the student logits restricted to
/// the classes the teacher knows.
pub fn stability_loss(
    student: &ForwardResult,
    teacher: &ForwardResult,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<Objective> {
    let mut obj = Objective::zero(student);
    let mask = ComponentMask {
        ce: false,
        triplet: false,
        kd: true,
        csd: true,
    };
    obj.add_stability(student, teacher, labels, weights, &mask)?;
    obj.total = obj.stability;
    Ok(obj)
}

/// Plasticity, plus stability unless this is the first task.
pub fn total_loss(
    student: &ForwardResult,
    teacher: Option<&ForwardResult>,
    labels: &[usize],
    weights: &LossWeights,
    is_first_task: bool,
) -> Result<Objective> {
    objective(student, teacher, labels, weights, &ComponentMask::ALL, is_first_task)
}

/// [`total_loss`] restricted to the components enabled in `mask`.
///
/// A teacher must be supplied exactly when `is_first_task` is false.
/// Components whose weight is zero are still evaluated for reporting but
/// contribute no gradient.
pub fn objective(
    student: &ForwardResult,
    teacher: Option<&ForwardResult>,
    labels: &[usize],
    weights: &LossWeights,
    mask: &ComponentMask,
    is_first_task: bool,
) -> Result<Objective> {
    let mut obj = Objective::zero(student);
    obj.add_plasticity(student, labels, weights, mask)?;
    match (is_first_task, teacher) {
        (true, Some(_)) => return Err(Error::UnexpectedTeacher),
        (false, None) => return Err(Error::MissingTeacher),
        (false, Some(teacher)) => obj.add_stability(student, teacher, labels, weights, mask)?,
        (true, None) => {}
    }
    obj.total = obj.plasticity + obj.stability;
    Ok(obj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(features: Vec<Vec<f64>>, logits: Vec<Vec<f64>>) -> ForwardResult {
        ForwardResult {
            features: Matrix::from_rows(&features).unwrap(),
            logits: Matrix::from_rows(&logits).unwrap(),
        }
    }

    fn sample_batch() -> (ForwardResult, ForwardResult, Vec<usize>) {
        let student = result(
            vec![vec![0.1, 0.4], vec![0.3, -0.2], vec![-0.6, 0.5], vec![0.9, 0.8]],
            vec![
                vec![0.2, -0.1, 0.4],
                vec![0.0, 0.3, -0.2],
                vec![1.0, 0.1, 0.1],
                vec![-0.4, 0.2, 0.6],
            ],
        );
        let teacher = result(
            vec![vec![0.2, 0.3], vec![0.1, -0.4], vec![-0.5, 0.6], vec![0.7, 0.9]],
            vec![vec![0.5, -0.3], vec![0.2, 0.1], vec![0.4, 0.0], vec![-0.2, 0.3]],
        );
        (student, teacher, vec![0, 0, 1, 1])
    }

    #[test]
    fn plasticity_of_trivial_batch() {
        let far = result(
            vec![vec![0.0, 0.0], vec![0.0, 0.1], vec![50.0, 0.0], vec![50.0, 0.1]],
            vec![vec![0.0; 4]; 4],
        );
        let obj = plasticity_loss(&far, &[0, 0, 1, 1], &LossWeights::default()).unwrap();
        assert!((obj.total - 4f64.ln()).abs() < 1e-12);

        let same = result(
            vec![vec![1.0, 1.0]; 4],
            vec![
                vec![1000.0, 0.0],
                vec![1000.0, 0.0],
                vec![0.0, 1000.0],
                vec![0.0, 1000.0],
            ],
        );
        let obj = plasticity_loss(&same, &[0, 0, 1, 1], &LossWeights::default()).unwrap();
        assert!((obj.total - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_lambdas_give_zero_stability() {
        let (s, t, y) = sample_batch();
        let w = LossWeights {
            lambda_kd: 0.0,
            lambda_csd: 0.0,
            ..Default::default()
        };
        assert_eq!(stability_loss(&s, &t, &y, &w).unwrap().total, 0.0);
        let later = total_loss(&s, Some(&t), &y, &w, false).unwrap();
        let first = total_loss(&s, None, &y, &w, true).unwrap();
        assert_eq!(later.total, first.total);
        assert_eq!(later.grad_features, first.grad_features);
        assert_eq!(later.grad_logits, first.grad_logits);
    }

    #[test]
    fn csd_only_stability_equals_kernel() {
        let (s, t, y) = sample_batch();
        let w = LossWeights {
            lambda_kd: 0.0,
            ..Default::default()
        };
        let kernel = csd_loss(&t.features, &s.features, &y, 1.0, false).unwrap();
        assert_eq!(stability_loss(&s, &t, &y, &w).unwrap().total, kernel.value);
    }

    #[test]
    fn total_on_later_task_sums_components() {
        let (s, t, y) = sample_batch();
        let w = LossWeights::default();
        let obj = total_loss(&s, Some(&t), &y, &w, false).unwrap();
        let p = obj.parts;
        assert!((obj.total - (p.ce + p.triplet + p.kd + p.csd)).abs() < 1e-15);
        // KD only touches the teacher's two classes.
        assert!(p.kd > 0.0);
    }

    #[test]
    fn teacher_presence_must_match_task() {
        let (s, t, y) = sample_batch();
        let w = LossWeights::default();
        assert!(matches!(
            total_loss(&s, None, &y, &w, false),
            Err(Error::MissingTeacher)
        ));
        assert!(matches!(
            total_loss(&s, Some(&t), &y, &w, true),
            Err(Error::UnexpectedTeacher)
        ));
    }

    #[test]
    fn first_task_total_is_plasticity() {
        let (s, _, y) = sample_batch();
        let w = LossWeights::default();
        assert_eq!(
            total_loss(&s, None, &y, &w, true).unwrap().total,
            plasticity_loss(&s, &y, &w).unwrap().total
        );
    }

    #[test]
    fn mask_labels_round_trip() {
        for mask in ComponentMask::all_with_ce() {
            assert_eq!(mask.to_string().parse::<ComponentMask>().unwrap(), mask);
        }
        assert_eq!(ComponentMask::ALL.to_string(), "ce+triplet+kd+csd");
        assert!("ce+foo".parse::<ComponentMask>().is_err());
    }

    #[test]
    fn weights_validation_names_field() {
        let w = LossWeights {
            csd_temperature: 0.0,
            ..Default::default()
        };
        let err = w.validate("loss").unwrap_err();
        assert!(err.to_string().contains("loss.csd_temperature"));
    }
}
