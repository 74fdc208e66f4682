//! The representation network and its growing classifier head.
//!
//! A model maps an input `x` to a feature vector `f = phi(x)` through a small
//! tanh MLP whose last layer is linear, then to logits `z = f W (+ b)` with one
//! classifier column per class seen so far. Gradients are computed by an
//! explicit backward pass over a recorded [`Tape`].

mod checkpoint;
mod snapshot;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use snapshot::{snapshot, ModelSnapshot};

/// Standard deviation of freshly added classifier columns.
pub const CLASSIFIER_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classifier_bias: bool,
}

impl Architecture {
    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden);
        d.push(self.feature_dim);
        d
    }

    fn num_repr_params(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    arch: Architecture,
    /// Per layer: the `out x in` weight matrix (row-major) followed by the bias.
    repr_params: Vec<f64>,
    /// Class-major: column `c` occupies `[c * feature_dim, (c + 1) * feature_dim)`.
    classifier: Vec<f64>,
    classifier_bias: Option<Vec<f64>>,
    classes_seen: Vec<usize>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub features: Matrix,
    pub logits: Matrix,
}

impl ForwardResult {
    pub fn batch_size(&self) -> usize {
        self.features.rows()
    }
}

/// Layer inputs recorded during a forward pass; `activations[l]` feeds layer `l`
/// and the last entry holds the features.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Matrix>,
}

/// Gradient of a scalar loss with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub repr: Vec<f64>,
    pub classifier: Vec<f64>,
    pub classifier_bias: Option<Vec<f64>>,
}

/// Anything that maps a batch of inputs to feature vectors.
pub trait FeatureExtractor {
    fn embed(&self, inputs: &Matrix) -> Result<Matrix>;
}

fn class_seed(seed: u64, class: usize) -> u64 {
    seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds a small MLP: tanh hidden layers, then a linear embedding layer of
/// width `feature_dim`. Weights use Glorot-uniform initialisation from `seed`,
/// biases start at zero, and the classifier starts empty.
pub fn reference_network(
    input_dim: usize,
    hidden_dims: &[usize],
    feature_dim: usize,
    seed: u64,
) -> Result<EmbeddingModel> {
    EmbeddingModel::new(
        Architecture {
            input_dim,
            hidden: hidden_dims.to_vec(),
            feature_dim,
            classifier_bias: false,
        },
        seed,
    )
}

impl EmbeddingModel {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.input_dim == 0 || arch.feature_dim == 0 || arch.hidden.contains(&0) {
            return Err(Error::config("model", "all layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut repr_params = Vec::with_capacity(arch.num_repr_params());
        for w in arch.dims().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            repr_params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            repr_params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            classifier_bias: arch.classifier_bias.then(Vec::new),
            arch,
            repr_params,
            classifier: Vec::new(),
            classes_seen: Vec::new(),
            seed,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    pub fn classes_seen(&self) -> &[usize] {
        &self.classes_seen
    }

    pub fn num_classes(&self) -> usize {
        self.classes_seen.len()
    }

    pub fn repr_params(&self) -> &[f64] {
        &self.repr_params
    }

    pub fn repr_params_mut(&mut self) -> &mut [f64] {
        &mut self.repr_params
    }

    pub fn classifier_params(&self) -> &[f64] {
        &self.classifier
    }

    pub fn classifier_params_mut(&mut self) -> &mut [f64] {
        &mut self.classifier
    }

    pub fn classifier_bias(&self) -> Option<&[f64]> {
        self.classifier_bias.as_deref()
    }

    pub fn classifier_bias_mut(&mut self) -> Option<&mut [f64]> {
        self.classifier_bias.as_deref_mut()
    }

    /// Column of the classifier for the class at position `slot` of `classes_seen`.
    pub fn classifier_column(&self, slot: usize) -> &[f64] {
        let d = self.arch.feature_dim;
        &self.classifier[slot * d..(slot + 1) * d]
    }

    /// Position of a global class id in the logit vector.
    pub fn logit_slot(&self, class: usize) -> Option<usize> {
        self.classes_seen.iter().position(|&c| c == class)
    }

    /// Appends one classifier column per new class. Existing columns are untouched.
    pub fn extend_classifier(mut self, new_class_ids: &[usize]) -> Result<Self> {
        for (i, &class) in new_class_ids.iter().enumerate() {
            if self.classes_seen.contains(&class) || new_class_ids[..i].contains(&class) {
                return Err(Error::DuplicateClass(class));
            }
        }
        let normal = Normal::new(0.0, CLASSIFIER_INIT_STD).expect("valid std");
        for &class in new_class_ids {
            let mut rng = ChaCha8Rng::seed_from_u64(class_seed(self.seed, class));
            self.classifier
                .extend((0..self.arch.feature_dim).map(|_| normal.sample(&mut rng)));
            if let Some(bias) = &mut self.classifier_bias {
                bias.push(0.0);
            }
            self.classes_seen.push(class);
        }
        Ok(self)
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.arch.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("inputs with {} columns", self.arch.input_dim),
                actual: format!("{} columns", inputs.cols()),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, input: &Matrix, offset: usize, out_dim: usize, hidden: bool) -> Matrix {
        let in_dim = input.cols();
        let weights = &self.repr_params[offset..offset + in_dim * out_dim];
        let bias = &self.repr_params[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim];
        let mut out = Matrix::zeros(input.rows(), out_dim);
        for i in 0..input.rows() {
            let x = input.row(i);
            for (o, y) in out.row_mut(i).iter_mut().enumerate() {
                let pre = bias[o] + dot(&weights[o * in_dim..(o + 1) * in_dim], x);
                *y = if hidden { pre.tanh() } else { pre };
            }
        }
        out
    }

    fn embed_with_tape(&self, inputs: &Matrix) -> Result<Tape> {
        self.check_input(inputs)?;
        let dims = self.arch.dims();
        let layers = dims.len() - 1;
        let mut activations = Vec::with_capacity(dims.len());
        activations.push(inputs.clone());
        let mut offset = 0;
        for l in 0..layers {
            let out = self.layer_forward(&activations[l], offset, dims[l + 1], l + 1 < layers);
            offset += dims[l] * dims[l + 1] + dims[l + 1];
            activations.push(out);
        }
        Ok(Tape { activations })
    }

    pub fn logits(&self, features: &Matrix) -> Matrix {
        let d = self.arch.feature_dim;
        let classes = self.classes_seen.len();
        let mut logits = Matrix::zeros(features.rows(), classes);
        for i in 0..features.rows() {
            let f = features.row(i);
            for (c, z) in logits.row_mut(i).iter_mut().enumerate() {
                *z = dot(f, &self.classifier[c * d..(c + 1) * d]);
                if let Some(bias) = &self.classifier_bias {
                    *z += bias[c];
                }
            }
        }
        logits
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardResult> {
        Ok(self.forward_with_tape(inputs)?.0)
    }

    pub fn forward_batch(&self, batch: &LabeledBatch) -> Result<ForwardResult> {
        self.forward(&batch.inputs)
    }

    pub fn forward_with_tape(&self, inputs: &Matrix) -> Result<(ForwardResult, Tape)> {
        let tape = self.embed_with_tape(inputs)?;
        let features = tape.activations.last().expect("at least one layer").clone();
        let logits = self.logits(&features);
        Ok((ForwardResult { features, logits }, tape))
    }

    /// Backpropagates upstream gradients on the features and the logits of a
    /// forward pass recorded in `tape`.
    pub fn backward(&self, tape: &Tape, grad_features: &Matrix, grad_logits: &Matrix) -> ModelGradient {
        let d = self.arch.feature_dim;
        let classes = self.classes_seen.len();
        let features = tape.activations.last().expect("nonempty tape");
        let batch = features.rows();
        assert_eq!(grad_features.shape(), (batch, d));
        assert_eq!(grad_logits.shape(), (batch, classes));

        let mut classifier = vec![0.0; self.classifier.len()];
        let mut classifier_bias = self.classifier_bias.as_ref().map(|b| vec![0.0; b.len()]);
        let mut upstream = grad_features.clone();
        for i in 0..batch {
            let f = features.row(i);
            let dz = grad_logits.row(i);
            for c in 0..classes {
                let g = dz[c];
                if g == 0.0 {
                    continue;
                }
                let col = &self.classifier[c * d..(c + 1) * d];
                let gcol = &mut classifier[c * d..(c + 1) * d];
                for k in 0..d {
                    gcol[k] += g * f[k];
                }
                for (u, w) in upstream.row_mut(i).iter_mut().zip(col) {
                    *u += g * w;
                }
                if let Some(b) = &mut classifier_bias {
                    b[c] += g;
                }
            }
        }

        let dims = self.arch.dims();
        let layers = dims.len() - 1;
        let mut repr = vec![0.0; self.repr_params.len()];
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += dims[l] * dims[l + 1] + dims[l + 1];
        }
        for l in (0..layers).rev() {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let input = &tape.activations[l];
            let output = &tape.activations[l + 1];
            if l + 1 < layers {
                // tanh'(x) = 1 - tanh(x)^2
                for i in 0..batch {
                    for (g, y) in upstream.row_mut(i).iter_mut().zip(output.row(i)) {
                        *g *= 1.0 - y * y;
                    }
                }
            }
            let off = offsets[l];
            let weights = &self.repr_params[off..off + in_dim * out_dim];
            let (gw, gb) = repr[off..off + in_dim * out_dim + out_dim].split_at_mut(in_dim * out_dim);
            let mut next = Matrix::zeros(batch, in_dim);
            for i in 0..batch {
                let x = input.row(i);
                let g = upstream.row(i);
                let gx = next.row_mut(i);
                for o in 0..out_dim {
                    let go = g[o];
                    gb[o] += go;
                    let wrow = &weights[o * in_dim..(o + 1) * in_dim];
                    let gwrow = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for j in 0..in_dim {
                        gwrow[j] += go * x[j];
                        gx[j] += go * wrow[j];
                    }
                }
            }
            upstream = next;
        }

        ModelGradient {
            repr,
            classifier,
            classifier_bias,
        }
    }

    /// SHA-256 over every parameter and the class list.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self
            .repr_params
            .iter()
            .chain(&self.classifier)
            .chain(self.classifier_bias.iter().flatten())
        {
            h.update(v.to_le_bytes());
        }
        for c in &self.classes_seen {
            h.update((*c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl FeatureExtractor for EmbeddingModel {
    fn embed(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut tape = self.embed_with_tape(inputs)?;
        Ok(tape.activations.pop().expect("nonempty tape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let mut m = reference_network(4, &[5], 3, 1)
            .unwrap()
            .extend_classifier(&[0, 1])
            .unwrap();
        m.classifier_params_mut().fill(0.0);
        let out = m.forward(&inputs(3, 4, 2)).unwrap();
        assert!(out.logits.as_slice().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = reference_network(4, &[6, 5], 3, 7)
            .unwrap()
            .extend_classifier(&[2])
            .unwrap();
        let x = inputs(5, 4, 3);
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn logits_match_scalar_loop() {
        let m = reference_network(3, &[4], 5, 11)
            .unwrap()
            .extend_classifier(&[0, 1, 2, 3])
            .unwrap();
        let out = m.forward(&inputs(3, 3, 4)).unwrap();
        for i in 0..3 {
            for c in 0..4 {
                let mut z = 0.0;
                for k in 0..5 {
                    z += out.features.get(i, k) * m.classifier_column(c)[k];
                }
                assert!((out.logits.get(i, c) - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_hidden_layers_is_linear() {
        let m = reference_network(2, &[], 3, 0).unwrap();
        assert_eq!(m.repr_params().len(), 2 * 3 + 3);
        let a = m.embed(&Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        let b = m.embed(&Matrix::from_rows(&[vec![2.0, 4.0]]).unwrap()).unwrap();
        for k in 0..3 {
            assert!((2.0 * a.get(0, k) - b.get(0, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = reference_network(8, &[16], 4, 99).unwrap();
        let b = reference_network(8, &[16], 4, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, reference_network(8, &[16], 4, 100).unwrap());
    }

    #[test]
    fn extension_preserves_old_columns_and_logits() {
        let m = reference_network(4, &[6], 3, 5)
            .unwrap()
            .extend_classifier(&[0, 1])
            .unwrap();
        let x = inputs(4, 4, 8);
        let before = m.forward(&x).unwrap();
        let old = m.classifier_params().to_vec();
        let m = m.extend_classifier(&[5, 6, 7]).unwrap();
        assert_eq!(&m.classifier_params()[..old.len()], old.as_slice());
        assert_eq!(m.classes_seen(), &[0, 1, 5, 6, 7]);
        let after = m.forward(&x).unwrap();
        assert_eq!(after.logits.leading_columns(2), before.logits);
    }

    #[test]
    fn extend_by_nothing_is_identity() {
        let m = reference_network(4, &[6], 3, 5)
            .unwrap()
            .extend_classifier(&[3])
            .unwrap();
        assert_eq!(m.clone().extend_classifier(&[]).unwrap(), m);
    }

    #[test]
    fn extend_rejects_duplicates() {
        let m = reference_network(2, &[], 2, 0)
            .unwrap()
            .extend_classifier(&[1])
            .unwrap();
        assert!(matches!(
            m.clone().extend_classifier(&[1]),
            Err(Error::DuplicateClass(1))
        ));
        assert!(matches!(m.extend_classifier(&[4, 4]), Err(Error::DuplicateClass(4))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = reference_network(4, &[], 2, 0).unwrap();
        assert!(matches!(m.forward(&inputs(2, 3, 0)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn bias_toggle_adds_offsets() {
        let arch = Architecture {
            input_dim: 2,
            hidden: vec![],
            feature_dim: 2,
            classifier_bias: true,
        };
        let mut m = EmbeddingModel::new(arch, 0)
            .unwrap()
            .extend_classifier(&[0, 1])
            .unwrap();
        m.classifier_params_mut().fill(0.0);
        m.classifier_bias_mut().unwrap().copy_from_slice(&[1.5, -2.0]);
        let out = m.forward(&inputs(1, 2, 0)).unwrap();
        assert_eq!(out.logits.row(0), &[1.5, -2.0]);
    }
}
