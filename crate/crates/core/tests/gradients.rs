mod common;

use common::*;
use csd_core::losses::{objective, ComponentMask, LossWeights};
use csd_core::model::{reference_network, snapshot};
use csd_core::ForwardResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Backpropagation through the network of the full objective, checked on
/// every parameter coordinate of a small model.
#[test]
fn model_parameters_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let teacher_model = reference_network(5, &[10], 4, 3)
        .unwrap()
        .extend_classifier(&[0, 1])
        .unwrap();
    let mut model = teacher_model.clone().extend_classifier(&[2, 3]).unwrap();
    // Move away from the teacher so the stability terms have a gradient.
    model
        .repr_params_mut()
        .iter_mut()
        .for_each(|p| *p += rng.random_range(-0.1..0.1));
    model
        .classifier_params_mut()
        .iter_mut()
        .for_each(|p| *p += rng.random_range(-0.5..0.5));
    let teacher = snapshot(&teacher_model);
    let inputs = matrix(&mut rng, 8, 5, 1.0);
    let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
    let weights = LossWeights::default();
    let loss = |out: &ForwardResult| {
        let t = teacher.forward(&inputs).unwrap();
        objective(out, Some(&t), &labels, &weights, &ComponentMask::ALL, false).unwrap()
    };

    let (out, tape) = model.forward_with_tape(&inputs).unwrap();
    let obj = loss(&out);
    let grad = model.backward(&tape, &obj.grad_features, &obj.grad_logits);

    let eval = |m: &csd_core::EmbeddingModel| loss(&m.forward(&inputs).unwrap()).total;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for idx in 0..model.repr_params().len() {
        let mut probe = model.clone();
        probe.repr_params_mut()[idx] += STEP;
        let up = eval(&probe);
        probe.repr_params_mut()[idx] -= 2.0 * STEP;
        let down = eval(&probe);
        analytic.push(grad.repr[idx]);
        numeric.push((up - down) / (2.0 * STEP));
    }
    for idx in 0..model.classifier_params().len() {
        let mut probe = model.clone();
        probe.classifier_params_mut()[idx] += STEP;
        let up = eval(&probe);
        probe.classifier_params_mut()[idx] -= 2.0 * STEP;
        let down = eval(&probe);
        analytic.push(grad.classifier[idx]);
        numeric.push((up - down) / (2.0 * STEP));
    }
    assert!(analytic.len() >= 100, "only {} coordinates", analytic.len());
    let err = max_relative_error(&analytic, &numeric);
    assert!(err <= TOL, "relative error {err}");
}
