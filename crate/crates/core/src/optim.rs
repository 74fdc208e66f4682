//! Adam with separate learning rates for the representation and the classifier.

use serde::{Deserialize, Serialize};

use crate::model::{EmbeddingModel, ModelGradient};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub representation: f64,
    pub classifier: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            representation: lr,
            classifier: lr,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    rates: LearningRates,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(rates: LearningRates, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            rates,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step as usize
    }

    /// Applies one update. Moment buffers are sized lazily on the first step.
    pub fn step(&mut self, model: &mut EmbeddingModel, grad: &ModelGradient) {
        let n_repr = grad.repr.len();
        let n_cls = grad.classifier.len();
        let n_bias = grad.classifier_bias.as_ref().map_or(0, Vec::len);
        let total = n_repr + n_cls + n_bias;
        if self.m.len() != total {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);

        let mut update = |offset: usize, params: &mut [f64], grads: &[f64], lr: f64| {
            let m = &mut self.m[offset..offset + grads.len()];
            let v = &mut self.v[offset..offset + grads.len()];
            for (((p, g), mi), vi) in params.iter_mut().zip(grads).zip(m).zip(v) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        };
        update(0, model.repr_params_mut(), &grad.repr, self.rates.representation);
        update(
            n_repr,
            model.classifier_params_mut(),
            &grad.classifier,
            self.rates.classifier,
        );
        if let (Some(bias), Some(g)) = (model.classifier_bias_mut(), &grad.classifier_bias) {
            update(n_repr + n_cls, bias, g, self.rates.classifier);
        }
    }
}
