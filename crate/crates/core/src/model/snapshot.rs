use std::sync::Arc;

use super::{EmbeddingModel, FeatureExtractor, ForwardResult};
use crate::error::Result;
use crate::matrix::Matrix;

/// Frozen, read-only copy of a model, used as the teacher. Cloning is cheap
/// and the snapshot can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    model: Arc<EmbeddingModel>,
}

pub fn snapshot(model: &EmbeddingModel) -> ModelSnapshot {
    ModelSnapshot {
        model: Arc::new(model.clone()),
    }
}

impl ModelSnapshot {
    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardResult> {
        self.model.forward(inputs)
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    pub fn checksum(&self) -> String {
        self.model.checksum()
    }
}

impl FeatureExtractor for ModelSnapshot {
    fn embed(&self, inputs: &Matrix) -> Result<Matrix> {
        self.model.embed(inputs)
    }
}
