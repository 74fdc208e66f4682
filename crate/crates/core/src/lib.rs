//! Continual representation learning with contrastive supervised distillation.
//!
//! A model is trained on a sequence of tasks with disjoint classes. While
//! learning each new task, the frozen model from before the update acts as a
//! teacher: knowledge distillation keeps the old class posteriors, and
//! contrastive supervised distillation (CSD) pulls the student's features
//! towards same-class teacher features while pushing other classes away.
//! Quality is measured as cosine-retrieval Recall@K on every task.
//!
//! Modules:
//! * [`data`]: datasets, class-incremental splits, PK batch sampling
//! * [`model`]: the representation network with a growing classifier
//! * [`losses`]: CE, triplet, KD and CSD kernels and their combinations
//! * [`trainer`]: the teacher-student training loop
//! * [`retrieval`]: cosine nearest neighbours, Recall@K, forgetting curves
//! * [`harness`]: experiment configs, runners, ablations and plot data

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod retrieval;
pub mod trainer;

pub use data::{Dataset, Sample, TaskSequence};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, RunRecord};
pub use losses::{ComponentMask, LossWeights};
pub use matrix::Matrix;
pub use model::{EmbeddingModel, ForwardResult, ModelSnapshot};
pub use retrieval::RetrievalReport;
pub use trainer::{TrainConfig, TrainingTrace};
