//! Datasets, class-incremental task splits and class-balanced batch sampling.

mod augment;
mod loader;
mod sampler;
mod split;
mod synthetic;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use augment::Augmentation;
pub use loader::{load_manifest, write_table, Manifest, StorageFormat};
pub use sampler::{sample_pk_batch, BatchSpec, LabeledBatch, PkSampler};
pub use split::{split_even, split_half_pretrain};
pub use synthetic::{generate_blobs, BlobConfig};

/// Canonical train/test membership of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

/// One datum: a flattened input, its class label and the task it belongs to.
///
/// `task` is 1-based once the sample is assigned to a task; 0 marks samples
/// that are unassigned or belong to the pretraining split.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Arc<[f64]>,
    pub label: usize,
    pub task: usize,
    pub partition: Partition,
}

impl Sample {
    pub fn new(input: Vec<f64>, label: usize, partition: Partition) -> Self {
        Self {
            input: input.into(),
            label,
            task: 0,
            partition,
        }
    }

    fn with_task(&self, task: usize) -> Self {
        Self { task, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    num_classes: usize,
    input_shape: Vec<usize>,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Validates that the dataset is nonempty, every label is below
    /// `num_classes`, every class occurs, and all inputs share `input_shape`.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        input_shape: Vec<usize>,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        if samples.is_empty() || num_classes == 0 {
            return Err(Error::EmptyDataset);
        }
        let input_len: usize = input_shape.iter().product();
        if input_len == 0 {
            return Err(Error::config("dataset.shape", "input shape must be nonempty"));
        }
        let mut seen = vec![false; num_classes];
        for (i, s) in samples.iter().enumerate() {
            if s.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: num_classes,
                });
            }
            if s.input.len() != input_len {
                return Err(Error::ShapeMismatch {
                    expected: format!("input of {input_len} values"),
                    actual: format!("sample {i} with {} values", s.input.len()),
                });
            }
            seen[s.label] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::parse("dataset", format!("class {missing} has no samples")));
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            input_shape,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The training and test samples of one stage of the sequence.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    /// 1-based task index, or 0 for the pretraining split.
    pub task: usize,
    pub classes: Vec<usize>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskSplit {
    fn from_classes(dataset: &Dataset, task: usize, mut classes: Vec<usize>) -> Self {
        classes.sort_unstable();
        let members: BTreeSet<usize> = classes.iter().copied().collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for s in dataset.samples().iter().filter(|s| members.contains(&s.label)) {
            match s.partition {
                Partition::Train => train.push(s.with_task(task)),
                Partition::Test => test.push(s.with_task(task)),
            }
        }
        Self {
            task,
            classes,
            train,
            test,
        }
    }

    pub fn name(&self) -> String {
        if self.task == 0 {
            "pretrain".to_string()
        } else {
            format!("task{}", self.task)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub pretrain: Option<TaskSplit>,
    pub tasks: Vec<TaskSplit>,
    pub num_classes: usize,
    pub input_shape: Vec<usize>,
}

impl TaskSequence {
    /// Per-task global class ids, in task order (pretraining split excluded).
    pub fn class_map(&self) -> Vec<Vec<usize>> {
        self.tasks.iter().map(|t| t.classes.clone()).collect()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Training stages in order: the pretraining split first, if any.
    pub fn stages(&self) -> impl Iterator<Item = &TaskSplit> {
        self.pretrain.iter().chain(self.tasks.iter())
    }

    /// Collapses every stage into a single task, the non-continual upper bound.
    pub fn joint(&self) -> TaskSequence {
        let mut merged = TaskSplit {
            task: 1,
            classes: Vec::new(),
            train: Vec::new(),
            test: Vec::new(),
        };
        for stage in self.stages() {
            merged.classes.extend_from_slice(&stage.classes);
            merged.train.extend(stage.train.iter().map(|s| s.with_task(1)));
            merged.test.extend(stage.test.iter().map(|s| s.with_task(1)));
        }
        merged.classes.sort_unstable();
        TaskSequence {
            pretrain: None,
            tasks: vec![merged],
            num_classes: self.num_classes,
            input_shape: self.input_shape.clone(),
        }
    }
}

/// Stacks sample inputs into a batch-major matrix.
pub fn stack_inputs<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Matrix {
    let samples: Vec<&Sample> = samples.into_iter().collect();
    let cols = samples.first().map_or(0, |s| s.input.len());
    let mut data = Vec::with_capacity(samples.len() * cols);
    for s in &samples {
        data.extend_from_slice(&s.input);
    }
    Matrix::from_vec(samples.len(), cols, data).expect("inputs share one shape")
}
