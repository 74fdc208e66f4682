//! Sequential teacher-student training.
//!
//! For each stage the previous model is frozen as the teacher, the classifier
//! grows by the stage's classes, and the student is trained on that stage's
//! data alone. The first stage (pretraining, or task 1 without pretraining)
//! trains on plasticity only.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Augmentation, BatchSpec, LabeledBatch, PkSampler, Sample, TaskSequence};
use crate::error::{Error, Result};
use crate::losses::{objective, ComponentMask, LossWeights};
use crate::model::{snapshot, Architecture, EmbeddingModel, ModelSnapshot};
use crate::optim::{Adam, LearningRates};
use crate::retrieval::{RecallEvaluator, RetrievalReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Rates for the first stage.
    pub initial: LearningRates,
    /// Rates for every later stage.
    pub later: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial: LearningRates::uniform(1e-3),
            later: LearningRates::uniform(1e-5),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_per_task: usize,
    pub batch: BatchSpec,
    pub optimizer: OptimizerConfig,
    pub loss_weights: LossWeights,
    pub components: ComponentMask,
    pub augmentation: Augmentation,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classifier_bias: bool,
    pub seed: u64,
    /// Shape of one input (`[H, W, C]` enables image augmentation); empty
    /// means flat vectors.
    #[serde(default)]
    pub input_shape: Vec<usize>,
    /// Zeroes wall-clock fields so that repeated runs are bitwise identical.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_task: 1,
            batch: BatchSpec::default(),
            optimizer: OptimizerConfig::default(),
            loss_weights: LossWeights::default(),
            components: ComponentMask::ALL,
            augmentation: Augmentation::default(),
            hidden: vec![32],
            feature_dim: 8,
            classifier_bias: false,
            seed: 0,
            input_shape: Vec::new(),
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task == 0 {
            return Err(Error::config("train.epochs_per_task", "must be at least 1"));
        }
        self.batch
            .validate()
            .map_err(|e| Error::config("train.batch", e.to_string()))?;
        let lrs = [
            ("train.lr.initial", self.optimizer.initial.representation),
            ("train.lr.initial_classifier", self.optimizer.initial.classifier),
            ("train.lr.later", self.optimizer.later.representation),
            ("train.lr.later_classifier", self.optimizer.later.classifier),
        ];
        for (path, lr) in lrs {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(path, format!("learning rate must be > 0, got {lr}")));
            }
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("train.model", "layer widths must be positive"));
        }
        self.loss_weights.validate("loss")
    }

    fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            classifier_bias: self.classifier_bias,
        }
    }
}

/// Where a call to [`train_task`] sits in the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskContext {
    /// 0-based position among training stages; seeds the batch stream and
    /// picks the initial or later learning rates.
    pub stage: usize,
    /// Task index recorded in the trace (0 for pretraining).
    pub task: usize,
    /// Disables the stability term.
    pub is_first_task: bool,
}

/// Per-epoch means of every loss component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub task: usize,
    pub epoch: usize,
    pub steps: usize,
    pub total: f64,
    pub plasticity: f64,
    pub stability: f64,
    pub ce: f64,
    pub triplet: f64,
    pub kd: f64,
    pub csd: f64,
    /// Weights actually applied to KD and CSD this epoch (0 when disabled).
    pub weight_kd: f64,
    pub weight_csd: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainingTrace {
    pub fn extend(&mut self, other: TrainingTrace) {
        self.records.extend(other.records);
    }

    /// One JSON object per epoch, newline-delimited.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }

    pub fn for_stage(&self, stage: usize) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (stage as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Optimizer steps per epoch: `floor(|split| / |B|)` batches, at least one.
pub fn steps_per_epoch(split_len: usize, batch: &BatchSpec) -> usize {
    (split_len / batch.batch_size()).max(1)
}

fn batch_dump(batch: &LabeledBatch) -> String {
    format!("labels={:?} split_rows={:?}", batch.labels, batch.indices)
}

/// Trains `student` on one split for `config.epochs_per_task` epochs of
/// class-balanced mini-batches. The classifier must already cover the
/// split's classes.
pub fn train_task(
    mut student: EmbeddingModel,
    teacher: Option<&ModelSnapshot>,
    split: &[Sample],
    config: &TrainConfig,
    ctx: TaskContext,
) -> Result<(EmbeddingModel, TrainingTrace)> {
    config.validate()?;
    match (ctx.is_first_task, teacher) {
        (false, None) => return Err(Error::MissingTeacher),
        (true, Some(_)) => return Err(Error::UnexpectedTeacher),
        _ => {}
    }
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let slots = |label: usize, m: &EmbeddingModel| m.logit_slot(label);
    for s in split {
        if slots(s.label, &student).is_none() {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes: student.num_classes(),
            });
        }
    }

    let sampler = PkSampler::new(split);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, ctx.stage));
    let rates = if ctx.stage == 0 {
        config.optimizer.initial
    } else {
        config.optimizer.later
    };
    let mut opt = Adam::new(
        rates,
        config.optimizer.beta1,
        config.optimizer.beta2,
        config.optimizer.eps,
    );
    let steps = steps_per_epoch(split.len(), &config.batch);
    let mask = config.components;
    let stability_on = !ctx.is_first_task;
    let weight_kd = if stability_on && mask.kd {
        config.loss_weights.lambda_kd
    } else {
        0.0
    };
    let weight_csd = if stability_on && mask.csd {
        config.loss_weights.lambda_csd
    } else {
        0.0
    };
    let input_shape = if config.input_shape.is_empty() {
        vec![split[0].input.len()]
    } else {
        config.input_shape.clone()
    };

    let mut trace = TrainingTrace::default();
    for epoch in 0..config.epochs_per_task {
        let started = Instant::now();
        let mut sums = [0.0f64; 7];
        for step in 0..steps {
            let mut batch = sampler.sample(&config.batch, &mut rng)?;
            config
                .augmentation
                .apply_batch(&mut batch.inputs, &input_shape, &mut rng);
            // Logit slots rather than global ids index the CE targets.
            let targets: Vec<usize> = batch
                .labels
                .iter()
                .map(|&l| slots(l, &student).expect("checked above"))
                .collect();
            let (out, tape) = student.forward_with_tape(&batch.inputs)?;
            let teacher_out = teacher.map(|t| t.forward(&batch.inputs)).transpose()?;
            let obj = objective(
                &out,
                teacher_out.as_ref(),
                &targets,
                &config.loss_weights,
                &mask,
                ctx.is_first_task,
            )
            .map_err(|e| match e {
                Error::NoPositive(_) | Error::NoNegative(_) => Error::NonFiniteLoss {
                    stage: ctx.stage,
                    epoch,
                    step,
                    dump: format!("{e}; {}", batch_dump(&batch)),
                },
                other => other,
            })?;
            if !obj.total.is_finite() || !obj.grad_features.all_finite() || !obj.grad_logits.all_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: ctx.stage,
                    epoch,
                    step,
                    dump: format!("total={} parts={:?}; {}", obj.total, obj.parts, batch_dump(&batch)),
                });
            }
            let grad = student.backward(&tape, &obj.grad_features, &obj.grad_logits);
            opt.step(&mut student, &grad);
            let p = obj.parts;
            for (s, v) in sums
                .iter_mut()
                .zip([obj.total, obj.plasticity, obj.stability, p.ce, p.triplet, p.kd, p.csd])
            {
                *s += v;
            }
        }
        let mean = |i: usize| sums[i] / steps as f64;
        trace.records.push(EpochRecord {
            stage: ctx.stage,
            task: ctx.task,
            epoch,
            steps,
            total: mean(0),
            plasticity: mean(1),
            stability: mean(2),
            ce: mean(3),
            triplet: mean(4),
            kd: mean(5),
            csd: mean(6),
            weight_kd,
            weight_csd,
            wall_time_secs: if config.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        });
    }
    Ok((student, trace))
}

/// Called after every stage with the freshly trained model.
pub trait SequenceHook {
    fn on_checkpoint(
        &mut self,
        checkpoint: usize,
        label: &str,
        model: &EmbeddingModel,
        report: &RetrievalReport,
    ) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub model: EmbeddingModel,
    /// Frozen model after each stage, in order.
    pub snapshots: Vec<ModelSnapshot>,
    pub report: RetrievalReport,
    pub trace: TrainingTrace,
}

/// Trains through every stage of `seq` and evaluates all evaluation groups
/// after each one. Pass `evaluator = None` to evaluate on the stages of
/// `seq` itself.
pub fn run_sequence(
    seq: &TaskSequence,
    config: &TrainConfig,
    evaluator: Option<&RecallEvaluator>,
    hooks: &mut [&mut dyn SequenceHook],
) -> Result<SequenceOutcome> {
    config.validate()?;
    let mut config = config.clone();
    if config.input_shape.is_empty() {
        config.input_shape = seq.input_shape.clone();
    }
    let config = &config;
    let stages: Vec<_> = seq.stages().collect();
    if stages.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let default_eval;
    let evaluator = match evaluator {
        Some(e) => e,
        None => {
            default_eval = RecallEvaluator::from_sequence(seq, &[1]);
            &default_eval
        }
    };

    let mut model = EmbeddingModel::new(config.architecture(seq.input_dim()), config.seed)?;
    let mut snapshots: Vec<ModelSnapshot> = Vec::with_capacity(stages.len());
    let mut report = evaluator.empty_report();
    let mut trace = TrainingTrace::default();
    for (stage, split) in stages.iter().enumerate() {
        let teacher = (stage > 0).then(|| snapshot(&model));
        model = model.extend_classifier(&split.classes)?;
        let ctx = TaskContext {
            stage,
            task: split.task,
            is_first_task: stage == 0,
        };
        let (trained, stage_trace) = train_task(model, teacher.as_ref(), &split.train, config, ctx)?;
        model = trained;
        trace.extend(stage_trace);

        let label = format!("after {}", split.name());
        evaluator.evaluate_into(&model, &label, &mut report)?;
        for hook in hooks.iter_mut() {
            hook.on_checkpoint(stage, &label, &model, &report)?;
        }
        snapshots.push(snapshot(&model));
        log::info!("finished {label}");
    }
    Ok(SequenceOutcome {
        model,
        snapshots,
        report,
        trace,
    })
}
