use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, TaskSequence, TaskSplit};
use crate::error::{Error, Result};

fn shuffled_classes(num_classes: usize, seed: u64) -> Vec<usize> {
    let mut classes: Vec<usize> = (0..num_classes).collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    classes
}

fn chunk_tasks(dataset: &Dataset, classes: &[usize], tasks: usize) -> Vec<TaskSplit> {
    let per_task = classes.len() / tasks;
    classes
        .chunks(per_task)
        .enumerate()
        .map(|(k, chunk)| TaskSplit::from_classes(dataset, k + 1, chunk.to_vec()))
        .collect()
}

/// Splits the classes of `dataset` evenly into `tasks` disjoint tasks.
///
/// Class ids are shuffled with `seed` and then cut into contiguous chunks.
/// Each sample keeps its canonical train/test membership.
pub fn split_even(dataset: &Dataset, tasks: usize, seed: u64) -> Result<TaskSequence> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = dataset.num_classes();
    if tasks == 0 || !classes.is_multiple_of(tasks) {
        return Err(Error::IndivisibleSplit { classes, tasks });
    }
    let order = shuffled_classes(classes, seed);
    Ok(TaskSequence {
        pretrain: None,
        tasks: chunk_tasks(dataset, &order, tasks),
        num_classes: classes,
        input_shape: dataset.input_shape().to_vec(),
    })
}

/// Reserves half of the (shuffled) classes for pretraining and splits the
/// other half evenly into `tasks` tasks.
pub fn split_half_pretrain(dataset: &Dataset, tasks: usize, seed: u64) -> Result<TaskSequence> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = dataset.num_classes();
    let half = classes / 2;
    if !classes.is_multiple_of(2) || tasks == 0 || !half.is_multiple_of(tasks) {
        return Err(Error::IndivisibleSplit { classes: half, tasks });
    }
    let order = shuffled_classes(classes, seed);
    let (pre, rest) = order.split_at(half);
    Ok(TaskSequence {
        pretrain: Some(TaskSplit::from_classes(dataset, 0, pre.to_vec())),
        tasks: chunk_tasks(dataset, rest, tasks),
        num_classes: classes,
        input_shape: dataset.input_shape().to_vec(),
    })
}
