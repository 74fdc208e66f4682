use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{stack_inputs, Sample};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// P classes times K samples per class. K >= 2 guarantees every sample at
/// least one in-batch positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl BatchSpec {
    pub fn new(classes_per_batch: usize, samples_per_class: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            classes_per_batch,
            samples_per_class,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes_per_batch == 0 {
            return Err(Error::InvalidBatchSpec("classes_per_batch must be positive".into()));
        }
        if self.samples_per_class < 2 {
            return Err(Error::InvalidBatchSpec(format!(
                "samples_per_class must be at least 2, got {}",
                self.samples_per_class
            )));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.classes_per_batch * self.samples_per_class
    }
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            classes_per_batch: 8,
            samples_per_class: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    /// Position of each batch row in the split it was drawn from.
    pub indices: Vec<usize>,
}

impl LabeledBatch {
    pub fn from_samples(samples: &[Sample]) -> Self {
        Self {
            inputs: stack_inputs(samples),
            labels: samples.iter().map(|s| s.label).collect(),
            indices: (0..samples.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Class-balanced sampler over one training split. The per-class index is
/// built once; every draw is a pure function of the rng state.
#[derive(Debug, Clone)]
pub struct PkSampler<'a> {
    split: &'a [Sample],
    by_class: Vec<(usize, Vec<usize>)>,
}

impl<'a> PkSampler<'a> {
    pub fn new(split: &'a [Sample]) -> Self {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in split.iter().enumerate() {
            map.entry(s.label).or_default().push(i);
        }
        Self {
            split,
            by_class: map.into_iter().collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    /// Draws P distinct classes, then K samples of each. Classes with fewer
    /// than K samples are drawn with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, spec: &BatchSpec, rng: &mut R) -> Result<LabeledBatch> {
        spec.validate()?;
        let (p, k) = (spec.classes_per_batch, spec.samples_per_class);
        if self.by_class.len() < p {
            return Err(Error::InsufficientClasses {
                available: self.by_class.len(),
                required: p,
            });
        }
        let mut indices = Vec::with_capacity(p * k);
        for class_pos in index::sample(rng, self.by_class.len(), p) {
            let members = &self.by_class[class_pos].1;
            if members.len() >= k {
                indices.extend(index::sample(rng, members.len(), k).into_iter().map(|j| members[j]));
            } else {
                indices.extend((0..k).map(|_| members[rng.random_range(0..members.len())]));
            }
        }
        let rows: Vec<&Sample> = indices.iter().map(|&i| &self.split[i]).collect();
        Ok(LabeledBatch {
            inputs: stack_inputs(rows.iter().copied()),
            labels: rows.iter().map(|s| s.label).collect(),
            indices,
        })
    }
}

/// One-shot convenience wrapper around [`PkSampler`].
pub fn sample_pk_batch<R: Rng + ?Sized>(split: &[Sample], spec: &BatchSpec, rng: &mut R) -> Result<LabeledBatch> {
    PkSampler::new(split).sample(spec, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Partition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn split(classes: usize, per_class: usize) -> Vec<Sample> {
        (0..classes * per_class)
            .map(|i| Sample::new(vec![i as f64], i % classes, Partition::Train))
            .collect()
    }

    fn counts(labels: &[usize]) -> HashMap<usize, usize> {
        let mut m = HashMap::new();
        for &l in labels {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn two_by_two_on_two_classes() {
        let data = split(2, 5);
        let spec = BatchSpec::new(2, 2, 0).unwrap();
        let batch = sample_pk_batch(&data, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(batch.len(), 4);
        let c = counts(&batch.labels);
        assert_eq!(c.len(), 2);
        assert!(c.values().all(|&n| n == 2));
    }

    #[test]
    fn single_class_batch_gives_three_positives_each() {
        let data = split(3, 6);
        let spec = BatchSpec::new(1, 4, 0).unwrap();
        let batch = sample_pk_batch(&data, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for &l in &batch.labels {
            let positives = batch.labels.iter().filter(|&&m| m == l).count() - 1;
            assert_eq!(positives, 3);
        }
    }

    #[test]
    fn replay_with_same_rng_state() {
        let data = split(6, 5);
        let spec = BatchSpec::new(4, 2, 0).unwrap();
        let a = sample_pk_batch(&data, &spec, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_pk_batch(&data, &spec, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_classes_sampled_with_replacement() {
        let data = split(2, 1);
        let spec = BatchSpec::new(2, 3, 0).unwrap();
        let batch = sample_pk_batch(&data, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(batch.len(), 6);
        assert!(counts(&batch.labels).values().all(|&n| n == 3));
    }

    #[test]
    fn too_few_classes() {
        let data = split(2, 4);
        let spec = BatchSpec::new(3, 2, 0).unwrap();
        assert!(matches!(
            sample_pk_batch(&data, &spec, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InsufficientClasses {
                available: 2,
                required: 3
            })
        ));
    }

    #[test]
    fn rejects_k_below_two() {
        assert!(BatchSpec::new(2, 1, 0).is_err());
        assert!(BatchSpec::new(0, 2, 0).is_err());
    }
}
