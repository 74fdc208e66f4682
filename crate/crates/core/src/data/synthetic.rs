use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Partition, Sample};
use crate::error::{Error, Result};

/// Fraction of each synthetic class held out as the test partition.
pub const HELD_OUT_FRACTION: f64 = 0.2;

/// Isotropic Gaussian blobs: class centers drawn from N(0, I), samples drawn
/// around each center with standard deviation `spread`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

fn held_out(per_class: usize) -> usize {
    if per_class < 2 {
        return 0;
    }
    ((per_class as f64 * HELD_OUT_FRACTION).round() as usize).clamp(1, per_class - 1)
}

pub fn generate_blobs(config: &BlobConfig) -> Result<Dataset> {
    if config.classes == 0 || config.per_class == 0 {
        return Err(Error::EmptyDataset);
    }
    if config.dim == 0 {
        return Err(Error::config("dataset.dim", "must be positive"));
    }
    if !(config.spread.is_finite() && config.spread >= 0.0) {
        return Err(Error::config("dataset.spread", "must be finite and nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers: Vec<Vec<f64>> = (0..config.classes)
        .map(|_| (0..config.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let test_count = held_out(config.per_class);
    let mut samples = Vec::with_capacity(config.classes * config.per_class);
    for (label, center) in centers.iter().enumerate() {
        for n in 0..config.per_class {
            let input = center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + config.spread * z
                })
                .collect();
            let partition = if n < test_count {
                Partition::Test
            } else {
                Partition::Train
            };
            samples.push(Sample::new(input, label, partition));
        }
    }
    Dataset::new(
        format!(
            "blobs-c{}-d{}-n{}-s{}",
            config.classes, config.dim, config.per_class, config.seed
        ),
        config.classes,
        vec![config.dim],
        samples,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holds_out_twenty_percent_per_class() {
        let ds = generate_blobs(&BlobConfig {
            classes: 3,
            dim: 4,
            per_class: 10,
            spread: 1.0,
            seed: 9,
        })
        .unwrap();
        for class in 0..3 {
            let test = ds
                .samples()
                .iter()
                .filter(|s| s.label == class && s.partition == Partition::Test)
                .count();
            assert_eq!(test, 2);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = BlobConfig {
            classes: 2,
            dim: 3,
            per_class: 4,
            spread: 0.3,
            seed: 5,
        };
        let a = generate_blobs(&cfg).unwrap();
        let b = generate_blobs(&cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn zero_spread_collapses_each_class() {
        let ds = generate_blobs(&BlobConfig {
            classes: 2,
            dim: 3,
            per_class: 3,
            spread: 0.0,
            seed: 0,
        })
        .unwrap();
        let s = ds.samples();
        assert_eq!(s[0].input, s[1].input);
        assert_ne!(s[0].input, s[3].input);
    }
}
