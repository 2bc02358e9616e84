//! Clustered toy data with a known labelling function, for checking that the
//! training loop can fit what it is given.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;
use crate::features::FeatureType;
use crate::model::Labels;

pub const CLUSTERS: usize = 12;
pub const FEATURE_NOISE: f64 = 0.1;
pub const AGE_NOISE: f64 = 1.0;

/// Emotion, gender and mean age of cluster `c`.
pub fn cluster_labels(c: usize) -> (usize, usize, f64) {
    (c % 6, c / 6, 22.0 + 3.0 * c as f64)
}

/// `n` MFCC-sized samples spread round-robin over [`CLUSTERS`] centres drawn
/// uniformly from [-1, 1]^40. Ages get Gaussian noise of [`AGE_NOISE`] years.
pub fn clustered_dataset(n: usize, seed: u64) -> Vec<Sample> {
    let dim = FeatureType::Mfcc.expected_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..CLUSTERS)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let feature_noise = Normal::new(0.0, FEATURE_NOISE).expect("valid sigma");
    let age_noise = Normal::new(0.0, AGE_NOISE).expect("valid sigma");
    (0..n)
        .map(|i| {
            let c = i % CLUSTERS;
            let (emotion, gender, age) = cluster_labels(c);
            Sample {
                clip_id: format!("syn{i:04}"),
                features: centres[c].iter().map(|m| (m + feature_noise.sample(&mut rng)) as f32).collect(),
                labels: Labels {
                    emotion,
                    gender,
                    age_years: age + age_noise.sample(&mut rng),
                },
            }
        })
        .collect()
}
