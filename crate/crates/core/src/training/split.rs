use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Sample, TrainingError};
use crate::model::{Normalizer, STD_FLOOR};

/// Indices grouped by label, each group shuffled with its own seeded stream
/// and the groups concatenated in label order.
fn stratified_order(labels: &[usize], seed: u64) -> Vec<usize> {
    let n_groups = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); n_groups];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    let mut order = Vec::with_capacity(labels.len());
    for (g, mut members) in groups.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        members.shuffle(&mut rng);
        order.extend(members);
    }
    order
}

/// Splits indices `0..labels.len()` into `k` folds stratified by label.
///
/// Dealing the stratified order round-robin keeps fold sizes within one of
/// each other and every label spread as evenly as its count allows.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainingError> {
    if k < 2 || k > labels.len() {
        return Err(TrainingError::TooFewExamples { n: labels.len(), k });
    }
    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in stratified_order(labels, seed).into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Splits `labels` into (train, validation) index sets, taking roughly
/// `fraction` of each label group for validation. Both sides are nonempty.
pub fn carve_validation(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), TrainingError> {
    if labels.len() < 2 {
        return Err(TrainingError::TooFewExamples { n: labels.len(), k: 2 });
    }
    let n_val = ((labels.len() as f64 * fraction).round() as usize).clamp(1, labels.len() - 1);
    // Evenly spaced picks along the label-grouped order take each label in
    // proportion to its count.
    let order = stratified_order(labels, seed);
    let stride = labels.len() as f64 / n_val as f64;
    let mut is_val = vec![false; labels.len()];
    for j in 0..n_val {
        is_val[order[(j as f64 * stride) as usize]] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, v) in is_val.into_iter().enumerate() {
        if v { val.push(i) } else { train.push(i) }
    }
    Ok((train, val))
}

/// Per-dimension feature mean and population std plus age mean/std, both
/// std values floored at [`STD_FLOOR`].
pub fn fit_normalizers(train: &[Sample]) -> Result<Normalizer, TrainingError> {
    let first = train.first().ok_or(TrainingError::EmptyDataset)?;
    let dim = first.features.len();
    let feats: Vec<Vec<f64>> = (0..dim)
        .map(|d| train.iter().map(|s| s.features[d] as f64).collect())
        .collect();
    let (feature_mean, feature_std) = feats.iter().map(|col| mean_std(col)).unzip();
    let ages: Vec<f64> = train.iter().map(|s| s.labels.age_years).collect();
    let (age_mean, age_std) = mean_std(&ages);
    Ok(Normalizer {
        feature_mean,
        feature_std,
        age_mean,
        age_std,
    })
}

/// Shifted by the first value so a constant column has mean exactly equal
/// to that constant.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let origin = xs[0];
    let mean = origin + xs.iter().map(|x| x - origin).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::model::Labels;

    fn sample(id: usize, emotion: usize, features: Vec<f32>, age: f64) -> Sample {
        Sample {
            clip_id: format!("c{id}"),
            features,
            labels: Labels {
                emotion,
                gender: id % 2,
                age_years: age,
            },
        }
    }

    #[test]
    fn ten_into_five_folds_of_two() {
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let folds = kfold_split(&labels, 5, 7).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let union: BTreeSet<usize> = folds.iter().flatten().copied().collect();
        assert_eq!(union, (0..10).collect());
    }

    #[test]
    fn sixty_balanced_gives_two_per_emotion_per_fold() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        for seed in 0..5 {
            for fold in kfold_split(&labels, 5, seed).unwrap() {
                let mut counts = [0; 6];
                fold.iter().for_each(|&i| counts[labels[i]] += 1);
                assert_eq!(counts, [2; 6]);
            }
        }
    }

    #[test]
    fn seeds_change_assignment() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let base = kfold_split(&labels, 5, 0).unwrap();
        assert_eq!(base, kfold_split(&labels, 5, 0).unwrap());
        for seed in 1..=10 {
            assert_ne!(base, kfold_split(&labels, 5, seed).unwrap(), "seed {seed}");
        }
    }

    #[test]
    fn too_many_folds() {
        assert!(matches!(kfold_split(&[0, 1, 2], 5, 0), Err(TrainingError::TooFewExamples { n: 3, k: 5 })));
        assert!(kfold_split(&[0, 1, 2], 1, 0).is_err());
    }

    #[test]
    fn validation_carve_is_stratified() {
        let labels: Vec<usize> = (0..160).map(|i| i % 6).collect();
        let (train, val) = carve_validation(&labels, 0.1, 3).unwrap();
        assert_eq!(val.len(), 16);
        assert_eq!(train.len() + val.len(), 160);
        let mut counts = [0; 6];
        val.iter().for_each(|&i| counts[labels[i]] += 1);
        assert!(counts.iter().all(|&c| (2..=3).contains(&c)), "{counts:?}");
    }

    #[test]
    fn constant_dim_hits_floor_and_standardizes_to_zero() {
        let train: Vec<_> = (0..5).map(|i| sample(i, 0, vec![0.1, i as f32], 30.0)).collect();
        let norm = fit_normalizers(&train).unwrap();
        assert_eq!(norm.feature_std[0], STD_FLOOR);
        for s in &train {
            assert_eq!(norm.standardize(&s.features)[0], 0.0);
        }
    }

    #[test]
    fn ages_population_std() {
        let train = [sample(0, 0, vec![0.0], 20.0), sample(1, 0, vec![1.0], 40.0)];
        let norm = fit_normalizers(&train).unwrap();
        assert_eq!((norm.age_mean, norm.age_std), (30.0, 10.0));
    }

    proptest! {
        #[test]
        fn folds_partition_with_balanced_sizes(labels in prop::collection::vec(0usize..6, 5..120), k in 2usize..6, seed: u64) {
            let folds = kfold_split(&labels, k, seed).unwrap();
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        }

        #[test]
        fn standardized_train_has_zero_mean(rows in prop::collection::vec(prop::collection::vec(-50f32..50.0, 4), 2..40)) {
            let train: Vec<_> = rows.into_iter().enumerate().map(|(i, f)| sample(i, 0, f, 20.0 + i as f64)).collect();
            let norm = fit_normalizers(&train).unwrap();
            for d in 0..4 {
                let m = train.iter().map(|s| norm.standardize(&s.features)[d]).sum::<f64>() / train.len() as f64;
                prop_assert!(m.abs() < 1e-9, "dim {} mean {}", d, m);
            }
        }
    }
}
