use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schedule::{EarlyStopping, LrPlateau, StopDecision};
use super::split::{carve_validation, fit_normalizers, kfold_split};
use super::{Sample, TrainConfig, TrainingError};
use crate::features::FeatureType;
use crate::model::{EvalReport, Labels, LossWeights, ModelConfig, ModelError, MultiTaskModel, Targets};
use crate::nn::{Adam, AdamConfig};

const SHUFFLE_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Test-fold scores; accuracies in percent, RMSE in years.
    pub emotion_acc: f64,
    pub gender_acc: f64,
    pub age_rmse: f64,
    pub emotion_confusion: Vec<Vec<usize>>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_lr: f64,
    /// Scores on the training split (validation carve-out excluded).
    pub train: EvalReport,
    pub test_clip_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub emotion_acc: f64,
    pub gender_acc: f64,
    pub age_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub arch: String,
    pub feature_type: FeatureType,
    pub n_examples: usize,
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub mean: MeanScores,
    /// Fold whose model is shipped: lowest best validation loss.
    pub best_fold: usize,
}

impl CvReport {
    /// Fixed-width summary: one row per fold and the cross-fold mean.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:<6} {:>8} {:>8} {:>10}", "features", "model", "ER (%)", "GR (%)", "AE (RMSE)");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{:<14} {:<6} {:>8.2} {:>8.2} {:>10.4}",
                format!("  fold {}", f.fold + 1),
                "",
                f.emotion_acc,
                f.gender_acc,
                f.age_rmse
            );
        }
        let _ = writeln!(
            s,
            "{:<14} {:<6} {:>8.2} {:>8.2} {:>10.4}",
            self.feature_type.to_string(),
            self.arch,
            self.mean.emotion_acc,
            self.mean.gender_acc,
            self.mean.age_rmse
        );
        s
    }
}

/// Cross-validation result with every fold's trained model.
#[derive(Debug)]
pub struct CvOutcome {
    pub report: CvReport,
    pub models: Vec<MultiTaskModel>,
}

impl CvOutcome {
    pub fn best_model(&self) -> &MultiTaskModel {
        &self.models[self.report.best_fold]
    }

    pub fn into_best_model(mut self) -> MultiTaskModel {
        self.models.swap_remove(self.report.best_fold)
    }
}

fn prepare(model: &MultiTaskModel, samples: &[&Sample]) -> Vec<(Vec<f64>, Targets)> {
    let norm = model.normalizer();
    samples
        .iter()
        .map(|s| {
            let t = Targets {
                emotion: s.labels.emotion,
                gender: s.labels.gender,
                age_z: norm.age_to_z(s.labels.age_years),
            };
            (norm.standardize(&s.features), t)
        })
        .collect()
}

fn evaluate(model: &MultiTaskModel, samples: &[&Sample]) -> Result<EvalReport, ModelError> {
    let pairs: Vec<(&[f32], Labels)> = samples.iter().map(|s| (s.features.as_slice(), s.labels)).collect();
    model.evaluate(&pairs)
}

/// Trains one fresh model on `train` and scores it once on `test`.
///
/// A stratified `validation_fraction` of `train` is held out to drive early
/// stopping and learning-rate decay; normalizers are fitted on the rest.
/// The weights of the best validation epoch are restored before scoring.
pub fn train_fold(
    train: &[Sample],
    test: &[Sample],
    config: &TrainConfig,
    arch: &str,
    feature_type: FeatureType,
) -> Result<(FoldReport, MultiTaskModel), TrainingError> {
    config.validate()?;
    if test.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let mut model = MultiTaskModel::build(ModelConfig::new(arch, feature_type, config.seed))?;
    let dim = model.config().input_dim;
    if let Some(s) = train.iter().chain(test).find(|s| s.features.len() != dim) {
        return Err(ModelError::InputDim {
            expected: dim,
            found: s.features.len(),
        }
        .into());
    }

    let labels: Vec<usize> = train.iter().map(|s| s.labels.emotion).collect();
    let (tr_idx, val_idx) = carve_validation(&labels, config.validation_fraction, config.seed ^ VALIDATION_STREAM)?;
    let tr: Vec<&Sample> = tr_idx.iter().map(|&i| &train[i]).collect();
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &train[i]).collect();

    let fit_set: Vec<Sample> = tr.iter().map(|&s| s.clone()).collect();
    model.set_normalizer(fit_normalizers(&fit_set)?)?;
    let train_x = prepare(&model, &tr);
    let val_x = prepare(&model, &val);
    let val_batch: Vec<(&[f64], Targets)> = val_x.iter().map(|(x, t)| (x.as_slice(), *t)).collect();

    let weights = LossWeights::default();
    let mut adam = Adam::new(model.params(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience_early, config.min_delta);
    let mut plateau = LrPlateau::new(config.lr_decay_factor, config.lr_decay_patience, config.lr_floor, config.min_delta);
    let mut lr = config.lr;
    let mut best_params = model.params().to_vec();
    let mut epochs_run = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let batch: Vec<(&[f64], Targets)> = chunk.iter().map(|&i| (train_x[i].0.as_slice(), train_x[i].1)).collect();
            model.train_step(&mut adam, &batch, lr, &weights)?;
        }
        epochs_run += 1;
        let val_loss = model.batch_loss(&val_batch, &weights)?.total;
        if !val_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(val_loss).into());
        }
        lr = plateau.update(val_loss, lr);
        match stopper.update(val_loss) {
            StopDecision::Continue { improved: true } => best_params.clone_from_slice(model.params()),
            StopDecision::Continue { improved: false } => {}
            StopDecision::Stop { .. } => break,
        }
    }
    model.params_mut().clone_from_slice(&best_params);

    let test_refs: Vec<&Sample> = test.iter().collect();
    let test_eval = evaluate(&model, &test_refs)?;
    let report = FoldReport {
        fold: 0,
        seed: config.seed,
        n_train: tr.len(),
        n_val: val.len(),
        n_test: test.len(),
        emotion_acc: test_eval.emotion_acc,
        gender_acc: test_eval.gender_acc,
        age_rmse: test_eval.age_rmse,
        emotion_confusion: test_eval.emotion_confusion,
        epochs_run,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        final_lr: lr,
        train: evaluate(&model, &tr)?,
        test_clip_ids: test.iter().map(|s| s.clip_id.clone()).collect(),
    };
    Ok((report, model))
}

/// Seed of fold `k`, decorrelated from the base seed and its neighbours.
pub(crate) fn fold_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Stratified k-fold cross-validation. Folds train in parallel, each from a
/// fresh initialization, and every example is tested exactly once.
pub fn run_cross_validation(
    samples: &[Sample],
    config: &TrainConfig,
    arch: &str,
    feature_type: FeatureType,
) -> Result<CvOutcome, TrainingError> {
    config.validate()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.labels.emotion).collect();
    let folds = kfold_split(&labels, config.folds, config.seed)?;

    let mut seen = vec![false; samples.len()];
    for &i in folds.iter().flatten() {
        assert!(!seen[i], "example {i} lands in two test folds");
        seen[i] = true;
    }
    assert!(seen.iter().all(|&s| s), "some example is never tested");

    let results = folds
        .par_iter()
        .enumerate()
        .map(|(k, test_idx)| {
            let in_test: HashSet<usize> = test_idx.iter().copied().collect();
            let (test, train): (Vec<(usize, &Sample)>, Vec<_>) =
                samples.iter().enumerate().partition(|(i, _)| in_test.contains(i));
            let test: Vec<Sample> = test.into_iter().map(|(_, s)| s.clone()).collect();
            let train: Vec<Sample> = train.into_iter().map(|(_, s)| s.clone()).collect();
            let fold_config = TrainConfig {
                seed: fold_seed(config.seed, k),
                ..config.clone()
            };
            let (mut report, model) = train_fold(&train, &test, &fold_config, arch, feature_type)?;
            report.fold = k;
            Ok((report, model))
        })
        .collect::<Result<Vec<_>, TrainingError>>()?;

    let (folds, models): (Vec<FoldReport>, Vec<MultiTaskModel>) = results.into_iter().unzip();
    let n = folds.len() as f64;
    let mean = MeanScores {
        emotion_acc: folds.iter().map(|f| f.emotion_acc).sum::<f64>() / n,
        gender_acc: folds.iter().map(|f| f.gender_acc).sum::<f64>() / n,
        age_rmse: folds.iter().map(|f| f.age_rmse).sum::<f64>() / n,
    };
    let best_fold = folds
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_val_loss.total_cmp(&b.1.best_val_loss))
        .map(|(k, _)| k)
        .unwrap_or(0);
    Ok(CvOutcome {
        report: CvReport {
            arch: arch.to_string(),
            feature_type,
            n_examples: samples.len(),
            config: config.clone(),
            folds,
            mean,
            best_fold,
        },
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::synthetic::clustered_dataset;

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn epochs_run_within_budget_and_deterministic() {
        let data = clustered_dataset(60, 1);
        let (a, _) = train_fold(&data[..48], &data[48..], &quick(), "fcn", FeatureType::Mfcc).unwrap();
        let (b, _) = train_fold(&data[..48], &data[48..], &quick(), "fcn", FeatureType::Mfcc).unwrap();
        assert!(a.epochs_run <= 3);
        assert_eq!(a, b);
        assert_eq!(a.n_train + a.n_val, 48);
    }

    #[test]
    fn cv_tests_every_example_once_and_means_folds() {
        let data = clustered_dataset(60, 2);
        let out = run_cross_validation(&data, &quick(), "fcn", FeatureType::Mfcc).unwrap();
        let mut tested: Vec<&String> = out.report.folds.iter().flat_map(|f| &f.test_clip_ids).collect();
        tested.sort();
        let mut all: Vec<&String> = data.iter().map(|s| &s.clip_id).collect();
        all.sort();
        assert_eq!(tested, all);
        let m = out.report.folds.iter().map(|f| f.gender_acc).sum::<f64>() / 5.0;
        assert!((out.report.mean.gender_acc - m).abs() < 1e-9);
        assert_eq!(out.models.len(), 5);
        assert!(out.report.table().lines().count() == 7);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let mut data = clustered_dataset(20, 3);
        data[4].features.pop();
        assert!(matches!(
            train_fold(&data[..15], &data[15..], &quick(), "fcn", FeatureType::Mfcc),
            Err(TrainingError::Model(ModelError::InputDim { .. }))
        ));
    }
}
