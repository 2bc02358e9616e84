//! Cross-validation protocol: manifests, stratified folds, normalizer
//! fitting, early stopping, learning-rate decay and per-fold training.

mod harness;
mod manifest;
mod schedule;
mod split;
pub mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;
use crate::model::{Labels, ModelError};

pub use harness::{run_cross_validation, train_fold, CvOutcome, CvReport, FoldReport, MeanScores};
pub use manifest::{load_manifest, parse_manifest, resolve_features, LabeledExample, MANIFEST_COLUMNS};
pub use schedule::{EarlyStopping, LrPlateau, StopDecision};
pub use split::{carve_validation, fit_normalizers, kfold_split};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("{detail}, row {row}")]
    InvalidRow { row: usize, detail: String },
    #[error("duplicate clip_id `{clip_id}`, row {row}")]
    DuplicateClip { clip_id: String, row: usize },
    #[error("cannot split {n} examples into {k} folds")]
    TooFewExamples { n: usize, k: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("features unresolvable for {} clip(s): {}; first error: {detail}", clip_ids.len(), clip_ids.join(", "))]
    Unresolvable { clip_ids: Vec<String>, detail: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// A labelled utterance with its feature vector resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub features: Vec<f32>,
    pub labels: Labels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub folds: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub patience_early: usize,
    pub min_delta: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_patience: usize,
    pub lr_floor: f64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            epochs: 20,
            lr: 1e-3,
            batch: 32,
            seed: 0,
            patience_early: 5,
            min_delta: 1e-4,
            lr_decay_factor: 0.5,
            lr_decay_patience: 3,
            lr_floor: 1e-5,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad("validation_fraction must lie in (0, 0.5)");
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr) {
            return bad("lr_floor must lie in (0, lr]");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must lie in (0, 1)");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn config_bounds() {
        for c in [
            TrainConfig { folds: 1, ..Default::default() },
            TrainConfig { validation_fraction: 0.5, ..Default::default() },
            TrainConfig { validation_fraction: 0.0, ..Default::default() },
            TrainConfig { lr_floor: 1e-2, ..Default::default() },
            TrainConfig { batch: 0, ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
