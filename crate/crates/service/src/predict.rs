use std::collections::BTreeMap;
use std::time::Instant;

use persona_core::audio::{ingest_wav, AudioError};
use persona_core::features::{FeatureError, FeatureRegistry, FeatureSource, FeatureType};
use persona_core::model::{EMOTIONS, GENDERS};
use persona_core::store::ModelFile;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOutput {
    pub label: String,
    pub probabilities: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeOutput {
    /// Rounded to one decimal.
    pub years: f64,
}

/// Body of a successful prediction. Schema: `docs/api.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub emotion: ClassOutput,
    pub gender: ClassOutput,
    pub age: AgeOutput,
    pub model_id: String,
    pub feature_type: FeatureType,
    pub inference_ms: u64,
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("missing multipart field `{0}`")]
    MissingField(&'static str),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    UnsupportedAudio(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("no model loaded")]
    NoModel,
    #[error("internal error: {0}")]
    Internal(String),
}

impl PredictError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingField(_) | Self::BadRequest(_) => "bad_request",
            Self::UnsupportedAudio(_) => "unsupported_media_type",
            Self::Unprocessable(_) => "unprocessable_entity",
            Self::NoModel => "model_unavailable",
            Self::Internal(_) => "internal",
        }
    }

    /// HTTP status for this error.
    pub fn status(&self) -> u16 {
        match self {
            Self::MissingField(_) | Self::BadRequest(_) => 400,
            Self::UnsupportedAudio(_) => 415,
            Self::Unprocessable(_) => 422,
            Self::NoModel => 503,
            Self::Internal(_) => 500,
        }
    }
}

impl From<AudioError> for PredictError {
    fn from(e: AudioError) -> Self {
        let msg = e.to_string();
        if msg.contains("convert to WAV") {
            Self::UnsupportedAudio(msg)
        } else {
            Self::UnsupportedAudio(format!("{msg}; convert to WAV (16-bit PCM) and retry"))
        }
    }
}

fn feature_error(e: FeatureError) -> PredictError {
    match e {
        FeatureError::Audio(a) => a.into(),
        FeatureError::BadMagic { .. }
        | FeatureError::UnsupportedVersion(_)
        | FeatureError::UnknownFeatureType(_)
        | FeatureError::Truncated { .. }
        | FeatureError::TrailingBytes(_) => PredictError::BadRequest(format!("embedding: {e}")),
        other => PredictError::Unprocessable(other.to_string()),
    }
}

/// A loaded model ready to serve. Immutable; shared across requests.
pub struct Predictor {
    file: ModelFile,
    source: Arc<dyn FeatureSource>,
}

impl Predictor {
    pub fn new(file: ModelFile) -> Result<Self, PredictError> {
        let ft = file.model.config().feature_type;
        let source = FeatureRegistry::builtin()
            .for_type(ft)
            .ok_or_else(|| PredictError::Internal(format!("no feature source for {ft}")))?;
        Ok(Self { file, source })
    }

    pub fn model_id(&self) -> &str {
        self.file.model_id()
    }

    pub fn feature_type(&self) -> FeatureType {
        self.file.model.config().feature_type
    }

    pub fn file(&self) -> &ModelFile {
        &self.file
    }

    /// Runs the full pipeline. Audio-consuming models need `audio`;
    /// embedding models need `embedding` and ignore `audio`.
    pub fn predict(&self, audio: Option<&[u8]>, embedding: Option<&[u8]>, name: &str) -> Result<PredictionResponse, PredictError> {
        let start = Instant::now();
        let features = if self.source.consumes_audio() {
            let bytes = audio.ok_or(PredictError::MissingField("audio"))?;
            let clip = ingest_wav(bytes, name)?;
            self.source.from_audio(&clip).map_err(feature_error)?
        } else {
            let bytes = embedding.ok_or(PredictError::MissingField("embedding"))?;
            self.source.from_embedding(bytes, name).map_err(feature_error)?
        };
        let p = self
            .file
            .model
            .predict(&features.values)
            .map_err(|e| PredictError::Unprocessable(e.to_string()))?;
        let map = |labels: &[&str], probs: &[f64]| labels.iter().map(|l| l.to_string()).zip(probs.iter().copied()).collect();
        Ok(PredictionResponse {
            emotion: ClassOutput {
                label: p.emotion.to_string(),
                probabilities: map(&EMOTIONS, &p.emotion_probs),
            },
            gender: ClassOutput {
                label: p.gender.to_string(),
                probabilities: map(&GENDERS, &p.gender_probs),
            },
            age: AgeOutput {
                years: (p.age_years * 10.0).round() / 10.0,
            },
            model_id: self.model_id().to_string(),
            feature_type: self.feature_type(),
            inference_ms: start.elapsed().as_millis() as u64,
        })
    }
}
