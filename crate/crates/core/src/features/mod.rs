//! Utterance-level feature vectors: the MFCC baseline computed from audio,
//! and externally produced speaker / self-supervised embeddings read from disk.

mod embedding;
pub mod mfcc;
mod registry;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{
    decode_pers, encode_pers, load_embedding, read_embedding_csv, read_embedding_file, write_embedding_csv,
    write_embedding_file, PERS_MAGIC, PERS_VERSION,
};
pub use mfcc::{MfccConfig, MfccExtractor};
pub use registry::{EmbeddingSource, FeatureRegistry, FeatureSource, MfccSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureType {
    Mfcc,
    Xvector,
    Wavlm,
}

impl FeatureType {
    pub const ALL: [FeatureType; 3] = [FeatureType::Mfcc, FeatureType::Xvector, FeatureType::Wavlm];

    pub fn expected_dim(self) -> usize {
        match self {
            FeatureType::Mfcc => 40,
            FeatureType::Xvector => 512,
            FeatureType::Wavlm => 768,
        }
    }

    /// Type code used in PERS files.
    pub fn code(self) -> u8 {
        match self {
            FeatureType::Mfcc => 0,
            FeatureType::Xvector => 1,
            FeatureType::Wavlm => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, FeatureError> {
        match code {
            0 => Ok(FeatureType::Mfcc),
            1 => Ok(FeatureType::Xvector),
            2 => Ok(FeatureType::Wavlm),
            other => Err(FeatureError::UnknownFeatureType(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureType::Mfcc => "mfcc",
            FeatureType::Xvector => "xvector",
            FeatureType::Wavlm => "wavlm",
        }
    }
}

impl fmt::Display for FeatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureType {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mfcc" => Ok(FeatureType::Mfcc),
            "xvector" | "x-vector" => Ok(FeatureType::Xvector),
            "wavlm" => Ok(FeatureType::Wavlm),
            _ => Err(FeatureError::UnknownFeatureName(s.to_string())),
        }
    }
}

/// A fixed-length utterance representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub feature_type: FeatureType,
    pub clip_id: String,
}

impl FeatureVector {
    /// Builds a vector after checking its length and finiteness.
    pub fn new(values: Vec<f32>, feature_type: FeatureType, clip_id: impl Into<String>) -> Result<Self, FeatureError> {
        let expected = feature_type.expected_dim();
        if values.len() != expected {
            return Err(FeatureError::DimMismatch {
                feature_type,
                expected,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { index });
        }
        Ok(Self {
            values,
            feature_type,
            clip_id: clip_id.into(),
        })
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid MFCC configuration: {0}")]
    InvalidConfig(String),
    #[error("empty signal")]
    EmptySignal,
    #[error("expected {expected} Hz audio, got {found} Hz")]
    SampleRate { expected: u32, found: u32 },
    #[error("bad magic {found:?}, expected \"PERS\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported PERS version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown feature type code {0}")]
    UnknownFeatureType(u8),
    #[error("unknown feature type '{0}' (expected mfcc, xvector or wavlm)")]
    UnknownFeatureName(String),
    #[error("{feature_type} vectors have {expected} dimensions, found {found}")]
    DimMismatch {
        feature_type: FeatureType,
        expected: usize,
        found: usize,
    },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("malformed CSV embedding: {0}")]
    Csv(String),
    #[error("feature source '{source_name}' needs {needs}")]
    MissingInput { source_name: &'static str, needs: &'static str },
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FeatureError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            FeatureError::InvalidConfig(_) => "invalid_config",
            FeatureError::EmptySignal => "empty_signal",
            FeatureError::SampleRate { .. } => "sample_rate",
            FeatureError::BadMagic { .. } => "bad_magic",
            FeatureError::UnsupportedVersion(_) => "version_mismatch",
            FeatureError::UnknownFeatureType(_) => "unknown_feature_type",
            FeatureError::UnknownFeatureName(_) => "unknown_feature_name",
            FeatureError::DimMismatch { .. } => "dim_mismatch",
            FeatureError::Truncated { .. } => "truncated",
            FeatureError::TrailingBytes(_) => "trailing_bytes",
            FeatureError::NonFinite { .. } => "non_finite",
            FeatureError::Csv(_) => "csv",
            FeatureError::MissingInput { .. } => "missing_input",
            FeatureError::Audio(_) => "audio",
            FeatureError::Io(_) => "io",
        }
    }
}
