//! The `PERSMODL` model file.
//!
//! ```text
//! "PERSMODL" | u32 LE version | u32 LE header_len | JSON header | f64 LE payload
//! ```
//!
//! The header lists every tensor by name and shape, including the feature
//! and age normalizer statistics, and the payload holds them back to back in
//! that order. Shapes always come from the header, never from the payload
//! length.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{param_layout, ModelConfig, ModelError, MultiTaskModel, Normalizer, EMOTIONS, GENDERS};
use crate::nn::Tensor;
use crate::training::{MeanScores, TrainConfig};

pub const MAGIC: &[u8; 8] = b"PERSMODL";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

const FEATURE_MEAN: &str = "normalizer.feature_mean";
const FEATURE_STD: &str = "normalizer.feature_std";
/// `[age_mean, age_std]`.
const AGE_STATS: &str = "normalizer.age";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not a model file (magic bytes {found:?})")]
    BadMagic { found: Vec<u8> },
    #[error("model format version {found} is not supported (this build reads version {FORMAT_VERSION}); upgrade persona")]
    UnsupportedVersion { found: u32 },
    #[error("model file truncated in {section}: needs {needed} bytes, has {available}")]
    Truncated {
        section: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("payload is {actual} bytes but the header declares {declared}")]
    SizeMismatch { declared: usize, actual: usize },
    #[error("model header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("model header: {0}")]
    Layout(String),
    #[error("config hash {stored} does not match recomputed {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub emotion: Vec<String>,
    pub gender: Vec<String>,
}

impl Vocabularies {
    fn builtin() -> Self {
        Self {
            emotion: EMOTIONS.iter().map(|s| s.to_string()).collect(),
            gender: GENDERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    /// Cross-validation means of the run that produced the model.
    pub metrics: Option<MeanScores>,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub vocabularies: Vocabularies,
    pub tensors: Vec<TensorEntry>,
    pub provenance: Provenance,
}

/// A model plus the metadata stored alongside it.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub model: MultiTaskModel,
    pub provenance: Provenance,
}

/// Hex SHA-256 of the model config's JSON form; doubles as the model id.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

fn directory(config: &ModelConfig) -> Result<Vec<TensorEntry>, ModelError> {
    let mut entries: Vec<TensorEntry> = param_layout(config)?
        .into_iter()
        .map(|s| TensorEntry {
            name: s.name,
            shape: s.shape,
        })
        .collect();
    for (name, shape) in [
        (FEATURE_MEAN, vec![config.input_dim]),
        (FEATURE_STD, vec![config.input_dim]),
        (AGE_STATS, vec![2]),
    ] {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape,
        });
    }
    Ok(entries)
}

impl ModelFile {
    pub fn new(model: MultiTaskModel, metrics: Option<MeanScores>, train_config: Option<TrainConfig>) -> Self {
        let provenance = Provenance {
            seed: model.config().seed,
            config_hash: config_hash(model.config()),
            metrics,
            train_config,
        };
        Self { model, provenance }
    }

    pub fn model_id(&self) -> &str {
        &self.provenance.config_hash
    }

    pub fn encode(&self) -> Result<Vec<u8>, StoreError> {
        let config = self.model.config();
        let header = Header {
            config: config.clone(),
            vocabularies: Vocabularies::builtin(),
            tensors: directory(config)?,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let norm = self.model.normalizer();
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 8 * (self.model.parameter_count() + 2 * config.input_dim + 2));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let values = self
            .model
            .params()
            .iter()
            .flat_map(|t| t.data().iter())
            .chain(&norm.feature_mean)
            .chain(&norm.feature_std)
            .chain([&norm.age_mean, &norm.age_std]);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StoreError> {
        let head = &bytes[..bytes.len().min(8)];
        if head != &MAGIC[..head.len()] {
            return Err(StoreError::BadMagic { found: head.to_vec() });
        }
        if bytes.len() < PREAMBLE {
            return Err(StoreError::Truncated {
                section: "preamble",
                needed: PREAMBLE,
                available: bytes.len(),
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion { found: version });
        }
        let header_end = PREAMBLE + word(12) as usize;
        if bytes.len() < header_end {
            return Err(StoreError::Truncated {
                section: "header",
                needed: header_end,
                available: bytes.len(),
            });
        }
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])?;
        if header.vocabularies != Vocabularies::builtin() {
            return Err(StoreError::Layout(format!("unexpected label vocabularies {:?}", header.vocabularies)));
        }
        let computed = config_hash(&header.config);
        if computed != header.provenance.config_hash {
            return Err(StoreError::HashMismatch {
                stored: header.provenance.config_hash,
                computed,
            });
        }
        let expected = directory(&header.config)?;
        if header.tensors != expected {
            return Err(StoreError::Layout("tensor directory does not match the declared architecture".into()));
        }

        let declared = header.tensors.iter().map(TensorEntry::len).sum::<usize>() * 8;
        let payload = &bytes[header_end..];
        if payload.len() < declared {
            return Err(StoreError::Truncated {
                section: "payload",
                needed: header_end + declared,
                available: bytes.len(),
            });
        }
        if payload.len() != declared {
            return Err(StoreError::SizeMismatch {
                declared,
                actual: payload.len(),
            });
        }

        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |entry: &TensorEntry| values.by_ref().take(entry.len()).collect::<Vec<f64>>();
        let n_params = header.tensors.len() - 3;
        let params = header.tensors[..n_params]
            .iter()
            .map(|e| Tensor::from_vec(&e.shape, take(e)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(ModelError::from)?;
        let feature_mean = take(&header.tensors[n_params]);
        let feature_std = take(&header.tensors[n_params + 1]);
        let age = take(&header.tensors[n_params + 2]);
        let normalizer = Normalizer {
            feature_mean,
            feature_std,
            age_mean: age[0],
            age_std: age[1],
        };
        let model = MultiTaskModel::from_parts(header.config, params, normalizer)?;
        Ok(Self {
            model,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

/// Reads the header without touching the payload.
pub fn read_header(bytes: &[u8]) -> Result<Header, StoreError> {
    if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
        return Err(StoreError::BadMagic {
            found: bytes[..bytes.len().min(8)].to_vec(),
        });
    }
    let end = PREAMBLE + u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(PREAMBLE..end).ok_or(StoreError::Truncated {
        section: "header",
        needed: end,
        available: bytes.len(),
    })?;
    Ok(serde_json::from_slice(json)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureType;

    fn file(arch: &str, ft: FeatureType) -> ModelFile {
        let mut model = MultiTaskModel::build(ModelConfig::new(arch, ft, 3)).unwrap();
        let dim = ft.expected_dim();
        model
            .set_normalizer(Normalizer {
                feature_mean: (0..dim).map(|i| i as f64 * 0.1).collect(),
                feature_std: (0..dim).map(|i| 1.0 + i as f64 / 7.0).collect(),
                age_mean: 37.25,
                age_std: 11.5,
            })
            .unwrap();
        let metrics = MeanScores {
            emotion_acc: 61.0,
            gender_acc: 97.5,
            age_rmse: 8.1,
        };
        ModelFile::new(model, Some(metrics), Some(TrainConfig::default()))
    }

    #[test]
    fn preamble_layout() {
        let bytes = file("fcn", FeatureType::Mfcc).encode().unwrap();
        assert_eq!(&bytes[..8], b"PERSMODL");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        let header = read_header(&bytes).unwrap();
        let n: usize = header.tensors.iter().map(TensorEntry::len).sum();
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + header_len + 8 * n);
        assert_eq!(header.tensors.last().unwrap().name, "normalizer.age");
    }

    #[test]
    fn round_trip_is_exact_and_canonical() {
        let f = file("cnn", FeatureType::Mfcc);
        let bytes = f.encode().unwrap();
        let back = ModelFile::decode(&bytes).unwrap();
        assert_eq!(back.model.params(), f.model.params());
        assert_eq!(back.model.normalizer(), f.model.normalizer());
        assert_eq!(back.provenance, f.provenance);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn distinct_rejections() {
        let bytes = file("fcn", FeatureType::Mfcc).encode().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelFile::decode(&bad), Err(StoreError::BadMagic { .. })));

        let mut v2 = bytes.clone();
        v2[8] = 2;
        let err = ModelFile::decode(&v2).unwrap_err();
        assert!(matches!(err, StoreError::UnsupportedVersion { found: 2 }));
        assert!(err.to_string().contains("upgrade"));

        let cut = &bytes[..bytes.len() - 100];
        assert!(matches!(ModelFile::decode(cut), Err(StoreError::Truncated { section: "payload", .. })));
        assert!(matches!(ModelFile::decode(&bytes[..40]), Err(StoreError::Truncated { section: "header", .. })));
        assert!(matches!(ModelFile::decode(&bytes[..10]), Err(StoreError::Truncated { section: "preamble", .. })));

        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(matches!(ModelFile::decode(&long), Err(StoreError::SizeMismatch { .. })));
    }

    #[test]
    fn tampered_config_is_caught_by_hash() {
        let mut bytes = file("fcn", FeatureType::Mfcc).encode().unwrap();
        let needle = b"\"seed\":3";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        bytes[at + needle.len() - 1] = b'4';
        let err = ModelFile::decode(&bytes);
        assert!(matches!(err, Err(StoreError::HashMismatch { .. })), "{err:?}");
    }

    #[test]
    fn model_id_is_config_hash() {
        let f = file("fcn", FeatureType::Xvector);
        assert_eq!(f.model_id().len(), 64);
        assert_eq!(f.model_id(), config_hash(f.model.config()));
        assert_ne!(f.model_id(), file("cnn", FeatureType::Xvector).model_id());
    }
}
