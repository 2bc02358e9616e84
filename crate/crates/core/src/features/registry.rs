use std::sync::Arc;

use super::{decode_pers, FeatureError, FeatureType, FeatureVector, MfccConfig, MfccExtractor};
use crate::audio::AudioClip;

/// A named way of turning an utterance into a [`FeatureVector`].
///
/// Sources either compute features from 16 kHz mono audio or accept a
/// precomputed PERS embedding. Both entry points exist on every source so
/// callers can route whatever input they hold.
pub trait FeatureSource: Send + Sync {
    fn name(&self) -> &'static str;

    fn feature_type(&self) -> FeatureType;

    /// True when the source computes its vector from audio.
    fn consumes_audio(&self) -> bool;

    fn from_audio(&self, clip: &AudioClip) -> Result<FeatureVector, FeatureError>;

    /// Accepts a PERS-encoded vector, checking that its type matches.
    fn from_embedding(&self, pers: &[u8], clip_id: &str) -> Result<FeatureVector, FeatureError> {
        let vec = decode_pers(pers, clip_id)?;
        if vec.feature_type != self.feature_type() {
            return Err(FeatureError::DimMismatch {
                feature_type: self.feature_type(),
                expected: self.feature_type().expected_dim(),
                found: vec.values.len(),
            });
        }
        Ok(vec)
    }
}

/// MFCC baseline computed from audio.
pub struct MfccSource {
    extractor: MfccExtractor,
}

impl MfccSource {
    pub fn new(config: MfccConfig) -> Result<Self, FeatureError> {
        Ok(Self {
            extractor: MfccExtractor::new(config)?,
        })
    }
}

impl FeatureSource for MfccSource {
    fn name(&self) -> &'static str {
        "mfcc"
    }

    fn feature_type(&self) -> FeatureType {
        FeatureType::Mfcc
    }

    fn consumes_audio(&self) -> bool {
        true
    }

    fn from_audio(&self, clip: &AudioClip) -> Result<FeatureVector, FeatureError> {
        self.extractor.extract(clip)
    }
}

/// Pre-trained model embeddings produced by an external exporter.
pub struct EmbeddingSource {
    feature_type: FeatureType,
}

impl EmbeddingSource {
    pub fn new(feature_type: FeatureType) -> Self {
        Self { feature_type }
    }
}

impl FeatureSource for EmbeddingSource {
    fn name(&self) -> &'static str {
        self.feature_type.name()
    }

    fn feature_type(&self) -> FeatureType {
        self.feature_type
    }

    fn consumes_audio(&self) -> bool {
        false
    }

    fn from_audio(&self, _clip: &AudioClip) -> Result<FeatureVector, FeatureError> {
        Err(FeatureError::MissingInput {
            source_name: self.name(),
            needs: "a precomputed PERS embedding",
        })
    }
}

/// Feature sources looked up by name.
#[derive(Clone, Default)]
pub struct FeatureRegistry {
    sources: Vec<Arc<dyn FeatureSource>>,
}

impl FeatureRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// MFCC (default configuration), x-vector and WavLM.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(
            MfccSource::new(MfccConfig::default()).expect("default MFCC configuration is valid"),
        ));
        reg.register(Arc::new(EmbeddingSource::new(FeatureType::Xvector)));
        reg.register(Arc::new(EmbeddingSource::new(FeatureType::Wavlm)));
        reg
    }

    /// Adds a source, replacing any previous one with the same name.
    pub fn register(&mut self, source: Arc<dyn FeatureSource>) {
        self.sources.retain(|s| s.name() != source.name());
        self.sources.push(source);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn FeatureSource>> {
        let key = name.to_ascii_lowercase();
        let key = if key == "x-vector" { "xvector".to_string() } else { key };
        self.sources.iter().find(|s| s.name() == key).cloned()
    }

    pub fn for_type(&self, feature_type: FeatureType) -> Option<Arc<dyn FeatureSource>> {
        self.sources
            .iter()
            .find(|s| s.feature_type() == feature_type)
            .cloned()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.sources.iter().map(|s| s.name()).collect()
    }
}
