#![allow(dead_code)]

use std::f64::consts::PI;

use persona_core::audio::{encode_wav, AudioClip};
use persona_core::features::FeatureType;
use persona_core::model::{ModelConfig, MultiTaskModel, Normalizer};
use persona_core::store::ModelFile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub const BOUNDARY: &str = "persona-test-boundary";

/// Fresh model with a normalizer roughly matched to MFCC magnitudes.
pub fn model_file(arch: &str, feature_type: FeatureType) -> ModelFile {
    let mut model = MultiTaskModel::build(ModelConfig::new(arch, feature_type, 17)).unwrap();
    let dim = feature_type.expected_dim();
    model
        .set_normalizer(Normalizer {
            feature_mean: vec![-5.0; dim],
            feature_std: vec![8.0; dim],
            age_mean: 38.0,
            age_std: 12.0,
        })
        .unwrap();
    ModelFile::new(model, None, None)
}

/// Two harmonics plus noise, 16-bit WAV.
pub fn wav(seconds: f64, rate: u32, channels: u16, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(90.0..300.0);
    let frames = (seconds * rate as f64) as usize;
    let mut samples = Vec::with_capacity(frames * channels as usize);
    for i in 0..frames {
        let t = i as f64 / rate as f64;
        let s = 0.4 * (2.0 * PI * f0 * t).sin() + 0.2 * (4.0 * PI * f0 * t).sin() + rng.random_range(-0.05..0.05);
        for _ in 0..channels {
            samples.push(s);
        }
    }
    encode_wav(&AudioClip {
        samples,
        channels,
        sample_rate_hz: rate,
        source_name: "t".into(),
    })
}

/// Hand-built multipart/form-data body.
pub fn multipart(fields: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, bytes) in fields {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.bin\"\r\nContent-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn content_type() -> String {
    format!("multipart/form-data; boundary={BOUNDARY}")
}

/// Validates against the published schema and checks the invariants the
/// schema cannot express. Returns a description of the first violation.
pub fn check_response(v: &Value) -> Result<(), String> {
    let schema: Value =
        serde_json::from_str(include_str!("../../../../docs/prediction_response.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    if let Err(e) = validator.validate(v) {
        return Err(format!("schema: {e}"));
    }
    for task in ["emotion", "gender"] {
        let probs = v[task]["probabilities"].as_object().unwrap();
        let sum: f64 = probs.values().map(|p| p.as_f64().unwrap()).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(format!("{task} probabilities sum to {sum}"));
        }
        let best = probs
            .iter()
            .max_by(|a, b| a.1.as_f64().unwrap().total_cmp(&b.1.as_f64().unwrap()))
            .unwrap()
            .0;
        if v[task]["label"] != *best {
            return Err(format!("{task} label {} is not the argmax {best}", v[task]["label"]));
        }
    }
    let years = v["age"]["years"].as_f64().unwrap();
    if ((years * 10.0).round() / 10.0 - years).abs() > 1e-9 {
        return Err(format!("age {years} not rounded to one decimal"));
    }
    Ok(())
}
