use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use super::{Sample, TrainingError};
use crate::audio::ingest_wav;
use crate::features::{load_embedding, FeatureError, FeatureRegistry, FeatureType, FeatureVector};
use crate::model::{Labels, EMOTIONS, GENDERS};

pub const MANIFEST_COLUMNS: [&str; 7] = [
    "clip_id",
    "audio_path",
    "embedding_path",
    "emotion",
    "gender",
    "age",
    "speaker_id",
];

/// CREMA-D filename codes, in [`EMOTIONS`] order.
const EMOTION_CODES: [&str; 6] = ["ang", "dis", "fea", "hap", "neu", "sad"];

/// One manifest row after validation. Paths are absolute or relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub clip_id: String,
    pub audio_path: Option<PathBuf>,
    pub embedding_path: Option<PathBuf>,
    pub labels: Labels,
    pub speaker_id: String,
}

#[derive(Deserialize)]
struct Row {
    clip_id: String,
    audio_path: String,
    embedding_path: String,
    emotion: String,
    gender: String,
    age: String,
    speaker_id: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>, TrainingError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TrainingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

/// Parses manifest CSV text. Rows are numbered from 1, not counting the header.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<LabeledExample>, TrainingError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    for col in MANIFEST_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(TrainingError::MissingColumn(col));
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, record) in reader.deserialize::<Row>().enumerate() {
        let row = i + 1;
        let r = record?;
        let invalid = |detail: String| TrainingError::InvalidRow { row, detail };
        if r.clip_id.is_empty() {
            return Err(invalid("empty clip_id".into()));
        }
        let emotion = parse_emotion(&r.emotion).ok_or_else(|| invalid("unknown emotion".into()))?;
        let gender = parse_gender(&r.gender).ok_or_else(|| invalid("unknown gender".into()))?;
        let age: i64 = r.age.parse().map_err(|_| invalid(format!("age `{}` is not an integer", r.age)))?;
        if age <= 0 {
            return Err(invalid("non-positive age".into()));
        }
        let resolve = |p: &str| (!p.is_empty()).then(|| base_dir.join(p));
        let (audio_path, embedding_path) = (resolve(&r.audio_path), resolve(&r.embedding_path));
        if audio_path.is_none() && embedding_path.is_none() {
            return Err(invalid("no audio_path or embedding_path".into()));
        }
        if !seen.insert(r.clip_id.clone()) {
            return Err(TrainingError::DuplicateClip { clip_id: r.clip_id, row });
        }
        out.push(LabeledExample {
            clip_id: r.clip_id,
            audio_path,
            embedding_path,
            labels: Labels {
                emotion,
                gender,
                age_years: age as f64,
            },
            speaker_id: r.speaker_id,
        });
    }
    if out.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    Ok(out)
}

fn parse_emotion(s: &str) -> Option<usize> {
    let s = s.to_ascii_lowercase();
    EMOTIONS.iter().position(|e| *e == s).or_else(|| EMOTION_CODES.iter().position(|c| *c == s))
}

fn parse_gender(s: &str) -> Option<usize> {
    match s.to_ascii_lowercase().as_str() {
        "female" | "f" => Some(0),
        "male" | "m" => Some(1),
        other => GENDERS.iter().position(|g| *g == other),
    }
}

/// Loads or computes the feature vector of every example.
///
/// Embedding feature types read `embedding_path`. MFCC computes from
/// `audio_path` when present and otherwise reads a cached MFCC file from
/// `embedding_path`. Every failing clip is reported, not just the first.
pub fn resolve_features(
    examples: &[LabeledExample],
    registry: &FeatureRegistry,
    feature_type: FeatureType,
) -> Result<Vec<Sample>, TrainingError> {
    let source = registry
        .for_type(feature_type)
        .ok_or_else(|| FeatureError::UnknownFeatureName(feature_type.to_string()))?;
    let results: Vec<Result<FeatureVector, String>> = examples
        .par_iter()
        .map(|ex| {
            let from_audio = source.consumes_audio() && ex.audio_path.is_some();
            let r = match (&ex.audio_path, &ex.embedding_path) {
                (Some(p), _) if from_audio => fs::read(p)
                    .map_err(FeatureError::from)
                    .and_then(|bytes| Ok(ingest_wav(&bytes, &ex.clip_id)?))
                    .and_then(|clip| source.from_audio(&clip)),
                (_, Some(p)) => load_embedding(p, feature_type),
                (Some(_), None) => Err(FeatureError::MissingInput {
                    source_name: source.name(),
                    needs: "embedding_path",
                }),
                (None, None) => unreachable!("rows without any path are rejected at load"),
            };
            r.map_err(|e| format!("{}: {e}", ex.clip_id))
        })
        .collect();

    let mut failed = Vec::new();
    let mut detail = None;
    let mut samples = Vec::with_capacity(examples.len());
    for (ex, r) in examples.iter().zip(results) {
        match r {
            Ok(v) => samples.push(Sample {
                clip_id: ex.clip_id.clone(),
                features: v.values,
                labels: ex.labels,
            }),
            Err(e) => {
                failed.push(ex.clip_id.clone());
                detail.get_or_insert(e);
            }
        }
    }
    if !failed.is_empty() {
        return Err(TrainingError::Unresolvable {
            clip_ids: failed,
            detail: detail.unwrap_or_default(),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{encode_pers, FeatureVector};

    const HEADER: &str = "clip_id,audio_path,embedding_path,emotion,gender,age,speaker_id\n";

    fn parse(body: &str) -> Result<Vec<LabeledExample>, TrainingError> {
        parse_manifest(&format!("{HEADER}{body}"), Path::new("/data"))
    }

    #[test]
    fn three_valid_rows() {
        let ex = parse("a,a.wav,,anger,female,25,s1\nb,,b.pers,NEU,M,40,s2\nc,c.wav,c.pers,sad,male,61,s1\n").unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[0].audio_path.as_deref(), Some(Path::new("/data/a.wav")));
        assert_eq!(ex[0].embedding_path, None);
        assert_eq!(ex[1].labels, Labels { emotion: 4, gender: 1, age_years: 40.0 });
    }

    #[test]
    fn unknown_emotion_names_row() {
        let err = parse("a,a.wav,,anger,female,25,s1\nb,b.wav,,joy,male,30,s2\n").unwrap_err();
        assert_eq!(err.to_string(), "unknown emotion, row 2");
    }

    #[test]
    fn rejections() {
        assert!(matches!(
            parse("a,a.wav,,anger,female,25,s1\na,b.wav,,sad,male,30,s2\n"),
            Err(TrainingError::DuplicateClip { row: 2, .. })
        ));
        assert_eq!(parse("a,a.wav,,anger,female,0,s1\n").unwrap_err().to_string(), "non-positive age, row 1");
        assert!(parse("a,a.wav,,anger,other,20,s1\n").is_err());
        assert!(parse("a,,,anger,female,20,s1\n").is_err());
        assert!(matches!(
            parse_manifest("clip_id,audio_path,emotion,gender,age,speaker_id\n", Path::new("")),
            Err(TrainingError::MissingColumn("embedding_path"))
        ));
    }

    #[test]
    fn unresolvable_lists_every_clip() {
        let dir = tempfile::tempdir().unwrap();
        let v = FeatureVector::new(vec![0.5; 512], FeatureType::Xvector, "ok").unwrap();
        fs::write(dir.path().join("ok.pers"), encode_pers(&v).unwrap()).unwrap();
        let text = format!("{HEADER}ok,,ok.pers,anger,female,25,s\nx,,gone.pers,sad,male,30,s\ny,y.wav,,sad,male,30,s\n");
        let ex = parse_manifest(&text, dir.path()).unwrap();
        let err = resolve_features(&ex, &FeatureRegistry::builtin(), FeatureType::Xvector).unwrap_err();
        match err {
            TrainingError::Unresolvable { clip_ids, .. } => assert_eq!(clip_ids, ["x", "y"]),
            other => panic!("{other}"),
        }
        let ok = resolve_features(&ex[..1], &FeatureRegistry::builtin(), FeatureType::Xvector).unwrap();
        assert_eq!(ok[0].features, vec![0.5; 512]);
    }
}
