//! PERS container for a single utterance embedding, plus a one-line CSV fallback.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset 0   4 bytes  magic "PERS"
//! offset 4   u8       version (1)
//! offset 5   u8       feature type (0 = MFCC, 1 = x-vector, 2 = WavLM)
//! offset 6   u32      dim
//! offset 10  dim x f32 values
//! ```

use std::fs;
use std::path::Path;

use super::{FeatureError, FeatureType, FeatureVector};

pub const PERS_MAGIC: &[u8; 4] = b"PERS";
pub const PERS_VERSION: u8 = 1;
const HEADER_LEN: usize = 10;

pub fn encode_pers(vec: &FeatureVector) -> Result<Vec<u8>, FeatureError> {
    let expected = vec.feature_type.expected_dim();
    if vec.values.len() != expected {
        return Err(FeatureError::DimMismatch {
            feature_type: vec.feature_type,
            expected,
            found: vec.values.len(),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * expected);
    out.extend_from_slice(PERS_MAGIC);
    out.push(PERS_VERSION);
    out.push(vec.feature_type.code());
    out.extend_from_slice(&(expected as u32).to_le_bytes());
    for v in &vec.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_pers(bytes: &[u8], clip_id: &str) -> Result<FeatureVector, FeatureError> {
    if bytes.len() < 4 || &bytes[..4] != PERS_MAGIC {
        return Err(FeatureError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FeatureError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[4] != PERS_VERSION {
        return Err(FeatureError::UnsupportedVersion(bytes[4]));
    }
    let feature_type = FeatureType::from_code(bytes[5])?;
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if dim != feature_type.expected_dim() {
        return Err(FeatureError::DimMismatch {
            feature_type,
            expected: feature_type.expected_dim(),
            found: dim,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let needed = dim * 4;
    if payload.len() < needed {
        return Err(FeatureError::Truncated {
            expected: HEADER_LEN + needed,
            found: bytes.len(),
        });
    }
    if payload.len() > needed {
        return Err(FeatureError::TrailingBytes(payload.len() - needed));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureVector::new(values, feature_type, clip_id)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn write_embedding_file(vec: &FeatureVector, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    fs::write(path, encode_pers(vec)?)?;
    Ok(())
}

/// Reads a PERS file; the clip id is taken from the file stem.
pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<FeatureVector, FeatureError> {
    let path = path.as_ref();
    decode_pers(&fs::read(path)?, &stem(path))
}

pub fn write_embedding_csv(vec: &FeatureVector, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let line: Vec<String> = vec.values.iter().map(|v| v.to_string()).collect();
    fs::write(path, line.join(",") + "\n")?;
    Ok(())
}

/// Reads a single comma-separated line of decimals. CSV carries no type tag,
/// so the caller names the expected feature type.
pub fn read_embedding_csv(path: impl AsRef<Path>, feature_type: FeatureType) -> Result<FeatureVector, FeatureError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let line = lines.next().ok_or_else(|| FeatureError::Csv("empty file".into()))?;
    if lines.next().is_some() {
        return Err(FeatureError::Csv("expected a single line".into()));
    }
    let values = line
        .split(',')
        .enumerate()
        .map(|(i, field)| {
            field
                .trim()
                .parse::<f32>()
                .map_err(|e| FeatureError::Csv(format!("field {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    FeatureVector::new(values, feature_type, stem(path))
}

/// Loads an embedding by extension: `.csv` through the CSV reader, anything
/// else as PERS. The result must have the expected feature type.
pub fn load_embedding(path: impl AsRef<Path>, expected: FeatureType) -> Result<FeatureVector, FeatureError> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let vec = if is_csv {
        read_embedding_csv(path, expected)?
    } else {
        read_embedding_file(path)?
    };
    if vec.feature_type != expected {
        return Err(FeatureError::DimMismatch {
            feature_type: expected,
            expected: expected.expected_dim(),
            found: vec.values.len(),
        });
    }
    Ok(vec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xvector(seed: u32) -> FeatureVector {
        let values = (0..512).map(|i| ((i * 31 + seed) % 97) as f32 / 7.0 - 6.5).collect();
        FeatureVector::new(values, FeatureType::Xvector, "spk01").unwrap()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spk01.pers");
        let v = xvector(3);
        write_embedding_file(&v, &path).unwrap();
        let back = read_embedding_file(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(fs::metadata(&path).unwrap().len(), 10 + 512 * 4);
    }

    #[test]
    fn header_bytes() {
        let bytes = encode_pers(&xvector(0)).unwrap();
        assert_eq!(&bytes[..10], &[0x50, 0x45, 0x52, 0x53, 1, 1, 0, 2, 0, 0]);
    }

    #[test]
    fn rejections_have_distinct_codes() {
        let good = encode_pers(&xvector(1)).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        let e1 = decode_pers(&bad_magic, "x").unwrap_err();
        assert!(matches!(e1, FeatureError::BadMagic { .. }));

        let mut version = good.clone();
        version[4] = 2;
        let e2 = decode_pers(&version, "x").unwrap_err();
        assert!(matches!(e2, FeatureError::UnsupportedVersion(2)));

        // claims WavLM but declares 512 dims
        let mut wavlm = good.clone();
        wavlm[5] = 2;
        let e3 = decode_pers(&wavlm, "x").unwrap_err();
        assert!(matches!(e3, FeatureError::DimMismatch { expected: 768, found: 512, .. }));

        let e4 = decode_pers(&good[..good.len() - 3], "x").unwrap_err();
        assert!(matches!(e4, FeatureError::Truncated { .. }));

        let mut long = good.clone();
        long.push(0);
        let e5 = decode_pers(&long, "x").unwrap_err();

        let codes = [e1.code(), e2.code(), e3.code(), e4.code(), e5.code()];
        let unique: std::collections::HashSet<_> = codes.iter().collect();
        assert_eq!(unique.len(), codes.len());
    }

    #[test]
    fn csv_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip7.csv");
        let v = xvector(9);
        write_embedding_csv(&v, &path).unwrap();
        let back = load_embedding(&path, FeatureType::Xvector).unwrap();
        assert_eq!(back.values, v.values);
        assert_eq!(back.clip_id, "clip7");
        assert!(load_embedding(&path, FeatureType::Wavlm).is_err());

        fs::write(&path, "1.0,abc\n").unwrap();
        assert!(matches!(read_embedding_csv(&path, FeatureType::Xvector), Err(FeatureError::Csv(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pers_round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u32>(), 40)) {
            let values: Vec<f32> = bits
                .into_iter()
                .map(f32::from_bits)
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let v = FeatureVector::new(values, FeatureType::Mfcc, "c").unwrap();
            let back = decode_pers(&encode_pers(&v).unwrap(), "c").unwrap();
            let a: Vec<u32> = v.values.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.values.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
