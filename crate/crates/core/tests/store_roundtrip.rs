use persona_core::features::FeatureType;
use persona_core::store::{ModelFile, StoreError};
use persona_core::training::synthetic::clustered_dataset;
use persona_core::training::{train_fold, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn trained_cnn_survives_disk_bit_for_bit() {
    let data = clustered_dataset(80, 4);
    let config = TrainConfig {
        epochs: 3,
        seed: 8,
        ..Default::default()
    };
    let (_, model) = train_fold(&data[..64], &data[64..], &config, "cnn", FeatureType::Mfcc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.persmodl");
    ModelFile::new(model.clone(), None, Some(config)).save(&path).unwrap();
    let loaded = ModelFile::load(&path).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let x: Vec<f32> = (0..40).map(|_| rng.random_range(-30.0..30.0)).collect();
        let (a, b) = (model.outputs_raw(&x).unwrap(), loaded.model.outputs_raw(&x).unwrap());
        for (p, q) in a.emotion_probs.iter().chain(&a.gender_probs).zip(b.emotion_probs.iter().chain(&b.gender_probs)) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
        assert_eq!(a.age_years.to_bits(), b.age_years.to_bits());
    }

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(loaded.encode().unwrap(), bytes);
    let cut = &bytes[..bytes.len() / 2 + bytes.len() / 4];
    assert!(matches!(ModelFile::decode(cut), Err(StoreError::Truncated { .. })));
}
