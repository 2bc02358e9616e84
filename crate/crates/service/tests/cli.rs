mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use persona_core::features::FeatureType;

use common::*;

const EMOTIONS: [&str; 6] = ["anger", "disgust", "fear", "happy", "neutral", "sad"];

fn persona(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_persona"))
        .args(args)
        .env_remove("PERSONA_MODEL")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 36 short WAV clips and a manifest referencing them by relative path.
fn dataset(dir: &Path) -> String {
    fs::create_dir_all(dir.join("wav")).unwrap();
    let mut csv = String::from("clip_id,audio_path,embedding_path,emotion,gender,age,speaker_id\n");
    for i in 0..36u64 {
        let id = format!("clip{i:02}");
        fs::write(dir.join(format!("wav/{id}.wav")), wav(0.5, 16_000, 1, i)).unwrap();
        let gender = if i % 2 == 0 { "female" } else { "male" };
        csv.push_str(&format!("{id},wav/{id}.wav,,{},{gender},{},spk{}\n", EMOTIONS[i as usize % 6], 20 + i, i % 4));
    }
    let manifest = dir.join("manifest.csv");
    fs::write(&manifest, csv).unwrap();
    manifest.display().to_string()
}

fn train(manifest: &str, out: &Path) -> Output {
    persona(&[
        "train", "--manifest", manifest, "--feature", "mfcc", "--arch", "fcn", "--folds", "3", "--epochs", "2", "--seed", "4",
        "--out", out.to_str().unwrap(),
    ])
}

#[test]
fn predict_prints_schema_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.persmodl");
    model_file("cnn", FeatureType::Mfcc).save(&model).unwrap();
    let audio = dir.path().join("a.wav");
    fs::write(&audio, wav(1.5, 22_050, 2, 8)).unwrap();
    let out = persona(&["predict", "--model", model.to_str().unwrap(), "--audio", audio.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    check_response(&v).unwrap();
}

#[test]
fn model_path_comes_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.persmodl");
    model_file("fcn", FeatureType::Mfcc).save(&model).unwrap();
    let audio = dir.path().join("a.wav");
    fs::write(&audio, wav(1.0, 16_000, 1, 2)).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_persona"))
        .args(["predict", "--audio", audio.to_str().unwrap()])
        .env("PERSONA_MODEL", &model)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn user_errors_exit_1() {
    let out = persona(&["train", "--manifest", "/no/such/manifest.csv", "--feature", "mfcc", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/no/such/manifest.csv"), "{}", stderr(&out));

    let out = persona(&["predict", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));

    let out = persona(&["serve", "--model", "/no/such/model.persmodl", "--port", "0"]);
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("a.mp3");
    fs::write(&audio, b"ID3\x03\x00\x00\x00\x00\x00\x00rest").unwrap();
    let model = dir.path().join("m.persmodl");
    model_file("fcn", FeatureType::Mfcc).save(&model).unwrap();
    let out = persona(&["predict", "--model", model.to_str().unwrap(), "--audio", audio.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("convert to WAV"));

    assert_eq!(persona(&["--help"]).status.code(), Some(0));
}

#[test]
fn busy_port_fails_startup() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = persona(&["serve", "--port", &port]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cannot listen"), "{}", stderr(&out));
}

#[test]
fn train_is_reproducible_and_extract_feeds_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = train(&manifest, out_dir);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let report = fs::read(a.join("cv_report.json")).unwrap();
    assert_eq!(report, fs::read(b.join("cv_report.json")).unwrap());
    assert!(a.join("model.persmodl").exists());
    assert!(fs::read_to_string(a.join("cv_table.txt")).unwrap().contains("ER (%)"));

    let cache = dir.path().join("pers");
    let out = persona(&["extract", "--manifest", &manifest, "--feature", "mfcc", "--out-dir", cache.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(cache.join("clip00.pers").exists());
    let cached = dir.path().join("c");
    let out = train(cache.join("manifest.csv").to_str().unwrap(), &cached);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(report, fs::read(cached.join("cv_report.json")).unwrap());

    let out = persona(&["eval", "--model", a.join("model.persmodl").to_str().unwrap(), "--manifest", &manifest]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n"], 36);
}
