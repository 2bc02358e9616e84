mod common;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use persona_core::features::{encode_pers, FeatureType, FeatureVector};
use persona_service::api::{router, AppState};
use persona_service::predict::Predictor;
use serde_json::Value;
use tower::ServiceExt;

use common::*;

fn app(arch: &str, ft: FeatureType) -> Router {
    router(AppState::new(Some(Predictor::new(model_file(arch, ft)).unwrap())), None)
}

fn predict_request(body: Vec<u8>) -> Request<Body> {
    Request::post("/api/v1/predict")
        .header(header::CONTENT_TYPE, content_type())
        .body(Body::from(body))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn three_second_wav_gets_a_valid_prediction() {
    let app = app("cnn", FeatureType::Mfcc);
    let (status, v) = send(&app, predict_request(multipart(&[("audio", &wav(3.0, 44_100, 2, 1))]))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    check_response(&v).unwrap();
    assert_eq!(v["feature_type"], "mfcc");
    assert_eq!(v["model_id"], model_file("cnn", FeatureType::Mfcc).model_id());
}

#[tokio::test]
async fn health_reports_the_model() {
    let app = app("fcn", FeatureType::Mfcc);
    let (status, v) = send(&app, Request::get("/api/v1/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_id"], model_file("fcn", FeatureType::Mfcc).model_id());
    assert!(v["uptime_s"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn no_model_means_503() {
    let app = router(AppState::new(None), None);
    let (status, v) = send(&app, Request::get("/api/v1/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["model_id"], Value::Null);
    let (status, v) = send(&app, predict_request(multipart(&[("audio", &wav(1.0, 16_000, 1, 1))]))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"]["code"], "model_unavailable");
}

#[tokio::test]
async fn request_errors_map_to_statuses() {
    let app = app("fcn", FeatureType::Mfcc);

    let (status, _) = send(&app, predict_request(multipart(&[("other", b"x")]))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let not_multipart = Request::post("/api/v1/predict").body(Body::from("hello")).unwrap();
    assert_eq!(send(&app, not_multipart).await.0, StatusCode::BAD_REQUEST);

    let mut mp3 = b"ID3\x04\x00\x00\x00\x00\x00\x00".to_vec();
    mp3.extend([0u8; 256]);
    let (status, v) = send(&app, predict_request(multipart(&[("audio", &mp3)]))).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    assert!(v["error"]["message"].as_str().unwrap().contains("convert to WAV"), "{v}");

    let (status, v) = send(&app, predict_request(multipart(&[("audio", b"RIFF0000WAVEjunkjunk")]))).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    assert!(v["error"]["message"].as_str().unwrap().contains("convert to WAV"));

    let (status, _) = send(&app, predict_request(multipart(&[("audio", &wav(0.0, 16_000, 1, 1))]))).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
}

#[tokio::test]
async fn embedding_models_check_the_vector() {
    let app = app("cnn", FeatureType::Xvector);
    let good = encode_pers(&FeatureVector::new(vec![0.1; 512], FeatureType::Xvector, "c").unwrap()).unwrap();
    let (status, v) = send(&app, predict_request(multipart(&[("embedding", &good)]))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    check_response(&v).unwrap();
    assert_eq!(v["feature_type"], "xvector");

    let wavlm = encode_pers(&FeatureVector::new(vec![0.1; 768], FeatureType::Wavlm, "c").unwrap()).unwrap();
    let (status, _) = send(&app, predict_request(multipart(&[("embedding", &wavlm)]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, v) = send(&app, predict_request(multipart(&[("audio", &wav(1.0, 16_000, 1, 1))]))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"]["message"].as_str().unwrap().contains("embedding"));
}

#[tokio::test]
async fn oversized_body_is_413() {
    let app = app("fcn", FeatureType::Mfcc);
    let big = vec![0u8; 50 * 1024 * 1024 + 1024];
    let (status, _) = send(&app, predict_request(multipart(&[("audio", &big)]))).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn unknown_route_is_json_404() {
    let app = app("fcn", FeatureType::Mfcc);
    let (status, v) = send(&app, Request::get("/api/v2/nothing").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");
}

#[tokio::test]
async fn ui_dir_is_served_beside_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>persona</h1>").unwrap();
    let state = AppState::new(Some(Predictor::new(model_file("fcn", FeatureType::Mfcc)).unwrap()));
    let app = router(state, Some(dir.path().to_path_buf()));

    let resp = app.clone().oneshot(Request::get("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<h1>persona</h1>");

    let (status, v) = send(&app, Request::get("/missing.js").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");
    assert_eq!(send(&app, Request::get("/api/v1/health").body(Body::empty()).unwrap()).await.0, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_burst_is_stateless() {
    let app = app("cnn", FeatureType::Mfcc);
    let clips: Vec<Vec<u8>> = (0..16).map(|i| wav(1.0 + (i % 3) as f64, 16_000, 1, i)).collect();

    let mut sequential = Vec::new();
    for c in &clips {
        sequential.push(send(&app, predict_request(multipart(&[("audio", c)]))).await.1);
    }
    let handles: Vec<_> = clips
        .iter()
        .map(|c| {
            let app = app.clone();
            let req = predict_request(multipart(&[("audio", c)]));
            tokio::spawn(async move { send(&app, req).await })
        })
        .collect();
    for (h, mut seq) in handles.into_iter().zip(sequential) {
        let (status, mut v) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        check_response(&v).unwrap();
        v["inference_ms"] = Value::Null;
        seq["inference_ms"] = Value::Null;
        assert_eq!(v, seq);
    }
}

#[test]
fn fuzzed_inputs_always_give_schema_valid_responses() {
    let predictor = Predictor::new(model_file("cnn", FeatureType::Mfcc)).unwrap();
    let rates = [8_000, 11_025, 16_000, 22_050, 44_100, 48_000];
    for seed in 0..24u64 {
        let rate = rates[seed as usize % rates.len()];
        let channels = 1 + (seed % 2) as u16;
        let seconds = 0.05 + (seed % 7) as f64 * 0.4;
        let audio = wav(seconds, rate, channels, seed);
        let r = predictor.predict(Some(&audio), None, "fuzz").unwrap();
        let v = serde_json::to_value(&r).unwrap();
        check_response(&v).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn serving_never_mutates_the_model() {
    let predictor = Predictor::new(model_file("fcn", FeatureType::Mfcc)).unwrap();
    let probe = wav(1.0, 16_000, 1, 99);
    let before = predictor.predict(Some(&probe), None, "p").unwrap();
    for seed in 0..10 {
        predictor.predict(Some(&wav(0.5, 22_050, 2, seed)), None, "x").unwrap();
    }
    let mut after = predictor.predict(Some(&probe), None, "p").unwrap();
    after.inference_ms = before.inference_ms;
    assert_eq!(before, after);
}
