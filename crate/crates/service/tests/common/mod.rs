#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use hyperpheno_core::ehr::{generate_synthetic, Dataset, SynthConfig};
use hyperpheno_core::model::{ModelConfig, ShyModel};
use hyperpheno_service::session::SessionStore;
use hyperpheno_service::AppState;
use tower::ServiceExt;

pub fn synth_config() -> SynthConfig {
    SynthConfig {
        num_codes: 30,
        num_patients: 40,
        num_clusters: 3,
        ..SynthConfig::default()
    }
}

pub fn model_config() -> ModelConfig {
    ModelConfig {
        code_dim: 4,
        unigin_widths: vec![8],
        similarity_heads: 2,
        augment_ratio: 0.3,
        num_phenotypes: 4,
        hidden: 8,
        attention_heads: 2,
        attention_key_dim: 4,
        attention_value_dim: 4,
        ..ModelConfig::default()
    }
}

pub fn dataset() -> Dataset {
    generate_synthetic(&synth_config(), 5).unwrap().dataset
}

pub fn model(ds: &Dataset) -> ShyModel {
    ShyModel::for_dataset(model_config(), ds, 9).unwrap()
}

pub struct Fixture {
    pub state: AppState,
    pub dir: tempfile::TempDir,
}

pub fn fixture(with_model: bool) -> Fixture {
    let ds = dataset();
    let m = with_model.then(|| model(&ds));
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    Fixture {
        state: AppState::new(m, ds, store).unwrap().with_top_k(10),
        dir,
    }
}

pub async fn call(state: &AppState, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = hyperpheno_service::api::router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call_json(state: &AppState, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, serde_json::Value) {
    let (status, bytes) = call(state, method, uri, body).await;
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| serde_json::Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}
