mod common;

use std::path::Path;
use std::process::{Command, Output};

use hyperpheno_core::checkpoint::load_checkpoint;
use hyperpheno_core::ehr::{load_dataset, IngestConfig};
use hyperpheno_service::payload::ExplanationPayload;
use hyperpheno_service::session::SessionStore;
use hyperpheno_service::AppState;
use serde_json::json;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperpheno"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path) -> String {
    let cfg = json!({
        "synth": { "num_codes": 30, "num_patients": 60, "num_clusters": 3 },
        "split": { "train": 0.6, "val": 0.2, "test": 0.2, "seed": 1 },
        "train": {
            "model": {
                "code_dim": 4, "unigin_widths": [8], "similarity_heads": 2, "augment_ratio": 0.2,
                "num_phenotypes": 3, "hidden": 8, "attention_heads": 2,
                "attention_key_dim": 4, "attention_value_dim": 4
            },
            "batch_size": 16, "epochs": 2, "seeds": [4]
        },
        "robustness": { "fractions": [0.5], "seed": 3 }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[tokio::test]
async fn pipeline_synth_train_evaluate_explain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(d);
    let data_dir = d.join("data");
    let ckpt = d.join("ckpt");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let corpus = data_dir.join("corpus.csv");

    ok(&["synth", "--config", &cfg, "--out", &s(&data_dir)]);
    assert!(corpus.exists() && data_dir.join("rules.json").exists());

    ok(&["train", "--config", &cfg, "--data", &s(&corpus), "--out", &s(&ckpt)]);
    let seed_dir = ckpt.join("seed-4");
    for f in ["model.safetensors", "manifest.json", "train_log.jsonl"] {
        assert!(seed_dir.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(seed_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["K"], 3);
    assert_eq!(manifest["Z"], 1);
    assert_eq!(manifest["seeds"], json!([4]));

    let (r1, r2) = (d.join("report1.json"), d.join("report2.json"));
    let robust = d.join("robust.csv");
    for r in [&r1, &r2] {
        ok(&[
            "evaluate", "--config", &cfg, "--data", &s(&corpus), "--checkpoint", &s(&seed_dir), "--out", &s(r),
            "--robustness-csv", &s(&robust),
        ]);
    }
    let b1 = std::fs::read(&r1).unwrap();
    assert_eq!(b1, std::fs::read(&r2).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&b1).unwrap();
    assert!(report["model"]["mean"]["recall_at_10"].is_number());
    assert!(report["frequency_baseline"]["recall_at_20"].is_number());
    assert_eq!(report["robustness"][0]["rows"].as_array().unwrap().len(), 2);
    assert!(std::fs::read_to_string(&robust).unwrap().lines().count() == 3);

    // CLI explain and the HTTP payload agree for the same checkpoint.
    let ds = load_dataset(&corpus, &IngestConfig::default()).unwrap();
    let pid = ds.records[0].patient_id.clone();
    let out = ok(&["explain", "--config", &cfg, "--data", &s(&corpus), "--checkpoint", &s(&seed_dir), "--patient", &pid, "--top-k", "10"]);
    let cli_payload: ExplanationPayload = serde_json::from_slice(&out.stdout).unwrap();

    let (model, _) = load_checkpoint(&seed_dir).unwrap();
    let state = AppState::new(Some(model), ds, SessionStore::open(&d.join("sessions")).unwrap()).unwrap().with_top_k(10);
    let (status, v) = common::call(&state, "GET", &format!("/patients/{pid}/explanation"), None).await;
    assert_eq!(status, 200);
    let api_payload: ExplanationPayload = serde_json::from_slice(&v).unwrap();
    assert_eq!(cli_payload.prediction.top_k, api_payload.prediction.top_k);
    assert_eq!(cli_payload, api_payload);

    // Untrained weights still give a valid payload.
    let out_file = d.join("explain.json");
    ok(&["explain", "--config", &cfg, "--data", &s(&corpus), "--patient", &pid, "--out", &s(&out_file)]);
    let fresh: ExplanationPayload = serde_json::from_slice(&std::fs::read(&out_file).unwrap()).unwrap();
    assert_eq!(fresh.phenotypes.len(), 3);
    assert!((fresh.prediction.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let out = bin(&["explain", "--config", &cfg, "--data", &s(&corpus), "--patient", "no-such-patient"]);
    assert!(!out.status.success());
}

#[test]
fn bad_config_exits_nonzero_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, r#"{"train": {"batch_size": 0}}"#).unwrap();
    let out = bin(&["synth", "--config", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");

    std::fs::write(&path, r#"{"trian": {}}"#).unwrap();
    let out = bin(&["synth", "--config", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = bin(&["synth", "--no-such-flag"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}
