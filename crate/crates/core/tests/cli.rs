mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use common::{bin, read, run_cli, MockStac};
use rhcd::synth::{self, SceneSpec};

fn synth_demo(dir: &Path) -> PathBuf {
    let out = run_cli(&["synth", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    PathBuf::from(printed.trim())
}

fn lines(path: &Path) -> Vec<String> {
    String::from_utf8(read(path)).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn shipped_demo_scene_matches_builtin_spec() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/scene.json");
    let shipped: SceneSpec = serde_json::from_slice(&read(&path)).unwrap();
    assert_eq!(
        serde_json::to_value(&shipped).unwrap(),
        serde_json::to_value(synth::demo_spec()).unwrap()
    );
}

#[test]
fn missing_config_is_usage_error() {
    let out = run_cli(&["tile", "--config", "/nonexistent/pipeline.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = run_cli(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_all_then_augment_split_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_demo(tmp.path());
    let c = cfg.to_str().unwrap();
    let out = run_cli(&["run-all", "-c", c, "--classifier", "builtin"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let work = tmp.path().join("work");
    for f in ["rhcd.geojson", "rhcd.csv", "predictions.ndjson", "manifests/run-all.json", "manifests/tile.json"] {
        assert!(work.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&read(&work.join("manifests/tile.json"))).unwrap();
    assert_eq!(manifest["stage"], "tile");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let crack_truth = {
        let truth: serde_json::Value = serde_json::from_slice(&read(&tmp.path().join("truth.json"))).unwrap();
        let indexed: BTreeSet<String> = lines(&work.join("patches/index.ndjson"))
            .iter()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["patch_id"].as_str().unwrap().to_string())
            .collect();
        indexed.iter().filter(|id| truth[id.as_str()] == "crack").count()
    };
    assert!(crack_truth > 0);

    assert!(run_cli(&["augment", "-c", c]).status.success());
    assert_eq!(lines(&work.join("augmented/index.ndjson")).len(), 7 * crack_truth);

    assert!(run_cli(&["split", "-c", c]).status.success());
    let split: serde_json::Value = serde_json::from_slice(&read(&work.join("split.json"))).unwrap();
    let total: usize = ["train", "validation", "test"].iter().map(|k| split[k].as_array().unwrap().len()).sum();
    assert_eq!(total, lines(&work.join("patches/index.ndjson")).len());

    let out = run_cli(&["evaluate", "-c", c]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&read(&work.join("metrics.json"))).unwrap();
    assert_eq!(m["classes"]["crack"]["tp"].as_u64().unwrap() + m["classes"]["crack"]["fn"].as_u64().unwrap(), crack_truth as u64);
}

#[test]
fn evaluate_matches_hand_counted_confusion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_demo(tmp.path());
    let truth = tmp.path().join("hand_truth.json");
    std::fs::write(
        &truth,
        r#"{"a":"crack","b":"crack","c":"no_crack","d":"no_crack","e":"crack"}"#,
    )
    .unwrap();
    let preds = tmp.path().join("hand_preds.ndjson");
    let rows = [("a", "crack"), ("b", "no_crack"), ("c", "crack"), ("d", "no_crack"), ("e", "crack")];
    let body: String = rows
        .iter()
        .map(|(id, l)| format!("{{\"patch_id\":\"{id}\",\"label\":\"{l}\",\"confidence\":0.5}}\n"))
        .collect();
    std::fs::write(&preds, body).unwrap();
    let out_path = tmp.path().join("m.json");
    let out = run_cli(&[
        "evaluate",
        "-c",
        cfg.to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&read(&out_path)).unwrap();
    // crack: tp a,e; fn b; fp c; tn d.
    let crack = &m["classes"]["crack"];
    assert_eq!((crack["tp"].as_u64(), crack["fp"].as_u64(), crack["fn"].as_u64(), crack["tn"].as_u64()), (Some(2), Some(1), Some(1), Some(1)));
    assert!((crack["precision"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((crack["f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let nc = &m["classes"]["no_crack"];
    assert_eq!((nc["tp"].as_u64(), nc["fp"].as_u64(), nc["fn"].as_u64(), nc["tn"].as_u64()), (Some(1), Some(1), Some(1), Some(2)));
    assert!((m["accuracy"].as_f64().unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn backend_failure_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_demo(tmp.path());
    let c = cfg.to_str().unwrap();
    let classifier = format!("exec:'{}' drop-one", bin("mock"));
    let out = run_cli(&["run-all", "-c", c, "--classifier", &classifier]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreachable_catalog_exits_3() {
    let server = MockStac::start();
    server.fail_next("/search", 1000, 503);
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = synth_demo(tmp.path());
    let mut cfg: serde_json::Value = serde_json::from_slice(&read(&cfg_path)).unwrap();
    cfg["paths"]["catalog"] = serde_json::json!(server.url());
    std::fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let c = cfg_path.to_str().unwrap();
    assert!(run_cli(&["extract-network", "-c", c]).status.success());
    assert!(run_cli(&["buffer", "-c", c]).status.success());
    let out = run_cli(&["fetch", "-c", c]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(server.count("/search"), 3);
}

#[test]
fn outputs_identical_across_parallelism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_demo(tmp.path());
    let c = cfg.to_str().unwrap();
    let w1 = tmp.path().join("w1");
    let w8 = tmp.path().join("w8");
    for (w, p) in [(&w1, "1"), (&w8, "8")] {
        let out = run_cli(&["run-all", "-c", c, "--parallelism", p, "--work-dir", w.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in [
        "rhcd.geojson",
        "rhcd.csv",
        "predictions.ndjson",
        "patches/index.ndjson",
        "correlation_lt_lst_a.json",
        "correlation_traffic_volume.json",
        "corridors.geojson",
    ] {
        assert_eq!(read(&w1.join(f)), read(&w8.join(f)), "{f} differs");
    }
}
