use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lanetopo::formats::{parse_scene, prediction_to_json};
use lanetopo::surrogate::{Prediction, PredictionMeta};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lanetopo"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn lanetopo")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str, scenes: &str) {
    let out = run(&["gen", "--scenes", scenes, "--seed", seed, "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            v.extend(files(&path));
        } else {
            v.push(path);
        }
    }
    v.sort();
    v
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "11", "5");
    gen(&b, "11", "5");
    let fa = files(&a);
    assert_eq!(fa.len(), 2 * 5 + 2);
    for f in fa {
        let rel = f.strip_prefix(&a).unwrap();
        if rel == Path::new("config_echo.toml") {
            continue;
        }
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
    let c = tmp.path().join("c");
    gen(&c, "12", "5");
    assert_ne!(
        fs::read(a.join("scenes/00000.json")).unwrap(),
        fs::read(c.join("scenes/00000.json")).unwrap()
    );
}

#[test]
fn eval_of_ground_truth_predictions_scores_one() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "2", "6");
    let preds = tmp.path().join("preds");
    fs::create_dir_all(&preds).unwrap();
    for (i, e) in files(&data.join("scenes")).iter().enumerate() {
        let scene = parse_scene(&fs::read_to_string(e).unwrap()).unwrap();
        let n = scene.graph.len();
        let meta = PredictionMeta {
            model_config_hash: "oracle".into(),
            seed: 0,
            scene_id: scene.id.clone(),
        };
        let pred = Prediction::new(
            scene.graph.lanes.clone(),
            vec![1.0; n],
            scene.graph.adjacency().unwrap(),
            meta,
        )
        .unwrap();
        fs::write(preds.join(format!("{i:05}.json")), prediction_to_json(&pred).unwrap()).unwrap();
    }
    let out_dir = tmp.path().join("eval");
    let out = run(&["eval", "--data", p(&data), "--predictions", p(&preds), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    for key in ["det_l", "top_ll", "ols_lane_only"] {
        assert_eq!(report[key].as_f64().unwrap(), 1.0, "{key}");
    }
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("label,det_l,top_ll,ols_lane_only"));
}

#[test]
fn train_eval_round_trip_and_config_echo_reload() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "4", "4");
    let tr = tmp.path().join("tr");
    let out = run(&["train", "--data", p(&data), "--epochs", "2", "--dim", "8", "--out", p(&tr)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tr.join("checkpoints/epoch_000.json").exists());
    assert!(tr.join("checkpoints/epoch_001.json").exists());
    let log = fs::read_to_string(tr.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    for line in log.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "epoch", "l_det", "l_top", "alpha", "lambda", "lambda1", "lambda2"] {
            assert!(rec.get(key).is_some(), "{key}");
        }
    }

    let tr2 = tmp.path().join("tr2");
    let echo = tr.join("config_echo.toml");
    let out = run(&["train", "--config", p(&echo), "--out", p(&tr2)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(tr.join("checkpoint.json")).unwrap(),
        fs::read(tr2.join("checkpoint.json")).unwrap()
    );

    let ev = tmp.path().join("ev");
    let ck = tr.join("checkpoint.json");
    let out = run(&["eval", "--data", p(&data), "--checkpoint", p(&ck), "--out", p(&ev)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files(&ev.join("predictions")).len(), 4);

    let pp = tmp.path().join("pp");
    let preds = ev.join("predictions");
    let out = run(&["postprocess", "--data", p(&data), "--predictions", p(&preds), "--out", p(&pp)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(pp.join("postprocess.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn curves_table_has_all_mappings() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["curves", "--points", "11", "--x-max", "5", "--out", p(tmp.path())]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("curves.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x,ours,gaussian,sigmoid,tanh");
    assert_eq!(lines.len(), 12);
    assert_eq!(lines[11].split(',').next().unwrap(), "5");
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let code = |args: &[&str]| run(args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["gen", "--mapping", "nope", "--out", p(tmp.path())]), 1);
    assert_eq!(code(&["gen", "--epochs", "notanumber"]), 1);
    let missing = tmp.path().join("missing");
    assert_eq!(code(&["eval", "--data", p(&missing), "--predictions", p(&missing), "--out", p(tmp.path())]), 2);

    let data = tmp.path().join("data");
    gen(&data, "1", "2");
    fs::write(data.join("scenes/00001.json"), "{\"id\": 3}").unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&["train", "--data", p(&data), "--out", p(&out)]), 2);

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(code(&["curves", "--config", p(&bad), "--out", p(tmp.path())]), 2);
}

#[test]
fn numerical_failure_exits_three() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "5", "2");
    let out_dir = tmp.path().join("o");
    let out = run(&["train", "--data", p(&data), "--epochs", "4", "--lr", "1e300", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train_log.jsonl"));
}
