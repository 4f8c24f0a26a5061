use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lanetopo::eval::{csv_table, evaluate, EvalConfig, MetricsReport, PostprocessConfig};
use lanetopo::experiments::{
    mapping_ablation, noise_csv, noise_sweep, postprocess_comparison, predict_all, topology_source, Split,
};
use lanetopo::formats::{
    candidates_to_json, config_hash, parse_candidates, parse_checkpoint, parse_manifest, parse_prediction,
    parse_scene, prediction_to_json, scene_to_json, Checkpoint, Manifest, ManifestEntry,
};
use lanetopo::geo_head::{mapping_value, MappingKind};
use lanetopo::surrogate::Prediction;
use lanetopo::training::{train_epoch, Model, Sample};
use lanetopo::types::Scene;

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ECHO_FILE: &str = "config_echo.toml";

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parsed<T>(path: &Path, r: lanetopo::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Other(e.to_string()))
}

fn start(cfg: &RunConfig) -> Result<(), CliError> {
    write(&cfg.out.join(ECHO_FILE), &cfg.echo()?)
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required for this command")))
}

/// Read a dataset written by `gen`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>, CliError> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest = parsed(&mpath, parse_manifest(&read(&mpath)?))?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let sp = dir.join(&e.scene);
            let cp = dir.join(&e.candidates);
            let scene = parsed(&sp, parse_scene(&read(&sp)?))?;
            let candidates = parsed(&cp, parse_candidates(&read(&cp)?))?;
            if candidates.scene_id != scene.id {
                return Err(CliError::Input(format!(
                    "{}: candidates belong to scene {:?}, not {:?}",
                    cp.display(),
                    candidates.scene_id,
                    scene.id
                )));
            }
            Ok(Sample { scene, candidates })
        })
        .collect()
}

pub fn gen(cfg: &RunConfig) -> Result<(), CliError> {
    start(cfg)?;
    let mut bench = cfg.benchmark(cfg.sigma[0])?;
    bench.train_scenes = cfg.scenes;
    let samples = bench.samples(Split::Train)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let scene = format!("scenes/{i:05}.json");
        let candidates = format!("candidates/{i:05}.json");
        write(&cfg.out.join(&scene), &scene_to_json(&s.scene)?)?;
        write(&cfg.out.join(&candidates), &candidates_to_json(&s.candidates)?)?;
        entries.push(ManifestEntry {
            scene,
            candidates,
            seed: bench.scene_seed(Split::Train, i),
        });
    }
    let generator = serde_json::to_value(&bench).map_err(|e| CliError::Other(e.to_string()))?;
    let manifest = Manifest::new(cfg.seed, generator, entries);
    write(&cfg.out.join(MANIFEST_FILE), &manifest.to_json()?)?;
    println!("wrote {} scenes to {}", samples.len(), cfg.out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    start(cfg)?;
    let data = load_dataset(require(&cfg.data, "data")?)?;
    let tcfg = cfg.train_config();
    let mut model = Model::new(cfg.model_config()?)?;
    let log_path = cfg.out.join("train_log.jsonl");
    let file = fs::File::create(&log_path).map_err(|e| CliError::Output(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    let mut opt = tcfg.optimizer();
    let mut epochs = Vec::new();
    for epoch in 0..tcfg.epochs {
        let m = train_epoch(&mut model, &mut opt, &data, &tcfg, epoch, Some(&mut log)).map_err(|e| match e {
            lanetopo::Error::NonFiniteLoss { .. } | lanetopo::Error::NonFinite { .. } => {
                let _ = log.flush();
                CliError::Numerical {
                    message: e.to_string(),
                    log: log_path.clone(),
                }
            }
            other => other.into(),
        })?;
        let ck = Checkpoint::from_model(&model, epoch)?;
        write(&cfg.out.join(format!("checkpoints/epoch_{epoch:03}.json")), &ck.to_json()?)?;
        println!(
            "epoch {epoch}: det {:.5} top {:.5} total {:.5}",
            m.mean_det, m.mean_top, m.mean_total
        );
        epochs.push(m);
    }
    log.flush().map_err(|e| CliError::Output(e.to_string()))?;
    let ck = Checkpoint::from_model(&model, tcfg.epochs - 1)?;
    write(&cfg.out.join("checkpoint.json"), &ck.to_json()?)?;
    write(&cfg.out.join("train_metrics.json"), &json(&epochs)?)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let ck = parsed(path, parse_checkpoint(&read(path)?))?;
    parsed(path, ck.into_model())
}

/// Prediction files in `dir`, ordered to match `scenes` by scene id.
pub fn load_predictions(dir: &Path, scenes: &[Scene]) -> Result<(Vec<Prediction>, Vec<String>), CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    let mut by_scene: BTreeMap<String, (Prediction, String)> = BTreeMap::new();
    for p in names {
        let pred = parsed(&p, parse_prediction(&read(&p)?))?;
        let file = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        if by_scene.insert(pred.meta.scene_id.clone(), (pred, file)).is_some() {
            return Err(CliError::Input(format!("{}: duplicate prediction for a scene", p.display())));
        }
    }
    scenes
        .iter()
        .map(|s| {
            by_scene
                .remove(&s.id)
                .ok_or_else(|| CliError::Input(format!("no prediction for scene {:?} in {}", s.id, dir.display())))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().unzip())
}

fn write_predictions(dir: &Path, preds: &[Prediction], names: &[String]) -> Result<(), CliError> {
    for (p, name) in preds.iter().zip(names) {
        write(&dir.join(name), &prediction_to_json(p)?)?;
    }
    Ok(())
}

fn eval_config(cfg: &RunConfig, source: String) -> EvalConfig {
    EvalConfig {
        top_match_threshold: cfg.match_threshold,
        topology_source: source,
        ..EvalConfig::default()
    }
}

fn write_report(out: &Path, stem: &str, label: &str, r: &MetricsReport) -> Result<(), CliError> {
    write(&out.join(format!("{stem}.json")), &json(r)?)?;
    write(&out.join(format!("{stem}.csv")), &csv_table([(label, r)]))?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    start(cfg)?;
    let data = load_dataset(require(&cfg.data, "data")?)?;
    let scenes: Vec<Scene> = data.iter().map(|s| s.scene.clone()).collect();
    let (preds, source) = match (&cfg.checkpoint, &cfg.predictions) {
        (Some(ck), _) => {
            let model = load_model(ck)?;
            let hash = config_hash(&model.config)?;
            let preds = predict_all(&model, &data, cfg.seed, &hash)?;
            let names: Vec<String> = (0..preds.len()).map(|i| format!("{i:05}.json")).collect();
            write_predictions(&cfg.out.join("predictions"), &preds, &names)?;
            (preds, topology_source(&model.config))
        }
        (None, Some(dir)) => (load_predictions(dir, &scenes)?.0, format!("files {}", dir.display())),
        (None, None) => return Err(CliError::Usage("eval needs --checkpoint or --predictions".into())),
    };
    let report = evaluate(&preds, &scenes, &eval_config(cfg, source))?;
    write_report(&cfg.out, "metrics", "eval", &report)?;
    println!(
        "DET_l {:.4}  TOP_ll {:.4}  OLS_lane_only {:.4}  ({} scenes)",
        report.det_l, report.top_ll, report.ols_lane_only, report.scenes
    );
    Ok(())
}

pub fn ablate_mapping(cfg: &RunConfig) -> Result<(), CliError> {
    start(cfg)?;
    let bench = cfg.benchmark(cfg.sigma[0])?;
    let train = bench.samples(Split::Train)?;
    let test = bench.samples(Split::Test)?;
    let rows = mapping_ablation(&cfg.model_config()?, &cfg.train_config(), &train, &test)?;
    let csv = csv_table(rows.iter().map(|(k, r)| (k.name(), r)));
    write(&cfg.out.join("ablate_mapping.csv"), &csv)?;
    let reports: BTreeMap<&str, &MetricsReport> = rows.iter().map(|(k, r)| (k.name(), r)).collect();
    write(&cfg.out.join("ablate_mapping.json"), &json(&reports)?)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate_heads(cfg: &RunConfig) -> Result<(), CliError> {
    start(cfg)?;
    let bench = cfg.benchmark(cfg.sigma[0])?;
    let points = noise_sweep(
        &cfg.sigma,
        &cfg.head_list()?,
        &bench,
        &cfg.model_config()?,
        &cfg.train_config(),
    )?;
    let csv = noise_csv(&points);
    write(&cfg.out.join("ablate_heads.csv"), &csv)?;
    write(&cfg.out.join("ablate_heads.json"), &json(&points)?)?;
    print!("{csv}");
    Ok(())
}

pub fn postprocess(cfg: &RunConfig) -> Result<(), CliError> {
    start(cfg)?;
    let data = load_dataset(require(&cfg.data, "data")?)?;
    let scenes: Vec<Scene> = data.iter().map(|s| s.scene.clone()).collect();
    let dir = require(&cfg.predictions, "predictions")?;
    let (preds, names) = load_predictions(dir, &scenes)?;
    let pp = PostprocessConfig {
        kind: cfg.mapping_kind()?,
        mapping: cfg.mapping_params()?,
        fuse_rule: cfg.fuse()?,
        score_threshold: cfg.score_threshold,
        ..PostprocessConfig::default()
    };
    let (mut before, mut after, processed) = postprocess_comparison(&preds, &data, &pp)?;
    before.config.top_match_threshold = cfg.match_threshold;
    after.config.top_match_threshold = cfg.match_threshold;
    if cfg.match_threshold != lanetopo::eval::TOP_MATCH_THRESHOLD {
        before = evaluate(&preds, &scenes, &before.config)?;
        after = evaluate(&processed, &scenes, &after.config)?;
    }
    write_predictions(&cfg.out.join("predictions"), &processed, &names)?;
    write(&cfg.out.join("metrics_before.json"), &json(&before)?)?;
    write(&cfg.out.join("metrics_after.json"), &json(&after)?)?;
    let csv = csv_table([("before", &before), ("after", &after)]);
    write(&cfg.out.join("postprocess.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn curves(cfg: &RunConfig) -> Result<(), CliError> {
    start(cfg)?;
    let params = cfg.mapping_params()?;
    let mut csv = String::from("x");
    for k in MappingKind::ALL {
        csv.push(',');
        csv.push_str(k.name());
    }
    csv.push('\n');
    for i in 0..cfg.points {
        let x = cfg.x_max * i as f64 / (cfg.points - 1) as f64;
        csv.push_str(&format!("{x}"));
        for k in MappingKind::ALL {
            csv.push_str(&format!(",{}", mapping_value(k, x, params, 1.0)));
        }
        csv.push('\n');
    }
    write(&cfg.out.join("curves.csv"), &csv)?;
    println!("wrote {} samples to {}", cfg.points, cfg.out.join("curves.csv").display());
    Ok(())
}
