//! The synthetic benchmark and the ablation runs built on it.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{evaluate, geodist_postprocess, parallel_map, EvalConfig, MetricsReport, PostprocessConfig};
use crate::geo_head::MappingKind;
use crate::scene_gen::{generate_scene, perturb_scene, Layout, NoiseConfig, SceneConfig};
use crate::surrogate::{Prediction, PredictionMeta};
use crate::training::{train, HeadKind, Model, ModelConfig, Sample, TrainConfig};
use crate::types::Scene;

/// Offset separating test-split scene seeds from training seeds.
const TEST_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Layouts cycled through by scene index.
    pub layouts: Vec<Layout>,
    pub endpoint_sigma: f64,
    pub drop_prob: f64,
    pub distractor_count: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            train_scenes: 2000,
            test_scenes: 500,
            layouts: Layout::ALL.to_vec(),
            endpoint_sigma: 0.3,
            drop_prob: 0.0,
            distractor_count: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl BenchmarkConfig {
    /// Scene seed for scene `index` of `split`.
    pub fn scene_seed(&self, split: Split, index: usize) -> u64 {
        let base = self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
        match split {
            Split::Train => base,
            Split::Test => base.wrapping_add(TEST_SEED_OFFSET),
        }
    }

    pub fn noise(&self, scene_seed: u64) -> NoiseConfig {
        NoiseConfig {
            endpoint_sigma: self.endpoint_sigma,
            drop_prob: self.drop_prob,
            distractor_count: self.distractor_count,
            rng_seed: scene_seed ^ 0x9e37_79b9_7f4a_7c15,
        }
    }

    pub fn scene_config(&self, split: Split, index: usize) -> SceneConfig {
        let layout = self.layouts[index % self.layouts.len().max(1)];
        SceneConfig::standard(layout, self.scene_seed(split, index))
    }

    pub fn scenes(&self, split: Split) -> Result<Vec<Scene>> {
        let n = match split {
            Split::Train => self.train_scenes,
            Split::Test => self.test_scenes,
        };
        (0..n).map(|i| generate_scene(&self.scene_config(split, i))).collect()
    }

    /// Scenes with candidates perturbed under this config's noise.
    pub fn samples(&self, split: Split) -> Result<Vec<Sample>> {
        let scenes = self.scenes(split)?;
        self.perturb(split, scenes)
    }

    /// Perturb existing scenes (keeps geometry fixed across noise levels).
    pub fn perturb(&self, split: Split, scenes: Vec<Scene>) -> Result<Vec<Sample>> {
        scenes
            .into_iter()
            .enumerate()
            .map(|(i, scene)| {
                let candidates = perturb_scene(&scene, &self.noise(self.scene_seed(split, i)))?;
                Ok(Sample { scene, candidates })
            })
            .collect()
    }
}

/// Train a fresh model of the given configuration.
pub fn train_model(model_cfg: ModelConfig, train_cfg: &TrainConfig, data: &[Sample]) -> Result<Model> {
    let mut model = Model::new(model_cfg)?;
    train(&mut model, data, train_cfg, None)?;
    Ok(model)
}

pub fn predict_all(model: &Model, data: &[Sample], seed: u64, config_hash: &str) -> Result<Vec<Prediction>> {
    parallel_map(data.len(), |i| {
        model.predict(
            &data[i].candidates,
            PredictionMeta {
                model_config_hash: config_hash.to_string(),
                seed,
                scene_id: data[i].scene.id.clone(),
            },
        )
    })
    .into_iter()
    .collect()
}

pub fn evaluate_predictions(preds: &[Prediction], data: &[Sample], source: &str) -> Result<MetricsReport> {
    let scenes: Vec<Scene> = data.iter().map(|s| s.scene.clone()).collect();
    let cfg = EvalConfig {
        topology_source: source.to_string(),
        ..Default::default()
    };
    evaluate(preds, &scenes, &cfg)
}

/// Describes how a model's reported topology is produced.
pub fn topology_source(cfg: &ModelConfig) -> String {
    format!(
        "head={} mapping={} calibration={:?}",
        cfg.head.name(),
        cfg.mapping.name(),
        cfg.calibration
    )
    .to_lowercase()
}

pub fn train_and_evaluate(
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &[Sample],
    test_data: &[Sample],
) -> Result<(Model, MetricsReport)> {
    let model = train_model(model_cfg, train_cfg, train_data)?;
    let preds = predict_all(&model, test_data, train_cfg.seed, "")?;
    let report = evaluate_predictions(&preds, test_data, &topology_source(&model.config))?;
    Ok((model, report))
}

/// One trained model and its test metrics per head kind.
pub fn head_ablation(
    heads: &[HeadKind],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &[Sample],
    test_data: &[Sample],
) -> Result<Vec<(HeadKind, Model, MetricsReport)>> {
    heads
        .iter()
        .map(|&head| {
            let cfg = ModelConfig { head, ..base.clone() };
            let (m, r) = train_and_evaluate(cfg, train_cfg, train_data, test_data)?;
            Ok((head, m, r))
        })
        .collect()
}

/// One geodist-only model per mapping kind.
pub fn mapping_ablation(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &[Sample],
    test_data: &[Sample],
) -> Result<Vec<(MappingKind, MetricsReport)>> {
    MappingKind::ALL
        .iter()
        .map(|&mapping| {
            let cfg = ModelConfig {
                head: HeadKind::GeoDistOnly,
                mapping,
                ..base.clone()
            };
            let (_, r) = train_and_evaluate(cfg, train_cfg, train_data, test_data)?;
            Ok((mapping, r))
        })
        .collect()
}

/// Metrics before and after geometric post-processing of frozen predictions.
pub fn postprocess_comparison(
    preds: &[Prediction],
    data: &[Sample],
    config: &PostprocessConfig,
) -> Result<(MetricsReport, MetricsReport, Vec<Prediction>)> {
    let before = evaluate_predictions(preds, data, "frozen")?;
    let processed = parallel_map(preds.len(), |i| geodist_postprocess(&preds[i], config))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let after = evaluate_predictions(&processed, data, &format!("postprocess fuse_rule={}", config.fuse_rule))?;
    Ok((before, after, processed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub head: HeadKind,
    pub sigma: f64,
    pub report: MetricsReport,
}

/// Train and evaluate each head at each noise level, on fixed scene geometry.
pub fn noise_sweep(
    sigmas: &[f64],
    heads: &[HeadKind],
    bench: &BenchmarkConfig,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<NoisePoint>> {
    let train_scenes = bench.scenes(Split::Train)?;
    let test_scenes = bench.scenes(Split::Test)?;
    let mut out = Vec::new();
    for &sigma in sigmas {
        let b = BenchmarkConfig {
            endpoint_sigma: sigma,
            ..bench.clone()
        };
        let train_data = b.perturb(Split::Train, train_scenes.clone())?;
        let test_data = b.perturb(Split::Test, test_scenes.clone())?;
        for &head in heads {
            let cfg = ModelConfig { head, ..base.clone() };
            let (_, report) = train_and_evaluate(cfg, train_cfg, &train_data, &test_data)?;
            out.push(NoisePoint { head, sigma, report });
        }
    }
    Ok(out)
}

pub const NOISE_CSV_HEADER: &str = "head,sigma,det_l,top_ll,ols_lane_only";

pub fn noise_csv(points: &[NoisePoint]) -> String {
    let mut s = String::from(NOISE_CSV_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            p.head.name(),
            p.sigma,
            p.report.det_l,
            p.report.top_ll,
            p.report.ols_lane_only
        ));
    }
    s
}

/// `TOP_ll(first sigma) - TOP_ll(last sigma)` for one head, in sweep order.
pub fn total_drop(points: &[NoisePoint], head: HeadKind) -> Option<f64> {
    let mine: Vec<&NoisePoint> = points.iter().filter(|p| p.head == head).collect();
    Some(mine.first()?.report.top_ll - mine.last()?.report.top_ll)
}
