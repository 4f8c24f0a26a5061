use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::Prediction;
use crate::types::Scene;

use super::metrics::{det_l_with, ols_lane_only, top_ll, DET_THRESHOLDS, TOP_MATCH_THRESHOLD};

/// Settings a metrics run is computed under; echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub det_thresholds: Vec<f64>,
    pub top_match_threshold: f64,
    /// Free-form description of how the topology was produced (fusion rule, calibration).
    pub topology_source: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            det_thresholds: DET_THRESHOLDS.to_vec(),
            top_match_threshold: TOP_MATCH_THRESHOLD,
            topology_source: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub det_l: f64,
    /// `None` when the scene has no ground-truth edges.
    pub top_ll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub det_l: f64,
    pub top_ll: f64,
    /// `(DET_l + sqrt(TOP_ll)) / 2`, lane terms only.
    pub ols_lane_only: f64,
    pub scenes: usize,
    pub scored_scenes: usize,
    pub per_scene: Vec<SceneMetrics>,
    pub config: EvalConfig,
}

pub const CSV_HEADER: &str = "label,det_l,top_ll,ols_lane_only,scenes,scored_scenes";

impl MetricsReport {
    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{},{}",
            label, self.det_l, self.top_ll, self.ols_lane_only, self.scenes, self.scored_scenes
        )
    }
}

/// Render a CSV table with the fixed header; newline-terminated.
pub fn csv_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&r.csv_row(label));
        out.push('\n');
    }
    out
}

pub fn evaluate_scene(pred: &Prediction, scene: &Scene, config: &EvalConfig) -> SceneMetrics {
    SceneMetrics {
        scene_id: scene.id.clone(),
        det_l: det_l_with(pred, &scene.graph, &config.det_thresholds).score,
        top_ll: top_ll(pred, &scene.graph, config.top_match_threshold),
    }
}

/// Dataset metrics: DET_l averaged over scenes, TOP_ll over scenes with edges.
pub fn evaluate(preds: &[Prediction], scenes: &[Scene], config: &EvalConfig) -> Result<MetricsReport> {
    if preds.len() != scenes.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} scenes",
            preds.len(),
            scenes.len()
        )));
    }
    let per_scene = parallel_map(preds.len(), |i| evaluate_scene(&preds[i], &scenes[i], config));
    let n = per_scene.len();
    let det = if n == 0 {
        0.0
    } else {
        per_scene.iter().map(|s| s.det_l).sum::<f64>() / n as f64
    };
    let scored: Vec<f64> = per_scene.iter().filter_map(|s| s.top_ll).collect();
    let top = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(MetricsReport {
        det_l: det,
        top_ll: top,
        ols_lane_only: ols_lane_only(det, top),
        scenes: n,
        scored_scenes: scored.len(),
        per_scene,
        config: config.clone(),
    })
}

/// Order-preserving map over `0..n` split across the available cores.
pub fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
