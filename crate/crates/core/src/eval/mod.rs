//! Lane detection and topology metrics, and train-free geometric post-processing.

mod metrics;
mod postprocess;
mod report;

pub use metrics::{
    average_precision, confidence_order, det_l, det_l_with, discrete_frechet, ols_lane_only, top_ll,
    topology_matching, DetResult, ThresholdResult, DET_THRESHOLDS, TOP_MATCH_THRESHOLD,
};
pub use postprocess::{geodist_postprocess, FuseRule, PostprocessConfig};
pub use report::{
    csv_table, evaluate, evaluate_scene, parallel_map, EvalConfig, MetricsReport, SceneMetrics, CSV_HEADER,
};
