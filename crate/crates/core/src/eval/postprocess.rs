use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_head::{distance_matrix, map_distance, matrix_std, MappingKind, MappingParams, StdMode};
use crate::surrogate::Prediction;

/// How the geometric topology is combined with an existing one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseRule {
    #[default]
    Max,
    Mean,
    /// `(1 - w) * existing + w * geometric`
    Weighted(f64),
}

impl FuseRule {
    pub fn validate(self) -> Result<()> {
        match self {
            FuseRule::Weighted(w) if !(0.0..=1.0).contains(&w) => {
                Err(Error::Invalid(format!("fuse weight {w} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(self, existing: f64, geometric: f64) -> f64 {
        match self {
            FuseRule::Max => existing.max(geometric),
            FuseRule::Mean => 0.5 * (existing + geometric),
            FuseRule::Weighted(w) => (1.0 - w) * existing + w * geometric,
        }
    }
}

impl fmt::Display for FuseRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FuseRule::Max => write!(f, "max"),
            FuseRule::Mean => write!(f, "mean"),
            FuseRule::Weighted(w) => write!(f, "weighted:{w}"),
        }
    }
}

impl FromStr for FuseRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rule = match s {
            "max" => FuseRule::Max,
            "mean" => FuseRule::Mean,
            _ => {
                let w = s
                    .strip_prefix("weighted:")
                    .and_then(|w| w.parse::<f64>().ok())
                    .ok_or_else(|| Error::Invalid(format!("unknown fuse rule {s:?}")))?;
                FuseRule::Weighted(w)
            }
        };
        rule.validate()?;
        Ok(rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub kind: MappingKind,
    pub mapping: MappingParams,
    pub std_mode: StdMode,
    pub fuse_rule: FuseRule,
    /// Lanes scoring below this keep their existing topology rows and columns.
    pub score_threshold: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            kind: MappingKind::Ours,
            mapping: MappingParams::default(),
            std_mode: StdMode::Population,
            fuse_rule: FuseRule::Max,
            score_threshold: 0.0,
        }
    }
}

/// Fuse a geometric topology computed from the predicted lanes into `pred`.
/// Lanes and scores are untouched.
pub fn geodist_postprocess(pred: &Prediction, config: &PostprocessConfig) -> Result<Prediction> {
    config.fuse_rule.validate()?;
    pred.validate()?;
    let kept: Vec<usize> = (0..pred.len())
        .filter(|&i| pred.scores[i] >= config.score_threshold)
        .collect();
    let mut out = pred.clone();
    if kept.is_empty() {
        return Ok(out);
    }
    let lanes: Vec<_> = kept.iter().map(|&i| pred.lanes[i].clone()).collect();
    let d = distance_matrix(&lanes);
    let sigma = matrix_std(&d, config.std_mode);
    let geo = map_distance(&d, config.mapping, config.kind, sigma)?;
    for (a, &i) in kept.iter().enumerate() {
        for (b, &j) in kept.iter().enumerate() {
            if i == j {
                continue;
            }
            let v = config.fuse_rule.apply(pred.topology.get(i, j), geo.get(a, b));
            out.topology.set(i, j, v.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}
