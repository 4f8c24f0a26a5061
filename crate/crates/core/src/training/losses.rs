use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{focal_value, FocalSpec, Matrix, Tape, Var};
use crate::types::{LaneLine, TopologyMatrix};

use super::matching::MatchResult;

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;

/// Classification focal loss settings.
pub const CLS_FOCAL: FocalSpec = FocalSpec {
    gamma: FOCAL_GAMMA,
    alpha: Some(FOCAL_ALPHA),
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub top: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.5,
            reg: 0.025,
            top: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cls", self.cls), ("reg", self.reg), ("top", self.top)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("loss weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Form of the topology supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyLossForm {
    #[default]
    Focal,
    Bce,
}

impl TopologyLossForm {
    pub fn spec(self) -> FocalSpec {
        match self {
            TopologyLossForm::Focal => CLS_FOCAL,
            TopologyLossForm::Bce => FocalSpec {
                gamma: 0.0,
                alpha: None,
            },
        }
    }
}

/// Mean focal loss over `scores` against binary `labels`.
pub fn focal_loss(scores: &[f64], labels: &[f64], gamma: f64, alpha: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let spec = FocalSpec {
        gamma,
        alpha: Some(alpha),
    };
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| focal_value(p, y, spec))
        .sum();
    Ok(total / scores.len() as f64)
}

/// Mean absolute coordinate difference between two lanes of equal length.
pub fn l1_lane_loss(a: &LaneLine, b: &LaneLine) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "lanes have {} and {} points",
            a.len(),
            b.len()
        )));
    }
    let fa = a.flatten();
    let fb = b.flatten();
    Ok(fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum::<f64>() / fa.len() as f64)
}

/// Targets and weights for topology supervision over `n_pred` predictions.
///
/// Off-diagonal pairs of matched predictions take the ground-truth adjacency;
/// any pair with an unmatched side is a negative. The diagonal is ignored.
pub fn topology_targets(n_pred: usize, gt_adjacency: &TopologyMatrix, matching: &MatchResult) -> (Matrix, Matrix) {
    let to_gt = matching.pred_to_gt(n_pred);
    let mut targets = Matrix::zeros(n_pred, n_pred);
    let mut weights = Matrix::zeros(n_pred, n_pred);
    for i in 0..n_pred {
        for j in 0..n_pred {
            if i == j {
                continue;
            }
            weights.set(i, j, 1.0);
            if let (Some(gi), Some(gj)) = (to_gt[i], to_gt[j]) {
                targets.set(i, j, gt_adjacency.get(gi, gj));
            }
        }
    }
    (targets, weights)
}

/// Topology loss value for a plain matrix of probabilities.
pub fn topology_loss(
    g: &Matrix,
    gt_adjacency: &TopologyMatrix,
    matching: &MatchResult,
    form: TopologyLossForm,
) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(g.clone())?;
    let l = topology_loss_on_tape(&mut tape, v, gt_adjacency, matching, form)?;
    Ok(tape.value(l).item())
}

/// Topology loss recorded on `tape` against the matched ground truth.
pub fn topology_loss_on_tape(
    tape: &mut Tape,
    g: Var,
    gt_adjacency: &TopologyMatrix,
    matching: &MatchResult,
    form: TopologyLossForm,
) -> Result<Var> {
    let n = tape.value(g).rows();
    let (targets, weights) = topology_targets(n, gt_adjacency, matching);
    tape.focal(g, targets, weights, form.spec())
}
