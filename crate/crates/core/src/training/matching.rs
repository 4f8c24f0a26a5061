use crate::error::{Error, Result};
use crate::types::{LaneGraph, LaneLine};

use super::losses::{l1_lane_loss, LossWeights};

/// One-to-one assignment between predictions and ground-truth lanes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// `(prediction, ground truth)` pairs, sorted by prediction index.
    pub assignment: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

impl MatchResult {
    pub fn from_pairs(pairs: Vec<(usize, usize)>, n_pred: usize, n_gt: usize) -> Result<Self> {
        let mut pred_used = vec![false; n_pred];
        let mut gt_used = vec![false; n_gt];
        for &(p, g) in &pairs {
            if p >= n_pred || g >= n_gt {
                return Err(Error::Invalid(format!("pair ({p}, {g}) out of range")));
            }
            if pred_used[p] || gt_used[g] {
                return Err(Error::Invalid(format!("pair ({p}, {g}) reuses an index")));
            }
            pred_used[p] = true;
            gt_used[g] = true;
        }
        let mut assignment = pairs;
        assignment.sort_unstable();
        Ok(MatchResult {
            assignment,
            unmatched_preds: (0..n_pred).filter(|&i| !pred_used[i]).collect(),
            unmatched_gts: (0..n_gt).filter(|&i| !gt_used[i]).collect(),
        })
    }

    /// Ground-truth index for each prediction.
    pub fn pred_to_gt(&self, n_pred: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_pred];
        for &(p, g) in &self.assignment {
            out[p] = Some(g);
        }
        out
    }

    /// Prediction index for each ground-truth lane.
    pub fn gt_to_pred(&self, n_gt: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_gt];
        for &(p, g) in &self.assignment {
            out[g] = Some(p);
        }
        out
    }
}

/// Minimum-cost assignment on a rectangular cost matrix (rows x cols).
/// Returns `min(rows, cols)` `(row, col)` pairs sorted by row.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return vec![];
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![];
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        let mut pairs: Vec<(usize, usize)> = solve_assignment(&t).into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        return pairs;
    }
    // Kuhn-Munkres with potentials, rows <= cols, 1-based internal indexing.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Sum of the selected entries, accumulated in row order.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(i, j)| cost[i][j]).sum()
}

/// `w_cls * (1 - score) + w_reg * L1(pred, gt)` for every pair.
pub fn match_cost_matrix(
    lanes: &[LaneLine],
    scores: &[f64],
    gt: &LaneGraph,
    weights: &LossWeights,
) -> Result<Vec<Vec<f64>>> {
    lanes
        .iter()
        .zip(scores)
        .map(|(l, &s)| {
            gt.lanes
                .iter()
                .map(|g| Ok(weights.cls * (1.0 - s) + weights.reg * l1_lane_loss(l, g)?))
                .collect()
        })
        .collect()
}

/// Optimal one-to-one matching of predicted lanes to ground truth.
pub fn hungarian_match(
    lanes: &[LaneLine],
    scores: &[f64],
    gt: &LaneGraph,
    weights: &LossWeights,
) -> Result<MatchResult> {
    if lanes.len() != scores.len() {
        return Err(Error::Invalid(format!(
            "{} lanes but {} scores",
            lanes.len(),
            scores.len()
        )));
    }
    let cost = match_cost_matrix(lanes, scores, gt, weights)?;
    MatchResult::from_pairs(solve_assignment(&cost), lanes.len(), gt.len())
}
