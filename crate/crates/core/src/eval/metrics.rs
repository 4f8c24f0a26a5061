use serde::{Deserialize, Serialize};

use crate::surrogate::Prediction;
use crate::training::solve_assignment;
use crate::types::{LaneGraph, LaneLine};

/// Fréchet thresholds for lane detection, meters.
pub const DET_THRESHOLDS: [f64; 3] = [1.0, 2.0, 3.0];

/// Pairs farther apart than this are not matched for topology scoring, meters.
pub const TOP_MATCH_THRESHOLD: f64 = 1.5;

/// Discrete Fréchet distance between two point sequences.
pub fn discrete_frechet(a: &LaneLine, b: &LaneLine) -> f64 {
    let (pa, pb) = (a.points(), b.points());
    let (n, m) = (pa.len(), pb.len());
    let mut ca = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = pa[i].distance(&pb[j]);
            ca[i * m + j] = match (i, j) {
                (0, 0) => d,
                (0, _) => ca[j - 1].max(d),
                (_, 0) => ca[(i - 1) * m].max(d),
                _ => ca[(i - 1) * m + j]
                    .min(ca[(i - 1) * m + j - 1])
                    .min(ca[i * m + j - 1])
                    .max(d),
            };
        }
    }
    ca[n * m - 1]
}

/// Prediction indices ordered by descending confidence, then ascending index.
pub fn confidence_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Average precision of a ranked TP/FP list against `n_positive` positives:
/// the sum of precision at each true positive, divided by `n_positive`.
pub fn average_precision(ranked_hits: &[bool], n_positive: usize) -> f64 {
    if n_positive == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, &hit) in ranked_hits.iter().enumerate() {
        if hit {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    sum / n_positive as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub ap: f64,
    /// `(prediction, ground truth)` true positives in ranking order.
    pub matches: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetResult {
    pub score: f64,
    pub per_threshold: Vec<ThresholdResult>,
}

fn frechet_table(pred: &[LaneLine], gt: &[LaneLine]) -> Vec<Vec<f64>> {
    pred.iter()
        .map(|p| gt.iter().map(|g| discrete_frechet(p, g)).collect())
        .collect()
}

/// Greedy confidence-ordered detection AP, averaged over [`DET_THRESHOLDS`].
pub fn det_l(pred: &Prediction, gt: &LaneGraph) -> DetResult {
    det_l_with(pred, gt, &DET_THRESHOLDS)
}

pub fn det_l_with(pred: &Prediction, gt: &LaneGraph, thresholds: &[f64]) -> DetResult {
    let dist = frechet_table(&pred.lanes, &gt.lanes);
    let order = confidence_order(&pred.scores);
    let per_threshold: Vec<ThresholdResult> = thresholds
        .iter()
        .map(|&t| {
            let mut taken = vec![false; gt.len()];
            let mut hits = Vec::with_capacity(order.len());
            let mut matches = Vec::new();
            for &p in &order {
                let best = (0..gt.len())
                    .filter(|&g| !taken[g] && dist[p][g] < t)
                    .min_by(|&a, &b| dist[p][a].total_cmp(&dist[p][b]).then(a.cmp(&b)));
                match best {
                    Some(g) => {
                        taken[g] = true;
                        matches.push((p, g));
                        hits.push(true);
                    }
                    None => hits.push(false),
                }
            }
            let ap = if gt.is_empty() {
                if pred.is_empty() {
                    1.0
                } else {
                    0.0
                }
            } else {
                average_precision(&hits, gt.len())
            };
            ThresholdResult {
                threshold: t,
                ap,
                matches,
            }
        })
        .collect();
    let score = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|r| r.ap).sum::<f64>() / per_threshold.len() as f64
    };
    DetResult { score, per_threshold }
}

/// One-to-one matching minimizing total Fréchet distance; pairs above `threshold` dropped.
/// Returns the prediction index for each ground-truth lane.
pub fn topology_matching(pred: &[LaneLine], gt: &[LaneLine], threshold: f64) -> Vec<Option<usize>> {
    let dist = frechet_table(pred, gt);
    let mut out = vec![None; gt.len()];
    for (p, g) in solve_assignment(&dist) {
        if dist[p][g] <= threshold {
            out[g] = Some(p);
        }
    }
    out
}

/// Per-vertex topology AP, or `None` when the ground truth has no edges.
pub fn top_ll(pred: &Prediction, gt: &LaneGraph, match_threshold: f64) -> Option<f64> {
    if gt.edges.is_empty() {
        return None;
    }
    let to_pred = topology_matching(&pred.lanes, &gt.lanes, match_threshold);
    let mut total = 0.0;
    let mut vertices = 0usize;
    for i in 0..gt.len() {
        let n_true = gt.successors(i).count();
        if n_true == 0 {
            continue;
        }
        vertices += 1;
        let Some(p) = to_pred[i] else { continue };
        // candidate edges (confidence, predicted target index, is true edge)
        let mut cands: Vec<(f64, usize, bool)> = (0..gt.len())
            .filter(|&j| j != i)
            .filter_map(|j| to_pred[j].map(|q| (pred.topology.get(p, q), q, gt.edges.contains(&(i, j)))))
            .filter(|c| c.0 > 0.0)
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let hits: Vec<bool> = cands.iter().map(|c| c.2).collect();
        total += average_precision(&hits, n_true);
    }
    Some(total / vertices as f64)
}

/// Lane-only overall score `(det + sqrt(top)) / 2`.
pub fn ols_lane_only(det_l: f64, top_ll: f64) -> f64 {
    0.5 * (det_l + top_ll.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::PredictionMeta;
    use crate::types::{Point3, TopologyMatrix};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn line(pts: &[[f64; 3]]) -> LaneLine {
        LaneLine::new(pts.iter().map(|p| Point3::try_from(*p).unwrap()).collect()).unwrap()
    }

    fn straight(y: f64, x0: f64) -> LaneLine {
        line(&(0..11).map(|k| [x0 + k as f64, y, 0.0]).collect::<Vec<_>>())
    }

    fn recursive_frechet(a: &[Point3], b: &[Point3], i: usize, j: usize) -> f64 {
        let d = a[i].distance(&b[j]);
        if i == 0 && j == 0 {
            d
        } else if i == 0 {
            recursive_frechet(a, b, 0, j - 1).max(d)
        } else if j == 0 {
            recursive_frechet(a, b, i - 1, 0).max(d)
        } else {
            let prev = recursive_frechet(a, b, i - 1, j)
                .min(recursive_frechet(a, b, i - 1, j - 1))
                .min(recursive_frechet(a, b, i, j - 1));
            prev.max(d)
        }
    }

    #[test]
    fn frechet_examples() {
        let a = straight(0.0, 0.0);
        assert_eq!(discrete_frechet(&a, &a), 0.0);
        assert!((discrete_frechet(&a, &a.translated(0.0, 0.5, 0.0)) - 0.5).abs() < 1e-12);
        let p = line(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let q = line(&[[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
        assert_eq!(discrete_frechet(&p, &q), 1.0);
    }

    fn pred(lanes: Vec<LaneLine>, scores: Vec<f64>, topology: TopologyMatrix) -> Prediction {
        Prediction::new(lanes, scores, topology, PredictionMeta::default()).unwrap()
    }

    #[test]
    fn det_hand_example() {
        let g0 = straight(0.0, 0.0);
        let g1 = straight(10.0, 0.0);
        let gt = LaneGraph::new(vec![g0.clone(), g1.clone()], BTreeSet::new());
        let far = g1.translated(0.0, 2.5, 0.0);
        let p = pred(vec![g0, far], vec![0.9, 0.8], TopologyMatrix::zeros(2));
        let r = det_l(&p, &gt);
        // t=1,2: one TP at rank 1 -> AP 1/2; t=3: two TPs -> AP 1
        let aps: Vec<f64> = r.per_threshold.iter().map(|t| t.ap).collect();
        assert_eq!(aps, vec![0.5, 0.5, 1.0]);
        assert!((r.score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn det_perfect_and_empty() {
        let gt = LaneGraph::new(vec![straight(0.0, 0.0), straight(5.0, 0.0)], BTreeSet::new());
        let p = pred(gt.lanes.clone(), vec![1.0, 1.0], TopologyMatrix::zeros(2));
        assert_eq!(det_l(&p, &gt).score, 1.0);
        assert_eq!(det_l(&Prediction::empty(PredictionMeta::default()), &gt).score, 0.0);
    }

    #[test]
    fn top_chain_example() {
        let lanes = vec![straight(0.0, 0.0), straight(0.0, 10.0), straight(0.0, 20.0)];
        let gt = LaneGraph::new(lanes.clone(), [(0, 1), (1, 2)].into_iter().collect());
        let mut t = TopologyMatrix::zeros(3);
        t.set(0, 1, 0.9);
        t.set(0, 2, 0.8);
        t.set(1, 2, 0.7);
        let p = pred(lanes.clone(), vec![1.0; 3], t);
        // vertex 0: [TP, FP] -> 1; vertex 1: [TP] -> 1
        assert_eq!(top_ll(&p, &gt, TOP_MATCH_THRESHOLD), Some(1.0));

        let mut t = TopologyMatrix::zeros(3);
        t.set(0, 1, 0.7);
        t.set(0, 2, 0.8);
        t.set(1, 2, 0.7);
        let p = pred(lanes.clone(), vec![1.0; 3], t);
        // vertex 0: [FP, TP] -> 1/2; vertex 1 -> 1
        assert_eq!(top_ll(&p, &gt, TOP_MATCH_THRESHOLD), Some(0.75));

        let p = pred(lanes.clone(), vec![1.0; 3], TopologyMatrix::zeros(3));
        assert_eq!(top_ll(&p, &gt, TOP_MATCH_THRESHOLD), Some(0.0));
        let no_edges = LaneGraph::new(lanes, BTreeSet::new());
        assert_eq!(top_ll(&p, &no_edges, TOP_MATCH_THRESHOLD), None);
    }

    #[test]
    fn far_predictions_are_not_matched() {
        let lanes = vec![straight(0.0, 0.0), straight(0.0, 10.0)];
        let gt = LaneGraph::new(lanes.clone(), [(0, 1)].into_iter().collect());
        let moved: Vec<LaneLine> = lanes.iter().map(|l| l.translated(0.0, 2.0, 0.0)).collect();
        let t = TopologyMatrix::from_rows(vec![vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(top_ll(&pred(moved, vec![1.0; 2], t), &gt, TOP_MATCH_THRESHOLD), Some(0.0));
    }

    #[test]
    fn ols_examples() {
        assert_eq!(ols_lane_only(1.0, 1.0), 1.0);
        assert_eq!(ols_lane_only(0.0, 0.0), 0.0);
        assert_eq!(ols_lane_only(0.5, 0.25), 0.5);
    }

    #[test]
    fn det_tie_break_prefers_lower_index() {
        let g = straight(0.0, 0.0);
        let gt = LaneGraph::new(vec![g.clone()], BTreeSet::new());
        let p = pred(vec![g.translated(0.0, 0.5, 0.0), g.clone()], vec![0.5, 0.5], TopologyMatrix::zeros(2));
        let r = det_l(&p, &gt);
        assert_eq!(r.per_threshold[0].matches, vec![(0, 0)]);
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 2..=max)
    }

    proptest! {
        #[test]
        fn frechet_matches_recursion(a in arb_points(6), b in arb_points(6)) {
            let (la, lb) = (line(&a), line(&b));
            let r = recursive_frechet(la.points(), lb.points(), a.len() - 1, b.len() - 1);
            prop_assert_eq!(discrete_frechet(&la, &lb), r);
        }

        #[test]
        fn frechet_is_a_metric(a in arb_points(6), b in arb_points(6), c in arb_points(6)) {
            let (la, lb, lc) = (line(&a), line(&b), line(&c));
            prop_assert_eq!(discrete_frechet(&la, &lb), discrete_frechet(&lb, &la));
            prop_assert_eq!(discrete_frechet(&la, &la), 0.0);
            prop_assert!(discrete_frechet(&la, &lc) <= discrete_frechet(&la, &lb) + discrete_frechet(&lb, &lc) + 1e-9);
        }
    }
}
