//! Synthetic ground-truth lane graphs and the endpoint-shift noise model.
//!
//! All randomness comes from `ChaCha8Rng` (the ChaCha stream cipher with 8
//! rounds), which produces the same stream on every platform for a given
//! 64-bit seed.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LaneGraph, LaneLine, Point3, Scene, LANE_POINTS};

/// Seedable generator used everywhere in the crate.
pub type SceneRng = ChaCha8Rng;

pub fn rng_for(seed: u64, stream: u64) -> SceneRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    StraightChain,
    Fork,
    Merge,
    GridIntersection,
}

impl Layout {
    pub const ALL: [Layout; 4] = [
        Layout::StraightChain,
        Layout::Fork,
        Layout::Merge,
        Layout::GridIntersection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layout::StraightChain => "straight_chain",
            Layout::Fork => "fork",
            Layout::Merge => "merge",
            Layout::GridIntersection => "grid_intersection",
        }
    }

    pub fn parse(s: &str) -> Option<Layout> {
        Layout::ALL.into_iter().find(|l| l.name() == s || l.name().replace('_', "-") == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub layout: Layout,
    pub lane_count_range: (usize, usize),
    /// Meters.
    pub lane_length_range: (f64, f64),
    /// Radians per meter, sampled symmetrically in `[-max, max]` with `max`
    /// drawn from this range.
    pub curvature_range: (f64, f64),
    pub rng_seed: u64,
}

impl SceneConfig {
    /// Defaults used by the standard benchmark for each layout.
    pub fn standard(layout: Layout, rng_seed: u64) -> Self {
        let lane_count_range = match layout {
            Layout::StraightChain => (3, 5),
            Layout::Fork | Layout::Merge => (3, 4),
            Layout::GridIntersection => (10, 14),
        };
        SceneConfig {
            layout,
            lane_count_range,
            lane_length_range: (12.0, 25.0),
            curvature_range: (0.0, 0.02),
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.lane_count_range;
        let (la, lb) = self.lane_length_range;
        let (ca, cb) = self.curvature_range;
        if a > b || a == 0 {
            return Err(Error::Invalid(format!("lane_count_range ({a}, {b}) is empty")));
        }
        if !(la.is_finite() && lb.is_finite() && la > 0.0 && la <= lb) {
            return Err(Error::Invalid(format!("lane_length_range ({la}, {lb}) is invalid")));
        }
        if !(ca.is_finite() && cb.is_finite() && 0.0 <= ca && ca <= cb) {
            return Err(Error::Invalid(format!("curvature_range ({ca}, {cb}) is invalid")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Std of the isotropic Gaussian added to every point coordinate, meters.
    pub endpoint_sigma: f64,
    pub drop_prob: f64,
    pub distractor_count: usize,
    pub rng_seed: u64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.endpoint_sigma.is_finite() && self.endpoint_sigma >= 0.0) {
            return Err(Error::Invalid(format!(
                "endpoint_sigma must be >= 0, got {}",
                self.endpoint_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Invalid(format!(
                "drop_prob must be in [0, 1], got {}",
                self.drop_prob
            )));
        }
        Ok(())
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    TrueLane(usize),
    Distractor,
}

/// Noisy detector output standing in for the perception front end.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub scene_id: String,
    pub candidates: Vec<LaneLine>,
    pub origins: Vec<Origin>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Resample to `k` points uniformly spaced by arc length. Endpoints are copied exactly.
pub fn resample_polyline(lane: &LaneLine, k: usize) -> Result<LaneLine> {
    if k < 2 {
        return Err(Error::Invalid(format!("cannot resample to {k} points")));
    }
    let pts = lane.points();
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + w[0].distance(&w[1]));
    }
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return Err(Error::ZeroLength);
    }
    let mut out = Vec::with_capacity(k);
    out.push(pts[0]);
    let mut seg = 0;
    for s in 1..k - 1 {
        let target = total * s as f64 / (k - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
        out.push(pts[seg].lerp(&pts[seg + 1], t));
    }
    out.push(pts[pts.len() - 1]);
    LaneLine::new(out)
}

const RAW_SAMPLES: usize = 41;

/// Constant-curvature arc from `start` with initial heading and gentle grade.
fn arc(start: Point3, heading: f64, length: f64, curvature: f64, grade: f64) -> (Vec<Point3>, f64) {
    let mut pts = Vec::with_capacity(RAW_SAMPLES);
    pts.push(start);
    for k in 1..RAW_SAMPLES {
        let s = length * k as f64 / (RAW_SAMPLES - 1) as f64;
        let (dx, dy) = if curvature.abs() < 1e-9 {
            (s * heading.cos(), s * heading.sin())
        } else {
            let r = 1.0 / curvature;
            (
                r * ((heading + s * curvature).sin() - heading.sin()),
                -r * ((heading + s * curvature).cos() - heading.cos()),
            )
        };
        pts.push(Point3::raw(start.x + dx, start.y + dy, start.z + grade * s));
    }
    (pts, heading + length * curvature)
}

/// Cubic Bezier between two poses.
fn bezier(p0: Point3, h0: f64, p3: Point3, h3: f64, handle: f64) -> Vec<Point3> {
    let p1 = Point3::raw(p0.x + handle * h0.cos(), p0.y + handle * h0.sin(), p0.z);
    let p2 = Point3::raw(p3.x - handle * h3.cos(), p3.y - handle * h3.sin(), p3.z);
    (0..RAW_SAMPLES)
        .map(|k| {
            let t = k as f64 / (RAW_SAMPLES - 1) as f64;
            let u = 1.0 - t;
            let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
            if k == 0 {
                p0
            } else if k == RAW_SAMPLES - 1 {
                p3
            } else {
                Point3::raw(
                    a * p0.x + b * p1.x + c * p2.x + d * p3.x,
                    a * p0.y + b * p1.y + c * p2.y + d * p3.y,
                    a * p0.z + b * p1.z + c * p2.z + d * p3.z,
                )
            }
        })
        .collect()
}

fn canonical(raw: Vec<Point3>) -> Result<LaneLine> {
    resample_polyline(&LaneLine::new(raw)?, LANE_POINTS)
}

struct Sampler<'a> {
    cfg: &'a SceneConfig,
    rng: SceneRng,
}

impl Sampler<'_> {
    fn length(&mut self) -> f64 {
        let (a, b) = self.cfg.lane_length_range;
        if a == b {
            a
        } else {
            self.rng.random_range(a..=b)
        }
    }

    fn curvature(&mut self) -> f64 {
        let (a, b) = self.cfg.curvature_range;
        let mag = if a == b { a } else { self.rng.random_range(a..=b) };
        if self.rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    }

    fn count(&mut self, lo: usize, hi: usize) -> Result<usize> {
        let (a, b) = self.cfg.lane_count_range;
        let (a, b) = (a.max(lo), b.min(hi));
        if a > b {
            return Err(Error::Generation(format!(
                "layout {} needs between {lo} and {hi} lanes, range is {:?}",
                self.cfg.layout.name(),
                self.cfg.lane_count_range
            )));
        }
        Ok(self.rng.random_range(a..=b))
    }

    fn origin(&mut self) -> (Point3, f64) {
        let x = self.rng.random_range(-10.0..10.0);
        let y = self.rng.random_range(-10.0..10.0);
        let z = self.rng.random_range(-0.5..0.5);
        (Point3::raw(x, y, z), self.rng.random_range(-PI..PI))
    }

    fn grade(&mut self) -> f64 {
        self.rng.random_range(-0.01..0.01)
    }
}

/// Build a ground-truth scene. Connected lanes share their endpoint exactly.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut s = Sampler {
        cfg: config,
        rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
    };
    let (lanes, edges) = match config.layout {
        Layout::StraightChain => chain(&mut s)?,
        Layout::Fork => fork(&mut s)?,
        Layout::Merge => merge(&mut s)?,
        Layout::GridIntersection => grid(&mut s)?,
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("layout".to_string(), config.layout.name().to_string());
    metadata.insert("seed".to_string(), config.rng_seed.to_string());
    Ok(Scene {
        id: format!("{}-{}", config.layout.name(), config.rng_seed),
        graph: LaneGraph::new(lanes, edges),
        metadata,
    })
}

type Built = (Vec<LaneLine>, BTreeSet<(usize, usize)>);

fn chain(s: &mut Sampler) -> Result<Built> {
    let n = s.count(1, usize::MAX)?;
    let (mut p, mut h) = s.origin();
    let mut lanes = Vec::with_capacity(n);
    for _ in 0..n {
        let (len, k, g) = (s.length(), s.curvature(), s.grade());
        let (raw, h_end) = arc(p, h, len, k, g);
        let lane = canonical(raw)?;
        p = lane.end();
        h = h_end;
        lanes.push(lane);
    }
    let edges = (1..n).map(|i| (i - 1, i)).collect();
    Ok((lanes, edges))
}

fn spread(count: usize, width: f64) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|i| -width / 2.0 + width * i as f64 / (count - 1) as f64)
        .collect()
}

fn fork(s: &mut Sampler) -> Result<Built> {
    let n = s.count(2, usize::MAX)?;
    let (p, h) = s.origin();
    let (len, k, g) = (s.length(), s.curvature(), s.grade());
    let (raw, h_end) = arc(p, h, len, k, g);
    let parent = canonical(raw)?;
    let junction = parent.end();
    let mut lanes = vec![parent];
    let width = 0.5 + 0.15 * (n - 1) as f64;
    for offset in spread(n - 1, width) {
        let (len, g) = (s.length(), s.grade());
        let k = offset.signum() * s.curvature().abs();
        let (raw, _) = arc(junction, h_end + offset, len, k, g);
        lanes.push(canonical(raw)?);
    }
    let edges = (1..n).map(|c| (0, c)).collect();
    Ok((lanes, edges))
}

fn merge(s: &mut Sampler) -> Result<Built> {
    let n = s.count(2, usize::MAX)?;
    let (junction, h) = s.origin();
    let mut lanes = Vec::with_capacity(n);
    let width = 0.5 + 0.15 * (n - 1) as f64;
    // Parents are traced backwards from the junction, then reversed.
    for offset in spread(n - 1, width) {
        let (len, g) = (s.length(), s.grade());
        let k = offset.signum() * s.curvature().abs();
        let (mut raw, _) = arc(junction, h + PI + offset, len, k, g);
        raw.reverse();
        lanes.push(canonical(raw)?);
    }
    let (len, k, g) = (s.length(), s.curvature(), s.grade());
    let (raw, _) = arc(junction, h, len, k, g);
    lanes.push(canonical(raw)?);
    let child = n - 1;
    let edges = (0..child).map(|p| (p, child)).collect();
    Ok((lanes, edges))
}

/// Approach and exit lanes on each arm plus connectors through the junction box.
fn grid(s: &mut Sampler) -> Result<Built> {
    let (a, b) = s.cfg.lane_count_range;
    // 3 arms: 6 arm lanes + up to 6 connectors. 4 arms: 8 + up to 12.
    let arms = if b >= 12 { 4 } else { 3 };
    let arm_lanes = 2 * arms;
    let max_conn = arms * (arms - 1);
    let lo = arm_lanes + arms;
    let hi = arm_lanes + max_conn;
    if b < lo || a > hi {
        return Err(Error::Generation(format!(
            "grid_intersection needs between {lo} and {hi} lanes, range is ({a}, {b})"
        )));
    }
    let n = s.count(lo, hi)?;
    let n_conn = n - arm_lanes;

    let (center, rot) = s.origin();
    let half_box = s.rng.random_range(8.0..12.0);
    let lane_w = 3.5;
    let dir = |d: usize| rot + d as f64 * 2.0 * PI / arms as f64;
    let at = |d: usize, along: f64, side: f64| {
        let (u, r) = (dir(d), dir(d) - FRAC_PI_2);
        Point3::raw(
            center.x + along * u.cos() + side * r.cos(),
            center.y + along * u.sin() + side * r.sin(),
            center.z,
        )
    };

    let mut lanes = Vec::with_capacity(n);
    let mut entry = Vec::with_capacity(arms);
    let mut exit = Vec::with_capacity(arms);
    // Incoming lane on arm d drives toward the center on the right of the arm axis.
    for d in 0..arms {
        let len = s.length();
        let start = at(d, half_box + len, -lane_w / 2.0);
        let end = at(d, half_box, -lane_w / 2.0);
        let (raw, _) = arc(start, dir(d) + PI, start.distance(&end), 0.0, 0.0);
        let mut lane = canonical(raw)?.points().to_vec();
        *lane.last_mut().unwrap() = end;
        entry.push(lanes.len());
        lanes.push(LaneLine::new(lane)?);
    }
    for d in 0..arms {
        let len = s.length();
        let start = at(d, half_box, lane_w / 2.0);
        let (raw, _) = arc(start, dir(d), len, 0.0, 0.0);
        exit.push(lanes.len());
        lanes.push(canonical(raw)?);
    }

    let mut moves: Vec<(usize, usize)> = (0..arms)
        .flat_map(|i| (0..arms).filter(move |&o| o != i).map(move |o| (i, o)))
        .collect();
    // Partial Fisher-Yates to choose connectors; the first `arms` picks cover each arm once.
    for i in (1..moves.len()).rev() {
        let j = s.rng.random_range(0..=i);
        moves.swap(i, j);
    }
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(n_conn);
    for d in 0..arms {
        if let Some(pos) = moves.iter().position(|m| m.0 == d) {
            chosen.push(moves.remove(pos));
        }
    }
    chosen.extend(moves.into_iter().take(n_conn - chosen.len()));
    chosen.sort_unstable();

    let mut edges = BTreeSet::new();
    for (i, o) in chosen {
        let from = lanes[entry[i]].end();
        let to = lanes[exit[o]].start();
        let handle = from.distance(&to) * 0.4;
        let raw = bezier(from, dir(i) + PI, to, dir(o), handle);
        let c = lanes.len();
        lanes.push(canonical(raw)?);
        edges.insert((entry[i], c));
        edges.insert((c, exit[o]));
    }
    Ok((lanes, edges))
}

fn bounding_box(lanes: &[LaneLine]) -> (Point3, Point3) {
    let mut lo = Point3::raw(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::raw(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in lanes.iter().flat_map(|l| l.points()) {
        lo = Point3::raw(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Point3::raw(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

/// Smooth random polyline inside the scene's bounding box.
fn distractor(rng: &mut SceneRng, lo: Point3, hi: Point3, length_range: (f64, f64)) -> Result<LaneLine> {
    let pick = |rng: &mut SceneRng, a: f64, b: f64| if a < b { rng.random_range(a..b) } else { a };
    let p0 = Point3::raw(pick(rng, lo.x, hi.x), pick(rng, lo.y, hi.y), pick(rng, lo.z, hi.z));
    let (la, lb) = length_range;
    let len = pick(rng, la, lb);
    let h0 = rng.random_range(-PI..PI);
    let turn = rng.random_range(-0.6..0.6);
    let h3 = h0 + turn;
    let chord = h0 + turn / 2.0;
    let p3 = Point3::raw(p0.x + len * chord.cos(), p0.y + len * chord.sin(), p0.z);
    canonical(bezier(p0, h0, p3, h3, len / 3.0))
}

/// Apply detector noise: per-point Gaussian jitter, lane drops and distractors.
pub fn perturb_scene(scene: &Scene, noise: &NoiseConfig) -> Result<CandidateSet> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let jitter = Normal::new(0.0, noise.endpoint_sigma)
        .map_err(|e| Error::Invalid(format!("noise distribution: {e}")))?;
    let mut candidates = Vec::new();
    let mut origins = Vec::new();
    for (i, lane) in scene.graph.lanes.iter().enumerate() {
        let dropped = noise.drop_prob > 0.0 && rng.random_bool(noise.drop_prob);
        if dropped {
            continue;
        }
        let pts: Vec<Point3> = lane
            .points()
            .iter()
            .map(|p| {
                if noise.endpoint_sigma == 0.0 {
                    *p
                } else {
                    Point3::raw(
                        p.x + jitter.sample(&mut rng),
                        p.y + jitter.sample(&mut rng),
                        p.z + jitter.sample(&mut rng),
                    )
                }
            })
            .collect();
        candidates.push(LaneLine::new(pts)?);
        origins.push(Origin::TrueLane(i));
    }
    if noise.distractor_count > 0 {
        let (lo, hi) = bounding_box(&scene.graph.lanes);
        let lengths: Vec<f64> = scene.graph.lanes.iter().map(|l| l.arc_length()).collect();
        let range = (
            lengths.iter().copied().fold(f64::INFINITY, f64::min),
            lengths.iter().copied().fold(0.0, f64::max),
        );
        for _ in 0..noise.distractor_count {
            candidates.push(distractor(&mut rng, lo, hi, range)?);
            origins.push(Origin::Distractor);
        }
    }
    Ok(CandidateSet {
        scene_id: scene.id.clone(),
        candidates,
        origins,
    })
}
