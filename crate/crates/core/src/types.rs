//! Geometry and graph domain types shared by every module.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points in a canonical lane polyline.
pub const LANE_POINTS: usize = 11;

/// A point in the vehicle frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::Invalid(format!("non-finite point ({x}, {y}, {z})")));
        }
        Ok(Point3 { x, y, z })
    }

    /// Construct without the finiteness check. Callers guarantee finite input.
    pub(crate) const fn raw(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn lerp(&self, other: &Point3, t: f64) -> Point3 {
        Point3::raw(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
            self.z + (other.z - self.z) * t,
        )
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl TryFrom<[f64; 3]> for Point3 {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        Point3::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

/// A directed lane centerline. Index 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point3>", into = "Vec<Point3>")]
pub struct LaneLine {
    points: Vec<Point3>,
}

impl LaneLine {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid(format!(
                "lane needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::Invalid(format!("non-finite lane point {p:?}")));
        }
        Ok(LaneLine { points })
    }

    /// Build from a flat `[x0, y0, z0, x1, ...]` slice.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.len() % 3 != 0 {
            return Err(Error::Invalid(format!(
                "flat coordinate count {} is not a multiple of 3",
                coords.len()
            )));
        }
        let points = coords
            .chunks_exact(3)
            .map(|c| Point3::raw(c[0], c[1], c[2]))
            .collect();
        LaneLine::new(points)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_canonical(&self) -> bool {
        self.points.len() == LANE_POINTS
    }

    pub fn start(&self) -> Point3 {
        self.points[0]
    }

    pub fn end(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    /// `(start, end)` of the lane.
    pub fn endpoints(&self) -> (Point3, Point3) {
        (self.start(), self.end())
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    pub fn reversed(&self) -> LaneLine {
        let mut points = self.points.clone();
        points.reverse();
        LaneLine { points }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> LaneLine {
        LaneLine {
            points: self
                .points
                .iter()
                .map(|p| Point3::raw(p.x + dx, p.y + dy, p.z + dz))
                .collect(),
        }
    }
}

impl TryFrom<Vec<Point3>> for LaneLine {
    type Error = Error;
    fn try_from(points: Vec<Point3>) -> Result<Self> {
        LaneLine::new(points)
    }
}

impl From<LaneLine> for Vec<Point3> {
    fn from(l: LaneLine) -> Self {
        l.points
    }
}

/// Start and end of a lane.
pub fn endpoints(lane: &LaneLine) -> (Point3, Point3) {
    lane.endpoints()
}

/// Square row-major matrix of connectivity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyMatrix {
    n: usize,
    values: Vec<f64>,
}

impl TopologyMatrix {
    pub fn zeros(n: usize) -> Self {
        TopologyMatrix {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Invalid(format!(
                "topology of size {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "topology",
                row: idx / n.max(1),
                col: idx % n.max(1),
            });
        }
        Ok(TopologyMatrix { n, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::Invalid(format!(
                "topology row has {} entries, expected {n}",
                r.len()
            )));
        }
        TopologyMatrix::from_values(n, rows.into_iter().flatten().collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn is_calibrated(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Entries clamped into `[0, 1]`.
    pub fn clamped(&self) -> TopologyMatrix {
        TopologyMatrix {
            n: self.n,
            values: self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Ordered pairs with a nonzero entry, row-major.
    pub fn nonzero_pairs(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) != 0.0 {
                    out.insert((i, j));
                }
            }
        }
        out
    }

    /// Reorder rows and columns so that new index `k` holds old index `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> TopologyMatrix {
        let mut out = TopologyMatrix::zeros(self.n);
        for (a, &pa) in perm.iter().enumerate() {
            for (b, &pb) in perm.iter().enumerate() {
                out.set(a, b, self.get(pa, pb));
            }
        }
        out
    }
}

impl Serialize for TopologyMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TopologyMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        TopologyMatrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Pairwise end-to-start gaps, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Invalid(format!(
                "distance matrix of size {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(format!(
                "distance entry ({}, {}) must be finite and nonnegative",
                idx / n,
                idx % n
            )));
        }
        Ok(DistanceMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Binary adjacency from an edge set.
pub fn adjacency_from_edges<'a, I>(edges: I, n: usize) -> Result<TopologyMatrix>
where
    I: IntoIterator<Item = &'a (usize, usize)>,
{
    let mut m = TopologyMatrix::zeros(n);
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::EdgeOutOfRange(i, j, n));
        }
        m.set(i, j, 1.0);
    }
    Ok(m)
}

/// Directed lane graph: lanes are vertices, `(i, j)` means lane `i` flows into lane `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneGraph {
    pub lanes: Vec<LaneLine>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl LaneGraph {
    pub fn new(lanes: Vec<LaneLine>, edges: BTreeSet<(usize, usize)>) -> Self {
        LaneGraph { lanes, edges }
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn adjacency(&self) -> Result<TopologyMatrix> {
        adjacency_from_edges(&self.edges, self.lanes.len())
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((i, 0)..(i + 1, 0)).map(|&(_, j)| j)
    }
}

/// A ground-truth scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub graph: LaneGraph,
    pub metadata: BTreeMap<String, String>,
}

/// One violated scene invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EdgeOutOfRange { from: usize, to: usize },
    SelfEdge { lane: usize },
    NonCanonicalLane { lane: usize, points: usize },
    ZeroLengthLane { lane: usize },
    EndpointGap { from: usize, to: usize, gap: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EdgeOutOfRange { from, to } => write!(f, "edge ({from}, {to}) out of range"),
            Violation::SelfEdge { lane } => write!(f, "self-edge on lane {lane}"),
            Violation::NonCanonicalLane { lane, points } => {
                write!(f, "lane {lane} has {points} points, expected {LANE_POINTS}")
            }
            Violation::ZeroLengthLane { lane } => write!(f, "lane {lane} has zero arc length"),
            Violation::EndpointGap { from, to, gap } => {
                write!(f, "edge ({from}, {to}) has endpoint gap {gap} m")
            }
        }
    }
}

/// Every invariant a scene violates; empty means valid.
pub fn validate_scene(scene: &Scene, exact_endpoints: bool) -> Vec<Violation> {
    let lanes = &scene.graph.lanes;
    let mut report = Vec::new();
    for (i, lane) in lanes.iter().enumerate() {
        if !lane.is_canonical() {
            report.push(Violation::NonCanonicalLane {
                lane: i,
                points: lane.len(),
            });
        }
        if lane.arc_length() == 0.0 {
            report.push(Violation::ZeroLengthLane { lane: i });
        }
    }
    for &(i, j) in &scene.graph.edges {
        if i >= lanes.len() || j >= lanes.len() {
            report.push(Violation::EdgeOutOfRange { from: i, to: j });
            continue;
        }
        if i == j {
            report.push(Violation::SelfEdge { lane: i });
            continue;
        }
        if exact_endpoints {
            let gap = lanes[i].end().distance(&lanes[j].start());
            if gap != 0.0 {
                report.push(Violation::EndpointGap { from: i, to: j, gap });
            }
        }
    }
    report
}
