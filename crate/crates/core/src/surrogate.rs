//! Desk-scale stand-in for the camera/BEV decoder: candidates are encoded into
//! lane queries, and a lane head scores them and refines their geometry.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{mlp_forward, Matrix, MlpParams, ParamId, ParamStore, Tape, Var};
use crate::scene_gen::CandidateSet;
use crate::types::{LaneLine, TopologyMatrix, LANE_POINTS};

/// Flattened size of a canonical lane.
pub const LANE_DIM: usize = LANE_POINTS * 3;

/// Coordinates are divided by this before entering the encoder, meters.
pub const INPUT_SCALE: f64 = 30.0;

/// Learned query slots used instead of one query per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedQueries {
    pub count: usize,
    pub embeddings: ParamId,
    pub references: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub mlp: MlpParams,
    pub fixed: Option<FixedQueries>,
}

impl EncoderParams {
    pub fn init<R: Rng>(store: &mut ParamStore, dim: usize, fixed_slots: Option<usize>, rng: &mut R) -> Self {
        let mlp = MlpParams::init(store, "enc", &[LANE_DIM, dim, dim, dim], rng);
        let fixed = fixed_slots.map(|count| FixedQueries {
            count,
            embeddings: store.add_uniform("enc.slot_queries", count, dim, rng),
            references: store.add(
                "enc.slot_refs",
                Matrix::from_fn(count, LANE_DIM, |_, _| rng.random_range(-30.0..30.0)),
                false,
            ),
        });
        EncoderParams { mlp, fixed }
    }

    pub fn bind(store: &ParamStore, dim: usize, fixed_slots: Option<usize>) -> Result<Self> {
        let mlp = MlpParams::bind(store, "enc", &[LANE_DIM, dim, dim, dim])?;
        let fixed = match fixed_slots {
            None => None,
            Some(count) => {
                let find = |name: &str| {
                    store
                        .find(name)
                        .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
                };
                Some(FixedQueries {
                    count,
                    embeddings: find("enc.slot_queries")?,
                    references: find("enc.slot_refs")?,
                })
            }
        };
        Ok(EncoderParams { mlp, fixed })
    }
}

/// Output of [`encode_candidates`].
#[derive(Debug, Clone)]
pub struct Encoded {
    pub queries: Var,
    /// `n x 33` reference polylines the lane head refines.
    pub references: Var,
    /// Reference geometry as lanes (same rows as `references`).
    pub reference_lanes: Vec<LaneLine>,
    /// Candidate index held by each query row, if any.
    pub slots: Vec<Option<usize>>,
}

fn flatten_rows(lanes: &[&LaneLine]) -> Matrix {
    let mut data = Vec::with_capacity(lanes.len() * LANE_DIM);
    for l in lanes {
        data.extend(l.flatten());
    }
    Matrix::new(lanes.len(), LANE_DIM, data).expect("canonical lanes")
}

/// One query per candidate (or per slot in fixed-query mode).
pub fn encode_candidates(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    candidates: &CandidateSet,
) -> Result<Encoded> {
    if let Some((i, l)) = candidates
        .candidates
        .iter()
        .enumerate()
        .find(|(_, l)| !l.is_canonical())
    {
        return Err(Error::Invalid(format!(
            "candidate {i} has {} points, expected {LANE_POINTS}",
            l.len()
        )));
    }
    match &params.fixed {
        None => {
            let lanes: Vec<&LaneLine> = candidates.candidates.iter().collect();
            let raw = flatten_rows(&lanes);
            let refs = tape.constant(raw.clone())?;
            let scaled = tape.constant(raw.map(|v| v / INPUT_SCALE))?;
            let queries = mlp_forward(tape, store, &params.mlp, scaled)?;
            Ok(Encoded {
                queries,
                references: refs,
                reference_lanes: candidates.candidates.clone(),
                slots: (0..candidates.len()).map(Some).collect(),
            })
        }
        Some(fixed) => encode_fixed(tape, store, params, fixed, candidates),
    }
}

fn encode_fixed(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    fixed: &FixedQueries,
    candidates: &CandidateSet,
) -> Result<Encoded> {
    // Candidates fill slots in a geometry-only order; extra candidates are dropped.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (candidates.candidates[a].start(), candidates.candidates[b].start());
        pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y)).then(a.cmp(&b))
    });
    order.truncate(fixed.count);
    let slots: Vec<Option<usize>> = (0..fixed.count).map(|k| order.get(k).copied()).collect();

    let mut ref_data = Matrix::zeros(fixed.count, LANE_DIM);
    let mut occupied = Matrix::zeros(fixed.count, LANE_DIM);
    let mut content = Matrix::zeros(fixed.count, LANE_DIM);
    for (k, slot) in slots.iter().enumerate() {
        if let Some(c) = slot {
            let flat = candidates.candidates[*c].flatten();
            for (j, v) in flat.iter().enumerate() {
                ref_data.set(k, j, *v);
                occupied.set(k, j, 1.0);
                content.set(k, j, v / INPUT_SCALE);
            }
        }
    }
    // references = occupied ⊙ candidate + (1 - occupied) ⊙ learned
    let learned = tape.param(store, fixed.references);
    let empty_mask = tape.constant(occupied.map(|v| 1.0 - v))?;
    let learned_part = tape.mul(learned, empty_mask)?;
    let cand_part = tape.constant(ref_data.clone())?;
    let references = tape.add(cand_part, learned_part)?;

    let content_v = tape.constant(content)?;
    let enc = mlp_forward(tape, store, &params.mlp, content_v)?;
    let slot_q = tape.param(store, fixed.embeddings);
    let queries = tape.add(enc, slot_q)?;

    let values = tape.value(references).clone();
    let mut reference_lanes = Vec::with_capacity(fixed.count);
    for k in 0..fixed.count {
        reference_lanes.push(LaneLine::from_flat(values.row(k))?);
    }
    Ok(Encoded {
        queries,
        references,
        reference_lanes,
        slots,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneHeadParams {
    pub cls: MlpParams,
    pub reg: MlpParams,
}

impl LaneHeadParams {
    pub fn init<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        LaneHeadParams {
            cls: MlpParams::init(store, "head.cls", &[dim, dim, dim, 1], rng),
            reg: MlpParams::init(store, "head.reg", &[dim, dim, dim, LANE_DIM], rng),
        }
    }

    pub fn bind(store: &ParamStore, dim: usize) -> Result<Self> {
        Ok(LaneHeadParams {
            cls: MlpParams::bind(store, "head.cls", &[dim, dim, dim, 1])?,
            reg: MlpParams::bind(store, "head.reg", &[dim, dim, dim, LANE_DIM])?,
        })
    }
}

/// Scores `n x 1` in `(0, 1)` and refined lanes `n x 33` (reference + offset).
pub fn lane_head(
    tape: &mut Tape,
    store: &ParamStore,
    params: &LaneHeadParams,
    queries: Var,
    references: Var,
) -> Result<(Var, Var)> {
    let (q, r) = (tape.value(queries).shape(), tape.value(references).shape());
    if r != (q.0, LANE_DIM) {
        return Err(Error::Shape {
            op: "lane_head",
            left: q,
            right: r,
        });
    }
    let logits = mlp_forward(tape, store, &params.cls, queries)?;
    let scores = tape.sigmoid(logits)?;
    let offsets = mlp_forward(tape, store, &params.reg, queries)?;
    let lanes = tape.add(references, offsets)?;
    Ok((scores, lanes))
}

/// Identifies where a prediction came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct PredictionMeta {
    pub model_config_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub scene_id: String,
}

/// Scored lanes plus a calibrated topology over them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub lanes: Vec<LaneLine>,
    pub scores: Vec<f64>,
    pub topology: TopologyMatrix,
    pub queries: Option<Matrix>,
    pub meta: PredictionMeta,
}

impl Prediction {
    pub fn new(
        lanes: Vec<LaneLine>,
        scores: Vec<f64>,
        topology: TopologyMatrix,
        meta: PredictionMeta,
    ) -> Result<Self> {
        let p = Prediction {
            lanes,
            scores,
            topology,
            queries: None,
            meta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lanes.len();
        if self.scores.len() != n || self.topology.n() != n {
            return Err(Error::Invalid(format!(
                "prediction has {n} lanes, {} scores and a {}x{} topology",
                self.scores.len(),
                self.topology.n(),
                self.topology.n()
            )));
        }
        if let Some(s) = self.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Invalid(format!("score {s} outside [0, 1]")));
        }
        if !self.topology.is_calibrated() {
            return Err(Error::Invalid("topology entries must lie in [0, 1]".into()));
        }
        if let Some(q) = &self.queries {
            if q.rows() != n {
                return Err(Error::Invalid("query rows must match lane count".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn empty(meta: PredictionMeta) -> Self {
        Prediction {
            lanes: vec![],
            scores: vec![],
            topology: TopologyMatrix::zeros(0),
            queries: None,
            meta,
        }
    }
}

/// Split an `n x 33` matrix into lanes.
pub fn lanes_from_matrix(m: &Matrix) -> Result<Vec<LaneLine>> {
    (0..m.rows()).map(|i| LaneLine::from_flat(m.row(i))).collect()
}
