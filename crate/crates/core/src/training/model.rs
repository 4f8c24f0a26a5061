use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{aggregate_features, calibrated_view, fuse_topology, AggregatorParams, CalibrationRule, FusionParams};
use crate::geo_head::{distance_matrix, map_distance, matrix_std, GeoHead, MappingKind, MappingParams, StdMode};
use crate::numerics::{Matrix, ParamStore, Tape, Var};
use crate::scene_gen::CandidateSet;
use crate::sim_head::{pair_topology, similarity_topology, PairMlpParams, SimilarityParams, DEFAULT_QUERY_DIM};
use crate::surrogate::{encode_candidates, lane_head, lanes_from_matrix, Encoded, EncoderParams, LaneHeadParams, Prediction, PredictionMeta};

/// Which topology head the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Three-layer MLP on concatenated query pairs.
    MlpPair,
    SimilarityOnly,
    GeoDistOnly,
    Fused,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [
        HeadKind::MlpPair,
        HeadKind::SimilarityOnly,
        HeadKind::GeoDistOnly,
        HeadKind::Fused,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::MlpPair => "mlp_pair",
            HeadKind::SimilarityOnly => "similarity_only",
            HeadKind::GeoDistOnly => "geodist_only",
            HeadKind::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.name() == s || h.name().replace('_', "-") == s)
    }

    pub fn has_geo(self) -> bool {
        matches!(self, HeadKind::GeoDistOnly | HeadKind::Fused)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: HeadKind,
    pub dim: usize,
    pub mapping: MappingKind,
    pub mapping_init: MappingParams,
    pub std_mode: StdMode,
    pub agg_layers: usize,
    pub calibration: CalibrationRule,
    pub zero_diagonal: bool,
    /// Learned query slots instead of one query per candidate.
    pub fixed_queries: Option<usize>,
    /// Report the geometric topology on refined rather than reference lanes.
    pub refined_geometry: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            head: HeadKind::Fused,
            dim: DEFAULT_QUERY_DIM,
            mapping: MappingKind::Ours,
            mapping_init: MappingParams::default(),
            std_mode: StdMode::Population,
            agg_layers: 1,
            calibration: CalibrationRule::Normalize,
            zero_diagonal: true,
            fixed_queries: None,
            refined_geometry: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invalid("query dim must be positive".into()));
        }
        if self.fixed_queries == Some(0) {
            return Err(Error::Invalid("fixed query count must be positive".into()));
        }
        MappingParams::new(self.mapping_init.alpha, self.mapping_init.lambda)?;
        Ok(())
    }
}

/// Topology head parameters, one variant per [`HeadKind`].
#[derive(Debug, Clone, PartialEq)]
pub enum TopologyHead {
    MlpPair(PairMlpParams),
    Similarity(SimilarityParams),
    GeoDist(GeoHead),
    Fused {
        geo: GeoHead,
        sim: SimilarityParams,
        fusion: FusionParams,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub topology: TopologyHead,
    pub aggregator: AggregatorParams,
    pub lane_head: LaneHeadParams,
}

/// Everything one forward pass records.
#[derive(Debug, Clone)]
pub struct Forward {
    pub encoded: Encoded,
    pub g_dis: Option<Var>,
    /// `G_sim` or the pair-MLP topology, whichever the head learns directly.
    pub g_learned: Option<Var>,
    pub g_raw: Var,
    pub aggregated: Var,
    pub scores: Var,
    pub lanes: Var,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let dim = config.dim;
        let encoder = EncoderParams::init(&mut store, dim, config.fixed_queries, &mut rng);
        let geo = |store: &mut ParamStore| {
            let mut g = GeoHead::init(store, config.mapping, config.mapping_init);
            g.std_mode = config.std_mode;
            g
        };
        let topology = match config.head {
            HeadKind::MlpPair => {
                let mut p = PairMlpParams::init(&mut store, dim, &mut rng);
                p.zero_diagonal = config.zero_diagonal;
                TopologyHead::MlpPair(p)
            }
            HeadKind::SimilarityOnly => {
                let mut p = SimilarityParams::init(&mut store, dim, &mut rng);
                p.zero_diagonal = config.zero_diagonal;
                TopologyHead::Similarity(p)
            }
            HeadKind::GeoDistOnly => TopologyHead::GeoDist(geo(&mut store)),
            HeadKind::Fused => {
                let g = geo(&mut store);
                let mut sim = SimilarityParams::init(&mut store, dim, &mut rng);
                sim.zero_diagonal = config.zero_diagonal;
                TopologyHead::Fused {
                    geo: g,
                    sim,
                    fusion: FusionParams::init(&mut store),
                }
            }
        };
        let aggregator = AggregatorParams::init(&mut store, dim, config.agg_layers, &mut rng);
        let lane_head = LaneHeadParams::init(&mut store, dim, &mut rng);
        Ok(Model {
            config,
            store,
            encoder,
            topology,
            aggregator,
            lane_head,
        })
    }

    /// Rebuild a model around an existing parameter store (checkpoint loading).
    /// Every parameter the config needs must be present with the right shape.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let fresh = Model::new(config.clone())?;
        if fresh.store.len() != store.len() {
            return Err(Error::Invalid(format!(
                "checkpoint has {} parameters, config expects {}",
                store.len(),
                fresh.store.len()
            )));
        }
        for (_, p) in fresh.store.iter() {
            let id = store
                .find(&p.name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {}", p.name)))?;
            let got = store.get(id);
            if got.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "checkpoint",
                    left: got.shape(),
                    right: p.value.shape(),
                });
            }
        }
        // Copy values in the fresh model's order so parameter ids stay canonical.
        let mut model = fresh;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let src = store.find(model.store.name(id)).expect("checked above");
            model.store.set(id, store.get(src).clone())?;
        }
        Ok(model)
    }

    pub fn mapping_params(&self) -> Option<MappingParams> {
        match &self.topology {
            TopologyHead::GeoDist(g) | TopologyHead::Fused { geo: g, .. } => Some(g.params(&self.store)),
            _ => None,
        }
    }

    pub fn geo_head(&self) -> Option<&GeoHead> {
        match &self.topology {
            TopologyHead::GeoDist(g) | TopologyHead::Fused { geo: g, .. } => Some(g),
            _ => None,
        }
    }

    pub fn fusion_values(&self) -> Option<(f64, f64)> {
        match &self.topology {
            TopologyHead::Fused { fusion, .. } => Some(fusion.values(&self.store)),
            _ => None,
        }
    }

    /// encode → topology head(s) → fuse → aggregate → lane head.
    pub fn forward(&self, tape: &mut Tape, candidates: &CandidateSet) -> Result<Forward> {
        let store = &self.store;
        let encoded = encode_candidates(tape, store, &self.encoder, candidates)?;
        let q = encoded.queries;
        let (g_dis, g_learned, g_raw) = match &self.topology {
            TopologyHead::MlpPair(p) => {
                let g = pair_topology(tape, store, p, q)?;
                (None, Some(g), g)
            }
            TopologyHead::Similarity(p) => {
                let g = similarity_topology(tape, store, p, q)?;
                (None, Some(g), g)
            }
            TopologyHead::GeoDist(geo) => {
                let g = geo.forward(tape, store, &encoded.reference_lanes)?;
                (Some(g), None, g)
            }
            TopologyHead::Fused { geo, sim, fusion } => {
                let gd = geo.forward(tape, store, &encoded.reference_lanes)?;
                let gs = similarity_topology(tape, store, sim, q)?;
                let g = fuse_topology(tape, store, fusion, gd, gs)?;
                (Some(gd), Some(gs), g)
            }
        };
        let aggregated = aggregate_features(tape, store, &self.aggregator, q, g_raw)?;
        let (scores, lanes) = lane_head(tape, store, &self.lane_head, aggregated, encoded.references)?;
        Ok(Forward {
            encoded,
            g_dis,
            g_learned,
            g_raw,
            aggregated,
            scores,
            lanes,
        })
    }

    /// Raw topology to report for a finished forward pass.
    fn report_topology(&self, tape: &Tape, fwd: &Forward, refined: &[crate::types::LaneLine]) -> Result<Matrix> {
        let geo = match (self.geo_head(), self.config.refined_geometry) {
            (Some(g), true) => g,
            _ => return Ok(tape.value(fwd.g_raw).clone()),
        };
        let d = distance_matrix(refined);
        let sigma = matrix_std(&d, geo.std_mode);
        let gd = map_distance(&d, geo.params(&self.store), geo.kind, sigma)?;
        let gd = Matrix::new(gd.n(), gd.n(), gd.values().to_vec())?;
        match (self.fusion_values(), fwd.g_learned) {
            (Some((l1, l2)), Some(gs)) => {
                let gs = tape.value(gs);
                Ok(gd.zip_map(gs, |a, b| l1 * a + l2 * b))
            }
            _ => Ok(gd),
        }
    }

    pub fn predict(&self, candidates: &CandidateSet, meta: PredictionMeta) -> Result<Prediction> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, candidates)?;
        let lanes = lanes_from_matrix(tape.value(fwd.lanes))?;
        let scores = tape.value(fwd.scores).data().to_vec();
        let raw = self.report_topology(&tape, &fwd, &lanes)?;
        let lambdas = self.fusion_values().unwrap_or((1.0, 0.0));
        let topology = calibrated_view(&raw, self.config.calibration, lambdas)?;
        let mut p = Prediction::new(lanes, scores, topology, meta)?;
        p.queries = Some(tape.value(fwd.aggregated).clone());
        Ok(p)
    }
}
