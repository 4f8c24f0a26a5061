//! JSON file formats: scenes, candidate sets, predictions, dataset manifests
//! and parameter checkpoints. Every `parse_*` function returns an error on bad
//! input rather than panicking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore};
use crate::scene_gen::{CandidateSet, Origin};
use crate::surrogate::{Prediction, PredictionMeta};
use crate::training::{Model, ModelConfig};
use crate::types::{validate_scene, LaneGraph, LaneLine, Scene, TopologyMatrix, Violation};

pub const MANIFEST_FORMAT: &str = "lanetopo-manifest";
pub const CHECKPOINT_FORMAT: &str = "lanetopo-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    id: String,
    lanes: Vec<LaneLine>,
    edges: Vec<(usize, usize)>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

pub fn scene_to_json(scene: &Scene) -> Result<String> {
    let file = SceneFile {
        id: scene.id.clone(),
        lanes: scene.graph.lanes.clone(),
        edges: scene.graph.edges.iter().copied().collect(),
        metadata: scene.metadata.clone(),
    };
    Ok(serde_json::to_string(&file)? + "\n")
}

/// Parse and validate a scene. Endpoint gaps on edges are tolerated.
pub fn parse_scene(text: &str) -> Result<Scene> {
    let file: SceneFile = serde_json::from_str(text)?;
    let edges: BTreeSet<(usize, usize)> = file.edges.iter().copied().collect();
    if edges.len() != file.edges.len() {
        return Err(Error::Parse("duplicate edge".into()));
    }
    let scene = Scene {
        id: file.id,
        graph: LaneGraph::new(file.lanes, edges),
        metadata: file.metadata,
    };
    let bad: Vec<String> = validate_scene(&scene, false)
        .into_iter()
        .filter(|v| !matches!(v, Violation::EndpointGap { .. }))
        .map(|v| v.to_string())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Parse(format!("invalid scene: {}", bad.join("; "))));
    }
    Ok(scene)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateFile {
    scene_id: String,
    candidates: Vec<LaneLine>,
    origins: Vec<Origin>,
}

pub fn candidates_to_json(c: &CandidateSet) -> Result<String> {
    let file = CandidateFile {
        scene_id: c.scene_id.clone(),
        candidates: c.candidates.clone(),
        origins: c.origins.clone(),
    };
    Ok(serde_json::to_string(&file)? + "\n")
}

pub fn parse_candidates(text: &str) -> Result<CandidateSet> {
    let file: CandidateFile = serde_json::from_str(text)?;
    if file.candidates.len() != file.origins.len() {
        return Err(Error::Parse(format!(
            "{} candidates but {} origins",
            file.candidates.len(),
            file.origins.len()
        )));
    }
    if let Some(i) = file.candidates.iter().position(|l| !l.is_canonical()) {
        return Err(Error::Parse(format!("candidate {i} is not canonical")));
    }
    Ok(CandidateSet {
        scene_id: file.scene_id,
        candidates: file.candidates,
        origins: file.origins,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionFile {
    lanes: Vec<LaneLine>,
    scores: Vec<f64>,
    topology: TopologyMatrix,
    meta: PredictionMeta,
}

pub fn prediction_to_json(p: &Prediction) -> Result<String> {
    let file = PredictionFile {
        lanes: p.lanes.clone(),
        scores: p.scores.clone(),
        topology: p.topology.clone(),
        meta: p.meta.clone(),
    };
    Ok(serde_json::to_string(&file)? + "\n")
}

pub fn parse_prediction(text: &str) -> Result<Prediction> {
    let file: PredictionFile = serde_json::from_str(text)?;
    let p = Prediction {
        lanes: file.lanes,
        scores: file.scores,
        topology: file.topology,
        queries: None,
        meta: file.meta,
    };
    p.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub scene: String,
    pub candidates: String,
    pub seed: u64,
}

/// A generated dataset: scene and candidate files relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Generation settings, echoed verbatim.
    pub generator: serde_json::Value,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(seed: u64, generator: serde_json::Value, entries: Vec<ManifestEntry>) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: FORMAT_VERSION,
            seed,
            generator,
            entries,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn check_header(kind: &str, format: &str, version: u32) -> Result<()> {
    if format != kind {
        return Err(Error::Parse(format!("expected format {kind:?}, found {format:?}")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported {kind} version {version}")));
    }
    Ok(())
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text)?;
    check_header(MANIFEST_FORMAT, &m.format, m.version)?;
    for e in &m.entries {
        for path in [&e.scene, &e.candidates] {
            if path.is_empty() || path.starts_with('/') || path.split('/').any(|c| c == "..") {
                return Err(Error::Parse(format!("manifest path {path:?} must be relative and inside the dataset")));
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: (usize, usize),
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model_config: ModelConfig,
    pub config_hash: String,
    pub epoch: usize,
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, epoch: usize) -> Result<Self> {
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: FORMAT_VERSION,
            model_config: model.config.clone(),
            config_hash: config_hash(&model.config)?,
            epoch,
            params: model
                .store
                .iter()
                .map(|(_, p)| CheckpointParam {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    /// Rebuild the model, checking every tensor against the config's shapes.
    pub fn into_model(self) -> Result<Model> {
        let mut store = ParamStore::new();
        for p in self.params {
            if store.find(&p.name).is_some() {
                return Err(Error::Parse(format!("duplicate parameter {}", p.name)));
            }
            let m = Matrix::new(p.shape.0, p.shape.1, p.values).map_err(|e| Error::Parse(e.to_string()))?;
            if !m.is_finite() {
                return Err(Error::Parse(format!("parameter {} is not finite", p.name)));
            }
            store.add(p.name, m, false);
        }
        Model::from_store(self.model_config, store)
    }
}

/// Upper bound on checkpoint model width accepted by the parser.
pub const MAX_CHECKPOINT_DIM: usize = 4096;

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let c: Checkpoint = serde_json::from_str(text)?;
    check_header(CHECKPOINT_FORMAT, &c.format, c.version)?;
    let cfg = &c.model_config;
    if cfg.dim > MAX_CHECKPOINT_DIM || cfg.agg_layers > 64 || cfg.fixed_queries.is_some_and(|n| n > 100_000) {
        return Err(Error::Parse("model config too large".into()));
    }
    if c.config_hash != config_hash(cfg)? {
        return Err(Error::Parse("config hash does not match model config".into()));
    }
    Ok(c)
}

/// Short stable hash of a model configuration.
pub fn config_hash(cfg: &ModelConfig) -> Result<String> {
    let canon = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&canon);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}
