use std::path::{Path, PathBuf};

use clap::Args;
use lanetopo::eval::{FuseRule, TOP_MATCH_THRESHOLD};
use lanetopo::experiments::BenchmarkConfig;
use lanetopo::fusion::CalibrationRule;
use lanetopo::geo_head::{MappingKind, MappingParams};
use lanetopo::scene_gen::Layout;
use lanetopo::training::{HeadKind, LossWeights, ModelConfig, TopologyLossForm, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Settings shared by every command. Flags override values from `--config`.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Flat TOML file of settings (same names as the flags, with underscores)
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Ignored when read from a config file; lets a config echo be fed back in
    #[arg(skip)]
    #[allow(dead_code)]
    pub command: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Noise level in meters; a comma-separated list sweeps several levels
    #[arg(long)]
    pub sigma: Option<SigmaList>,
    #[arg(long)]
    pub mapping: Option<String>,
    #[arg(long)]
    pub fuse_rule: Option<String>,
    /// Scene layout for `gen`: chain, fork, merge, grid or mixed
    #[arg(long)]
    pub layout: Option<String>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub train_scenes: Option<usize>,
    #[arg(long)]
    pub test_scenes: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long)]
    pub drop_prob: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Topology head: mlp_pair, similarity_only, geodist_only or fused
    #[arg(long)]
    pub head: Option<String>,
    /// Comma-separated heads for `ablate-heads`
    #[arg(long)]
    pub heads: Option<String>,
    #[arg(long)]
    pub agg_layers: Option<usize>,
    /// clamp or normalize
    #[arg(long)]
    pub calibration: Option<String>,
    /// Learned query slots; 0 keeps one query per candidate
    #[arg(long)]
    pub fixed_queries: Option<usize>,
    #[arg(long)]
    pub w_cls: Option<f64>,
    #[arg(long)]
    pub w_reg: Option<f64>,
    #[arg(long)]
    pub w_top: Option<f64>,
    /// focal or bce
    #[arg(long)]
    pub topology_loss: Option<String>,
    #[arg(long)]
    pub supervise_gdis_directly: Option<bool>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Dataset directory (contains manifest.json)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of prediction files
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub match_threshold: Option<f64>,
}

/// One or more noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaList {
    One(f64),
    Many(Vec<f64>),
}

impl SigmaList {
    fn values(&self) -> Vec<f64> {
        match self {
            SigmaList::One(v) => vec![*v],
            SigmaList::Many(v) => v.clone(),
        }
    }
}

impl std::str::FromStr for SigmaList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad sigma {p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(SigmaList::Many)
    }
}

/// Fully resolved settings; written as `config_echo.toml` by every run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    pub sigma: Vec<f64>,
    pub mapping: String,
    pub fuse_rule: String,
    pub layout: String,
    pub scenes: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub distractors: usize,
    pub drop_prob: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dim: usize,
    pub head: String,
    pub heads: String,
    pub agg_layers: usize,
    pub calibration: String,
    pub fixed_queries: usize,
    pub w_cls: f64,
    pub w_reg: f64,
    pub w_top: f64,
    pub topology_loss: String,
    pub supervise_gdis_directly: bool,
    pub alpha: f64,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub x_max: f64,
    pub points: usize,
    pub score_threshold: f64,
    pub match_threshold: f64,
}

/// Parse the text of a `--config` file.
pub fn parse_config_text(text: &str) -> Result<Overrides, toml::de::Error> {
    toml::from_str(text)
}

fn read_file_config(path: &Path) -> Result<Overrides, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
}

macro_rules! pick {
    ($flags:expr, $file:expr, $field:ident, $default:expr) => {
        $flags.$field.clone().or_else(|| $file.$field.clone()).unwrap_or_else(|| $default)
    };
}

impl RunConfig {
    pub fn resolve(command: &str, flags: &Overrides) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => read_file_config(p)?,
            None => Overrides::default(),
        };
        let d = TrainConfig::default();
        let m = ModelConfig::default();
        let w = LossWeights::default();
        let cfg = RunConfig {
            command: command.to_string(),
            seed: pick!(flags, file, seed, 0),
            out: pick!(flags, file, out, PathBuf::from("out")),
            sigma: flags
                .sigma
                .clone()
                .or_else(|| file.sigma.clone())
                .map_or_else(|| vec![0.3], |s| s.values()),
            mapping: pick!(flags, file, mapping, "ours".into()),
            fuse_rule: pick!(flags, file, fuse_rule, "max".into()),
            layout: pick!(flags, file, layout, "mixed".into()),
            scenes: pick!(flags, file, scenes, 100),
            train_scenes: pick!(flags, file, train_scenes, 2000),
            test_scenes: pick!(flags, file, test_scenes, 500),
            distractors: pick!(flags, file, distractors, 2),
            drop_prob: pick!(flags, file, drop_prob, 0.0),
            epochs: pick!(flags, file, epochs, d.epochs),
            batch_size: pick!(flags, file, batch_size, d.batch_size),
            lr: pick!(flags, file, lr, d.lr),
            weight_decay: pick!(flags, file, weight_decay, d.weight_decay),
            dim: pick!(flags, file, dim, m.dim),
            head: pick!(flags, file, head, m.head.name().into()),
            heads: pick!(
                flags,
                file,
                heads,
                HeadKind::ALL.map(|h| h.name()).join(",")
            ),
            agg_layers: pick!(flags, file, agg_layers, m.agg_layers),
            calibration: pick!(flags, file, calibration, "normalize".into()),
            fixed_queries: pick!(flags, file, fixed_queries, 0),
            w_cls: pick!(flags, file, w_cls, w.cls),
            w_reg: pick!(flags, file, w_reg, w.reg),
            w_top: pick!(flags, file, w_top, w.top),
            topology_loss: pick!(flags, file, topology_loss, "focal".into()),
            supervise_gdis_directly: pick!(flags, file, supervise_gdis_directly, false),
            alpha: pick!(flags, file, alpha, m.mapping_init.alpha),
            lambda: pick!(flags, file, lambda, m.mapping_init.lambda),
            data: flags.data.clone().or(file.data.clone()),
            predictions: flags.predictions.clone().or(file.predictions.clone()),
            checkpoint: flags.checkpoint.clone().or(file.checkpoint.clone()),
            x_max: pick!(flags, file, x_max, 10.0),
            points: pick!(flags, file, points, 1001),
            score_threshold: pick!(flags, file, score_threshold, 0.0),
            match_threshold: pick!(flags, file, match_threshold, TOP_MATCH_THRESHOLD),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        self.mapping_kind()?;
        self.fuse()?;
        self.layouts()?;
        self.head_kind()?;
        self.head_list()?;
        self.calibration_rule()?;
        self.loss_form()?;
        self.mapping_params()?;
        if self.sigma.is_empty() || self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CliError::Usage("sigma values must be finite and >= 0".into()));
        }
        if self.points < 2 || !(self.x_max.is_finite() && self.x_max > 0.0) {
            return Err(CliError::Usage("curves need points >= 2 and x_max > 0".into()));
        }
        self.train_config().validate().map_err(usage)?;
        self.model_config()?.validate().map_err(usage)?;
        self.benchmark(self.sigma[0])?.noise(0).validate().map_err(usage)?;
        Ok(())
    }

    pub fn mapping_kind(&self) -> Result<MappingKind, CliError> {
        MappingKind::parse(&self.mapping).ok_or_else(|| CliError::Usage(format!("unknown mapping {:?}", self.mapping)))
    }

    pub fn mapping_params(&self) -> Result<MappingParams, CliError> {
        MappingParams::new(self.alpha, self.lambda).map_err(usage)
    }

    pub fn fuse(&self) -> Result<FuseRule, CliError> {
        self.fuse_rule.parse().map_err(usage)
    }

    pub fn layouts(&self) -> Result<Vec<Layout>, CliError> {
        match self.layout.as_str() {
            "mixed" => Ok(Layout::ALL.to_vec()),
            s => Layout::parse(s)
                .map(|l| vec![l])
                .ok_or_else(|| CliError::Usage(format!("unknown layout {s:?}"))),
        }
    }

    pub fn head_kind(&self) -> Result<HeadKind, CliError> {
        HeadKind::parse(&self.head).ok_or_else(|| CliError::Usage(format!("unknown head {:?}", self.head)))
    }

    pub fn head_list(&self) -> Result<Vec<HeadKind>, CliError> {
        self.heads
            .split(',')
            .map(|h| HeadKind::parse(h.trim()).ok_or_else(|| CliError::Usage(format!("unknown head {h:?}"))))
            .collect()
    }

    pub fn calibration_rule(&self) -> Result<CalibrationRule, CliError> {
        match self.calibration.as_str() {
            "clamp" => Ok(CalibrationRule::Clamp),
            "normalize" => Ok(CalibrationRule::Normalize),
            s => Err(CliError::Usage(format!("unknown calibration {s:?}"))),
        }
    }

    pub fn loss_form(&self) -> Result<TopologyLossForm, CliError> {
        match self.topology_loss.as_str() {
            "focal" => Ok(TopologyLossForm::Focal),
            "bce" => Ok(TopologyLossForm::Bce),
            s => Err(CliError::Usage(format!("unknown topology loss {s:?}"))),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        Ok(ModelConfig {
            head: self.head_kind()?,
            dim: self.dim,
            mapping: self.mapping_kind()?,
            mapping_init: self.mapping_params()?,
            agg_layers: self.agg_layers,
            calibration: self.calibration_rule()?,
            fixed_queries: (self.fixed_queries > 0).then_some(self.fixed_queries),
            init_seed: self.seed,
            ..ModelConfig::default()
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            lr: self.lr,
            weight_decay: self.weight_decay,
            weights: LossWeights {
                cls: self.w_cls,
                reg: self.w_reg,
                top: self.w_top,
            },
            topology_loss: self.loss_form().unwrap_or_default(),
            supervise_gdis_directly: self.supervise_gdis_directly,
            ..TrainConfig::default()
        }
    }

    pub fn benchmark(&self, sigma: f64) -> Result<BenchmarkConfig, CliError> {
        Ok(BenchmarkConfig {
            train_scenes: self.train_scenes,
            test_scenes: self.test_scenes,
            layouts: self.layouts()?,
            endpoint_sigma: sigma,
            drop_prob: self.drop_prob,
            distractor_count: self.distractors,
            seed: self.seed,
        })
    }

    pub fn echo(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Other(format!("config echo: {e}")))
    }
}

fn usage(e: lanetopo::Error) -> CliError {
    CliError::Usage(e.to_string())
}
