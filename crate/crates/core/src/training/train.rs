use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{adam_step, cosine_lr, AdamState, Gradients, Matrix, ParamId, Tape, Var};
use crate::scene_gen::{rng_for, CandidateSet};
use crate::surrogate::lanes_from_matrix;
use crate::types::Scene;

use super::losses::{topology_loss_on_tape, LossWeights, TopologyLossForm, CLS_FOCAL};
use super::matching::{hungarian_match, MatchResult};
use super::model::{Forward, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weights: LossWeights,
    pub topology_loss: TopologyLossForm,
    /// Also supervise `G_dis` with the topology loss.
    pub supervise_gdis_directly: bool,
    /// Run the scenes of a batch on separate threads.
    pub parallel_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 24,
            batch_size: 2,
            seed: 0,
            lr: 2e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weights: LossWeights::default(),
            topology_loss: TopologyLossForm::Focal,
            supervise_gdis_directly: false,
            parallel_batch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Invalid("lr and weight decay must be finite and >= 0".into()));
        }
        self.weights.validate()
    }

    pub fn optimizer(&self) -> AdamState {
        let mut s = AdamState::new(self.lr);
        s.beta1 = self.beta1;
        s.beta2 = self.beta2;
        s.eps = self.eps;
        s
    }
}

/// A ground-truth scene with its noisy candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: Scene,
    pub candidates: CandidateSet,
}

/// Per-scene loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg: f64,
    pub top: f64,
    pub det: f64,
    pub total: f64,
}

/// Record the full objective for one scene. Zero-weight terms are left off the tape.
pub fn scene_objective(
    model: &Model,
    tape: &mut Tape,
    sample: &Sample,
    cfg: &TrainConfig,
) -> Result<(Var, LossBreakdown, MatchResult, Forward)> {
    let fwd = model.forward(tape, &sample.candidates)?;
    let lanes = lanes_from_matrix(tape.value(fwd.lanes))?;
    let scores = tape.value(fwd.scores).data().to_vec();
    let gt = &sample.scene.graph;
    let matching = hungarian_match(&lanes, &scores, gt, &cfg.weights)?;
    let n = lanes.len();
    let w = &cfg.weights;
    let mut terms: Vec<Var> = Vec::new();
    let mut out = LossBreakdown::default();

    if w.cls > 0.0 {
        let mut labels = Matrix::zeros(n, 1);
        for &(p, _) in &matching.assignment {
            labels.set(p, 0, 1.0);
        }
        let cls = tape.focal(fwd.scores, labels, Matrix::filled(n, 1, 1.0), CLS_FOCAL)?;
        out.cls = tape.value(cls).item();
        terms.push(tape.scale(cls, w.cls)?);
    }
    if w.reg > 0.0 && !matching.assignment.is_empty() {
        let preds: Vec<usize> = matching.assignment.iter().map(|&(p, _)| p).collect();
        let picked = tape.gather_rows(fwd.lanes, &preds)?;
        let mut target = Vec::with_capacity(preds.len() * 33);
        for &(_, g) in &matching.assignment {
            target.extend(gt.lanes[g].flatten());
        }
        let target = Matrix::new(preds.len(), tape.value(picked).cols(), target)?;
        let reg = tape.l1(picked, target)?;
        out.reg = tape.value(reg).item();
        terms.push(tape.scale(reg, w.reg)?);
    }
    out.det = w.cls * out.cls + w.reg * out.reg;

    if w.top > 0.0 {
        let adj = gt.adjacency()?;
        let mut supervised: Vec<Var> = fwd.g_learned.into_iter().collect();
        if cfg.supervise_gdis_directly {
            supervised.extend(fwd.g_dis);
        }
        for g in supervised {
            let top = topology_loss_on_tape(tape, g, &adj, &matching, cfg.topology_loss)?;
            out.top += tape.value(top).item();
            terms.push(tape.scale(top, w.top)?);
        }
    }

    let total = match terms.split_first() {
        None => tape.constant(Matrix::scalar(0.0))?,
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    out.total = tape.value(total).item();
    Ok((total, out, matching, fwd))
}

/// Loss and parameter gradients for one scene.
pub fn scene_gradients(model: &Model, sample: &Sample, cfg: &TrainConfig) -> Result<(LossBreakdown, Gradients)> {
    let mut tape = Tape::new();
    let (loss, parts, _, _) = scene_objective(model, &mut tape, sample, cfg)?;
    let grads = tape.backward(loss)?;
    Ok((parts, grads))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_det: f64,
    pub l_top: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: u64,
    pub mean_det: f64,
    pub mean_top: f64,
    pub mean_total: f64,
}

/// Optimizer steps per epoch for a dataset of `n` scenes.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size.max(1)) as u64
}

fn batch_gradients(
    model: &Model,
    data: &[Sample],
    batch: &[usize],
    cfg: &TrainConfig,
) -> Vec<Result<(LossBreakdown, Gradients)>> {
    if cfg.parallel_batch && batch.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&i| s.spawn(move || scene_gradients(model, &data[i], cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        })
    } else {
        batch.iter().map(|&i| scene_gradients(model, &data[i], cfg)).collect()
    }
}

/// One pass over `data` in a seeded order. Gradients are averaged over each batch.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut AdamState,
    data: &[Sample],
    cfg: &TrainConfig,
    epoch: usize,
    mut log: Option<&mut dyn Write>,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    let total_steps = steps_per_epoch(data.len(), cfg.batch_size) * cfg.epochs as u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_for(cfg.seed, 1000 + epoch as u64));
    let mut metrics = EpochMetrics {
        epoch,
        ..Default::default()
    };
    for batch in order.chunks(cfg.batch_size) {
        let step = opt.step;
        let results = batch_gradients(model, data, batch, cfg);
        let mut summed: BTreeMap<ParamId, Matrix> = BTreeMap::new();
        let (mut det, mut top) = (0.0, 0.0);
        for (&i, r) in batch.iter().zip(results) {
            let (parts, grads) = r.map_err(|e| match e {
                Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => Error::NonFiniteLoss {
                    scene: data[i].scene.id.clone(),
                    step,
                },
                other => other,
            })?;
            if !parts.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    scene: data[i].scene.id.clone(),
                    step,
                });
            }
            det += parts.det;
            top += parts.top;
            metrics.mean_total += parts.total;
            Gradients::accumulate_params(&mut summed, &grads);
        }
        let inv = 1.0 / batch.len() as f64;
        for g in summed.values_mut() {
            *g = g.map(|v| v * inv);
        }
        opt.lr = cosine_lr(cfg.lr, step, total_steps);
        adam_step(opt, &mut model.store, &summed, cfg.weight_decay)?;
        metrics.mean_det += det;
        metrics.mean_top += top;
        metrics.steps += 1;
        if let Some(w) = log.as_deref_mut() {
            let mp = model.mapping_params();
            let fv = model.fusion_values();
            let rec = LogRecord {
                step: opt.step,
                epoch,
                l_det: det * inv,
                l_top: top * inv,
                alpha: mp.map(|m| m.alpha),
                lambda: mp.map(|m| m.lambda),
                lambda1: fv.map(|f| f.0),
                lambda2: fv.map(|f| f.1),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    let n = data.len().max(1) as f64;
    metrics.mean_det /= n;
    metrics.mean_top /= n;
    metrics.mean_total /= n;
    Ok(metrics)
}

/// Run every epoch of `cfg` from a fresh optimizer.
pub fn train(
    model: &mut Model,
    data: &[Sample],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let mut opt = cfg.optimizer();
    let mut out = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let log: Option<&mut dyn Write> = match log.as_mut() {
            Some(w) => Some(&mut **w),
            None => None,
        };
        out.push(train_epoch(model, &mut opt, data, cfg, e, log)?);
    }
    Ok(out)
}
