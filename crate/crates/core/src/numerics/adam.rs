use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<ParamId, Matrix>,
    second: BTreeMap<ParamId, Matrix>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// Cosine-annealed learning rate at `step` of `total`.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total) as f64) / total as f64;
    0.5 * base * (1.0 + (PI * t).cos())
}

/// One update over every parameter in `store`. Missing gradients count as zero.
/// Weight decay only touches parameters flagged for it.
pub fn adam_step(
    state: &mut AdamState,
    store: &mut ParamStore,
    grads: &BTreeMap<ParamId, Matrix>,
    weight_decay: f64,
) -> Result<()> {
    for (id, g) in grads {
        let shape = store.get(*id).shape();
        if g.shape() != shape {
            return Err(Error::Shape {
                op: "adam_step",
                left: shape,
                right: g.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let (rows, cols) = store.get(id).shape();
        let decay = store.param(id).decay;
        let zero;
        let g = match grads.get(&id) {
            Some(g) => g,
            None => {
                zero = Matrix::zeros(rows, cols);
                &zero
            }
        };
        let m = state.first.entry(id).or_insert_with(|| Matrix::zeros(rows, cols));
        let v = state.second.entry(id).or_insert_with(|| Matrix::zeros(rows, cols));
        let p = store.get_mut(id);
        for k in 0..rows * cols {
            let gk = g.data()[k];
            let mk = state.beta1 * m.data()[k] + (1.0 - state.beta1) * gk;
            let vk = state.beta2 * v.data()[k] + (1.0 - state.beta2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let mut pk = p.data()[k];
            if decay {
                pk -= state.lr * weight_decay * pk;
            }
            pk -= state.lr * (mk / bc1) / ((vk / bc2).sqrt() + state.eps);
            p.data_mut()[k] = pk;
        }
        if let Some((row, col)) = p.first_non_finite() {
            return Err(Error::NonFinite {
                op: "adam_step",
                row,
                col,
            });
        }
    }
    Ok(())
}
