//! Learnable fusion of the two topologies and the topology-guided feature
//! aggregation that feeds lane refinement.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::types::TopologyMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub lambda1: ParamId,
    pub lambda2: ParamId,
}

impl FusionParams {
    pub fn init(store: &mut ParamStore) -> Self {
        FusionParams {
            lambda1: store.add("fusion.lambda1", Matrix::scalar(1.0), false),
            lambda2: store.add("fusion.lambda2", Matrix::scalar(1.0), false),
        }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
        };
        Ok(FusionParams {
            lambda1: find("fusion.lambda1")?,
            lambda2: find("fusion.lambda2")?,
        })
    }

    pub fn values(&self, store: &ParamStore) -> (f64, f64) {
        (store.get(self.lambda1).item(), store.get(self.lambda2).item())
    }
}

/// Raw `G = lambda1 * G_dis + lambda2 * G_sim`. May leave `[0, 1]`.
pub fn fuse_topology(
    tape: &mut Tape,
    store: &ParamStore,
    params: &FusionParams,
    g_dis: Var,
    g_sim: Var,
) -> Result<Var> {
    let (a, b) = (tape.value(g_dis).shape(), tape.value(g_sim).shape());
    if a != b {
        return Err(Error::Shape {
            op: "fuse_topology",
            left: a,
            right: b,
        });
    }
    let l1 = tape.param(store, params.lambda1);
    let l2 = tape.param(store, params.lambda2);
    let x = tape.scale_by(g_dis, l1)?;
    let y = tape.scale_by(g_sim, l2)?;
    tape.add(x, y)
}

/// How a raw fused matrix is brought into `[0, 1]` for metrics and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationRule {
    /// `min(1, max(0, g))`
    #[default]
    Clamp,
    /// Divide by `|lambda1| + |lambda2|`, then clamp.
    Normalize,
}

/// Probability-calibrated view of a raw fused topology.
pub fn calibrated_view(raw: &Matrix, rule: CalibrationRule, lambdas: (f64, f64)) -> Result<TopologyMatrix> {
    let scale = match rule {
        CalibrationRule::Clamp => 1.0,
        CalibrationRule::Normalize => {
            let s = lambdas.0.abs() + lambdas.1.abs();
            if s > 0.0 {
                1.0 / s
            } else {
                1.0
            }
        }
    };
    TopologyMatrix::from_values(
        raw.rows(),
        raw.data().iter().map(|v| (v * scale).clamp(0.0, 1.0)).collect(),
    )
}

/// One square mixing matrix per aggregation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams {
    pub mix: Vec<ParamId>,
}

impl AggregatorParams {
    pub fn init<R: Rng>(store: &mut ParamStore, dim: usize, layers: usize, rng: &mut R) -> Self {
        AggregatorParams {
            mix: (0..layers)
                .map(|k| store.add_uniform(format!("agg.{k}.mix"), dim, dim, rng))
                .collect(),
        }
    }

    pub fn bind(store: &ParamStore, dim: usize, layers: usize) -> Result<Self> {
        let mut mix = Vec::with_capacity(layers);
        for k in 0..layers {
            let name = format!("agg.{k}.mix");
            let id = store
                .find(&name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
            if store.get(id).shape() != (dim, dim) {
                return Err(Error::Shape {
                    op: "bind",
                    left: store.get(id).shape(),
                    right: (dim, dim),
                });
            }
            mix.push(id);
        }
        Ok(AggregatorParams { mix })
    }
}

/// `Q' = Q + rownorm(G) · Q · W` per layer, where rownorm divides each row by
/// `max(row_sum, 1)`.
pub fn aggregate_features(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AggregatorParams,
    queries: Var,
    topology: Var,
) -> Result<Var> {
    let (q, g) = (tape.value(queries).shape(), tape.value(topology).shape());
    if g.0 != g.1 || g.0 != q.0 {
        return Err(Error::Shape {
            op: "aggregate_features",
            left: q,
            right: g,
        });
    }
    let adj = tape.row_normalize(topology)?;
    let mut h = queries;
    for &w in &params.mix {
        if store.get(w).shape() != (q.1, q.1) {
            return Err(Error::Shape {
                op: "aggregate_features",
                left: q,
                right: store.get(w).shape(),
            });
        }
        let wv = tape.param(store, w);
        let msg = tape.matmul(adj, h)?;
        let mixed = tape.matmul(msg, wv)?;
        h = tape.add(h, mixed)?;
    }
    Ok(h)
}
