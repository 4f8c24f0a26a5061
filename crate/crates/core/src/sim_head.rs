//! Query-similarity topology: two independent MLP embeddings, a dot product,
//! and a sigmoid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{mlp_forward, Matrix, MlpParams, ParamId, ParamStore, Tape, Var};

/// Default query width at desk scale.
pub const DEFAULT_QUERY_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityParams {
    pub mlp1: MlpParams,
    pub mlp2: MlpParams,
    /// Zero the diagonal of `G_sim` (no self-connection).
    pub zero_diagonal: bool,
}

impl SimilarityParams {
    /// Two three-layer MLPs `C -> C -> C -> C`.
    pub fn init<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        let dims = [dim, dim, dim, dim];
        SimilarityParams {
            mlp1: MlpParams::init(store, "sim.mlp1", &dims, rng),
            mlp2: MlpParams::init(store, "sim.mlp2", &dims, rng),
            zero_diagonal: true,
        }
    }

    pub fn bind(store: &ParamStore, dim: usize) -> Result<Self> {
        let dims = [dim, dim, dim, dim];
        Ok(SimilarityParams {
            mlp1: MlpParams::bind(store, "sim.mlp1", &dims)?,
            mlp2: MlpParams::bind(store, "sim.mlp2", &dims)?,
            zero_diagonal: true,
        })
    }
}

/// Constant matrix with zeros on the diagonal and ones elsewhere.
pub fn off_diagonal_mask(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// `G_sim = sigmoid(E1 · E2^T)` with `E1 = mlp1(Q)`, `E2 = mlp2(Q)`.
pub fn similarity_topology(
    tape: &mut Tape,
    store: &ParamStore,
    params: &SimilarityParams,
    queries: Var,
) -> Result<Var> {
    let q = tape.value(queries).shape();
    if q.1 != params.mlp1.input_dim() || q.1 != params.mlp2.input_dim() {
        return Err(Error::Shape {
            op: "similarity_topology",
            left: q,
            right: (params.mlp1.input_dim(), params.mlp1.output_dim()),
        });
    }
    let e1 = mlp_forward(tape, store, &params.mlp1, queries)?;
    let e2 = mlp_forward(tape, store, &params.mlp2, queries)?;
    let e2t = tape.transpose(e2);
    let s = tape.matmul(e1, e2t)?;
    let g = tape.sigmoid(s)?;
    if params.zero_diagonal {
        let mask = tape.constant(off_diagonal_mask(q.0))?;
        tape.mul(g, mask)
    } else {
        Ok(g)
    }
}

/// Baseline topology head: a three-layer MLP on concatenated query pairs.
///
/// The first layer's weight is stored as its two halves, so that
/// `[q_i, q_j] · W = q_i · W_src + q_j · W_dst`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMlpParams {
    pub w_src: ParamId,
    pub w_dst: ParamId,
    pub bias: ParamId,
    pub tail: MlpParams,
    pub zero_diagonal: bool,
}

impl PairMlpParams {
    pub fn init<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        // fan-in of the first layer is 2C
        let scale = 1.0 / ((2 * dim) as f64).sqrt();
        let mut half = |store: &mut ParamStore, name: &str| {
            let m = Matrix::from_fn(dim, dim, |_, _| rng.random_range(-scale..scale));
            store.add(name, m, true)
        };
        let w_src = half(store, "pair.0.weight_src");
        let w_dst = half(store, "pair.0.weight_dst");
        let bias = store.add("pair.0.bias", Matrix::zeros(1, dim), false);
        PairMlpParams {
            w_src,
            w_dst,
            bias,
            tail: MlpParams::init(store, "pair.tail", &[dim, dim, 1], rng),
            zero_diagonal: true,
        }
    }

    pub fn bind(store: &ParamStore, dim: usize) -> Result<Self> {
        let find = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
            if store.get(id).shape() != shape {
                return Err(Error::Shape {
                    op: "bind",
                    left: store.get(id).shape(),
                    right: shape,
                });
            }
            Ok(id)
        };
        Ok(PairMlpParams {
            w_src: find("pair.0.weight_src", (dim, dim))?,
            w_dst: find("pair.0.weight_dst", (dim, dim))?,
            bias: find("pair.0.bias", (1, dim))?,
            tail: MlpParams::bind(store, "pair.tail", &[dim, dim, 1])?,
            zero_diagonal: true,
        })
    }
}

/// `G[i][j] = sigmoid(mlp([q_i, q_j]))`.
pub fn pair_topology(
    tape: &mut Tape,
    store: &ParamStore,
    params: &PairMlpParams,
    queries: Var,
) -> Result<Var> {
    let q = tape.value(queries).shape();
    let w = store.get(params.w_src).shape();
    if q.1 != w.0 {
        return Err(Error::Shape {
            op: "pair_topology",
            left: q,
            right: w,
        });
    }
    let ws = tape.param(store, params.w_src);
    let wd = tape.param(store, params.w_dst);
    let b = tape.param(store, params.bias);
    let src = tape.matmul(queries, ws)?;
    let dst = tape.matmul(queries, wd)?;
    let pairs = tape.pair_sum(src, dst)?;
    let h = tape.add_row(pairs, b)?;
    let h = tape.relu(h);
    let logits = mlp_forward(tape, store, &params.tail, h)?;
    let logits = tape.reshape(logits, q.0, q.0)?;
    let g = tape.sigmoid(logits)?;
    if params.zero_diagonal {
        let mask = tape.constant(off_diagonal_mask(q.0))?;
        tape.mul(g, mask)
    } else {
        Ok(g)
    }
}
