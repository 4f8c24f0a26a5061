use rand::Rng;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// A stack of affine layers with ReLU between them (not after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
}

impl MlpParams {
    /// Register a new MLP with layer widths `dims[0] -> dims[1] -> ...`.
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let weight = store.add_uniform(format!("{prefix}.{k}.weight"), w[0], w[1], rng);
                let bias = store.add(
                    format!("{prefix}.{k}.bias"),
                    super::Matrix::zeros(1, w[1]),
                    false,
                );
                (weight, bias)
            })
            .collect();
        MlpParams {
            layers,
            dims: dims.to_vec(),
        }
    }

    /// Rebind to parameters already present in `store` (e.g. after loading a checkpoint).
    pub fn bind(store: &ParamStore, prefix: &str, dims: &[usize]) -> Result<Self> {
        let mut layers = Vec::new();
        for (k, w) in dims.windows(2).enumerate() {
            let find = |name: String, shape: (usize, usize)| -> Result<ParamId> {
                let id = store
                    .find(&name)
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
            layers.push((
                find(format!("{prefix}.{k}.weight"), (w[0], w[1]))?,
                find(format!("{prefix}.{k}.bias"), (1, w[1]))?,
            ));
        }
        Ok(MlpParams {
            layers,
            dims: dims.to_vec(),
        })
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Forward pass recorded on `tape`; rows are independent samples.
pub fn mlp_forward(tape: &mut Tape, store: &ParamStore, mlp: &MlpParams, input: Var) -> Result<Var> {
    let shape = tape.value(input).shape();
    if shape.1 != mlp.input_dim() {
        return Err(Error::Shape {
            op: "mlp_forward",
            left: shape,
            right: (mlp.input_dim(), mlp.dims[1]),
        });
    }
    let mut h = input;
    let last = mlp.layers.len() - 1;
    for (k, &(w, b)) in mlp.layers.iter().enumerate() {
        let wv = tape.param(store, w);
        let bv = tape.param(store, b);
        let z = tape.matmul(h, wv)?;
        h = tape.add_row(z, bv)?;
        if k != last {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
