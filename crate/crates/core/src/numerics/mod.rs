//! Dense matrices, reverse-mode differentiation, MLPs and the optimizer.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;
mod params;
mod tape;

pub use adam::{adam_step, cosine_lr, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, RELATIVE_FLOOR};
pub use matrix::Matrix;
pub use mlp::{mlp_forward, MlpParams};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{focal_value, FocalSpec, Gradients, Tape, Var, PROB_EPS};
