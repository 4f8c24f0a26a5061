pub mod error;
pub mod eval;
pub mod experiments;
pub mod formats;
pub mod fusion;
pub mod geo_head;
pub mod numerics;
pub mod scene_gen;
pub mod sim_head;
pub mod surrogate;
pub mod training;
pub mod types;

pub use error::{Error, Result};
