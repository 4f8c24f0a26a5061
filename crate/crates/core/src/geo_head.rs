//! Geometric-distance topology: end-to-start gap matrix and the mapping
//! functions that turn a gap into a connection probability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::types::{DistanceMatrix, LaneLine, TopologyMatrix};

/// Floor applied to the spread of a distance matrix.
pub const SIGMA_FLOOR: f64 = 1e-6;

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_LAMBDA: f64 = 2.0;

/// Exponent and scale of the learnable mapping, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingParams {
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for MappingParams {
    fn default() -> Self {
        MappingParams {
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl MappingParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Invalid(format!(
                "mapping params must be positive, got alpha={alpha} lambda={lambda}"
            )));
        }
        Ok(MappingParams { alpha, lambda })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingKind {
    /// `exp(-x^alpha / (lambda * sigma))`
    Ours,
    /// `exp(-x^2 / 2)`
    Gaussian,
    /// `2 / (1 + e^x)`
    SigmoidBased,
    /// `1 - tanh(x)`
    TanhBased,
}

impl MappingKind {
    pub const ALL: [MappingKind; 4] = [
        MappingKind::Ours,
        MappingKind::Gaussian,
        MappingKind::SigmoidBased,
        MappingKind::TanhBased,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MappingKind::Ours => "ours",
            MappingKind::Gaussian => "gaussian",
            MappingKind::SigmoidBased => "sigmoid",
            MappingKind::TanhBased => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ours" => Some(MappingKind::Ours),
            "gaussian" | "gau" => Some(MappingKind::Gaussian),
            "sigmoid" | "sigmoid_based" => Some(MappingKind::SigmoidBased),
            "tanh" | "tanh_based" => Some(MappingKind::TanhBased),
            _ => None,
        }
    }
}

/// How the spread of the distance matrix is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    #[default]
    Population,
    Sample,
}

/// `d[i][j] = |end(lane i) - start(lane j)|`. The diagonal is computed like any other pair.
pub fn distance_matrix(lanes: &[LaneLine]) -> DistanceMatrix {
    let n = lanes.len();
    let ends: Vec<_> = lanes.iter().map(|l| l.end()).collect();
    let starts: Vec<_> = lanes.iter().map(|l| l.start()).collect();
    let mut values = Vec::with_capacity(n * n);
    for e in &ends {
        for s in &starts {
            values.push(e.distance(s));
        }
    }
    DistanceMatrix::from_values(n, values).expect("distances of finite points are finite")
}

/// Standard deviation over all `n^2` entries, floored at [`SIGMA_FLOOR`].
pub fn matrix_std(d: &DistanceMatrix, mode: StdMode) -> f64 {
    let v = d.values();
    let n = v.len() as f64;
    if v.is_empty() {
        return SIGMA_FLOOR;
    }
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    let denom = match mode {
        StdMode::Population => n,
        StdMode::Sample => (n - 1.0).max(1.0),
    };
    (ss / denom).sqrt().max(SIGMA_FLOOR)
}

/// Mapping function value at gap `x >= 0`.
pub fn mapping_value(kind: MappingKind, x: f64, params: MappingParams, sigma: f64) -> f64 {
    match kind {
        MappingKind::Ours => (-x.powf(params.alpha) / (params.lambda * sigma)).exp(),
        MappingKind::Gaussian => (-x * x / 2.0).exp(),
        MappingKind::SigmoidBased => {
            // 2 / (1 + e^x), evaluated without overflow for large x.
            let e = (-x).exp();
            2.0 * e / (1.0 + e)
        }
        MappingKind::TanhBased => {
            // 1 - tanh(x) = 2 e^{-2x} / (1 + e^{-2x})
            let e = (-2.0 * x).exp();
            2.0 * e / (1.0 + e)
        }
    }
}

/// Partials of the learnable mapping with respect to `alpha` and `lambda`.
/// `df/dalpha` is taken as 0 at `x = 0`, its limit from the right.
pub fn mapping_gradients(x: f64, params: MappingParams, sigma: f64) -> (f64, f64) {
    let MappingParams { alpha, lambda } = params;
    if x == 0.0 {
        return (0.0, 0.0);
    }
    let xa = x.powf(alpha);
    let f = (-xa / (lambda * sigma)).exp();
    let d_alpha = -f * xa * x.ln() / (lambda * sigma);
    let d_lambda = f * xa / (lambda * lambda * sigma);
    (d_alpha, d_lambda)
}

fn check_input(d: &DistanceMatrix, sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    debug_assert!(d.values().iter().all(|v| *v >= 0.0));
    Ok(())
}

/// Apply the mapping entrywise and zero the diagonal.
pub fn map_distance(
    d: &DistanceMatrix,
    params: MappingParams,
    kind: MappingKind,
    sigma: f64,
) -> Result<TopologyMatrix> {
    check_input(d, sigma)?;
    let n = d.n();
    let mut out = TopologyMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = mapping_value(kind, d.get(i, j), params, sigma);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    op: "map_distance",
                    row: i,
                    col: j,
                });
            }
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Differentiable version: `alpha` and `lambda` are 1x1 values on the tape
/// (already positive). `sigma` is a constant.
pub fn map_distance_on_tape(
    tape: &mut Tape,
    d: &DistanceMatrix,
    alpha: Var,
    lambda: Var,
    kind: MappingKind,
    sigma: f64,
) -> Result<Var> {
    check_input(d, sigma)?;
    let params = MappingParams {
        alpha: tape.value(alpha).item(),
        lambda: tape.value(lambda).item(),
    };
    let n = d.n();
    let mut value = Matrix::zeros(n, n);
    let mut da = Matrix::zeros(n, n);
    let mut db = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let x = d.get(i, j);
            let v = mapping_value(kind, x, params, sigma);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    op: "map_distance",
                    row: i,
                    col: j,
                });
            }
            value.set(i, j, v);
            if kind == MappingKind::Ours {
                let (ga, gl) = mapping_gradients(x, params, sigma);
                da.set(i, j, ga);
                db.set(i, j, gl);
            }
        }
    }
    tape.scalar_param_map("map_distance", value, alpha, da, lambda, db)
}

/// Learnable geometric head. `alpha` and `lambda` are stored as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoHead {
    pub kind: MappingKind,
    pub std_mode: StdMode,
    pub log_alpha: ParamId,
    pub log_lambda: ParamId,
}

impl GeoHead {
    pub fn init(store: &mut ParamStore, kind: MappingKind, init: MappingParams) -> Self {
        GeoHead {
            kind,
            std_mode: StdMode::Population,
            log_alpha: store.add("geo.log_alpha", Matrix::scalar(init.alpha.ln()), false),
            log_lambda: store.add("geo.log_lambda", Matrix::scalar(init.lambda.ln()), false),
        }
    }

    pub fn bind(store: &ParamStore, kind: MappingKind) -> Result<Self> {
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
        };
        Ok(GeoHead {
            kind,
            std_mode: StdMode::Population,
            log_alpha: find("geo.log_alpha")?,
            log_lambda: find("geo.log_lambda")?,
        })
    }

    /// Current positive parameter values.
    pub fn params(&self, store: &ParamStore) -> MappingParams {
        MappingParams {
            alpha: store.get(self.log_alpha).item().exp(),
            lambda: store.get(self.log_lambda).item().exp(),
        }
    }

    /// Record `G_dis` for the given lanes.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, lanes: &[LaneLine]) -> Result<Var> {
        let d = distance_matrix(lanes);
        let sigma = matrix_std(&d, self.std_mode);
        let la = tape.param(store, self.log_alpha);
        let ll = tape.param(store, self.log_lambda);
        let alpha = tape.exp(la)?;
        let lambda = tape.exp(ll)?;
        map_distance_on_tape(tape, &d, alpha, lambda, self.kind, sigma)
    }
}
