use super::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Denominator floor for [`relative_error`]. Central differences carry
/// roundoff near `1e-10` for unit-scale losses, so gradients below this size
/// are effectively compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Relative error with the `max(|a|, |b|, RELATIVE_FLOOR)` denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Compare tape gradients against central differences for every entry of
/// `params`. `f` rebuilds the loss from scratch for a given store.
///
/// Returns the largest relative error seen.
pub fn finite_diff_check<F>(store: &ParamStore, params: &[ParamId], eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    let (tape, loss) = f(store)?;
    let grads: Gradients = tape.backward(loss)?;
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for &id in params {
        let analytic = grads.param_or_zero(store, id);
        let n = analytic.data().len();
        for k in 0..n {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + eps;
            let (t, l) = f(&probe)?;
            let plus = t.value(l).item();
            probe.get_mut(id).data_mut()[k] = orig - eps;
            let (t, l) = f(&probe)?;
            let minus = t.value(l).item();
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn quadratic_at_three() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::scalar(3.0), true);
        let err = finite_diff_check(&store, &[w], 1e-5, |s| {
            let mut t = Tape::new();
            let v = t.param(s, w);
            let sq = t.mul(v, v)?;
            let l = t.sum(sq)?;
            Ok((t, l))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::scalar(3.0), true);
        let err = finite_diff_check(&store, &[w], 1e-5, |_| {
            let mut t = Tape::new();
            let c = t.constant(Matrix::scalar(7.0))?;
            let l = t.sum(c)?;
            Ok((t, l))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
