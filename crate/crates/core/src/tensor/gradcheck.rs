use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central
/// differences at `point`.
///
/// `f` records the function on a fresh tape given the leaf holding the point
/// and returns the scalar output. The result is the maximum over coordinates
/// of `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(point: &Tensor, h: f32, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |p: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p.clone(), true);
        let y = f(&mut tape, x)?;
        let value = tape.value(y).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("grad_check"));
        }
        Ok(value as f64)
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        // actual step after f32 rounding of the perturbed coordinate
        let step = (orig + h) as f64 - (orig - h) as f64;
        let numeric = (plus - minus) / step;
        let err = (analytic.data()[i] as f64 - numeric).abs() / numeric.abs().max(1.0);
        if !err.is_finite() {
            return Err(Error::NonFinite("grad_check"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
