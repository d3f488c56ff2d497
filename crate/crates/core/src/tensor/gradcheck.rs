//! Central finite differences for checking analytic gradients.

use super::Tensor;

/// Numerical gradient of `f` with respect to every entry of every input.
pub fn numeric_gradient<F>(mut f: F, inputs: &[Tensor], step: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work = inputs.to_vec();
    let mut out: Vec<Tensor> = inputs.iter().map(Tensor::zeros_like).collect();
    for k in 0..work.len() {
        for i in 0..work[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = f(&work);
            work[k].data_mut()[i] = orig - step;
            let minus = f(&work);
            work[k].data_mut()[i] = orig;
            out[k].data_mut()[i] = (plus - minus) / (2.0 * step);
        }
    }
    out
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Normwise relative error `‖a - n‖∞ / max(‖a‖∞, ‖n‖∞, floor)` of one tensor.
///
/// Used for composite expressions, where entries many orders of magnitude
/// below the tensor's scale sit at the finite-difference noise level.
pub fn tensor_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(floor)
}
