//! Central finite differences, used as an oracle for the tape's backward.

use super::Tensor;
use crate::error::Result;

/// `∂f/∂x ≈ (f(x + ε) − f(x − ε)) / 2ε` for every element of every input.
pub fn numerical_gradient<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[t].shape().to_vec());
        for i in 0..inputs[t].len() {
            grad.data_mut()[i] = numerical_partial(&f, &mut work, t, i, eps)?;
        }
        out.push(grad);
    }
    Ok(out)
}

/// Central difference with respect to a single element `work[tensor][index]`.
/// `work` is restored before returning.
pub fn numerical_partial<F>(
    f: &F,
    work: &mut [Tensor],
    tensor: usize,
    index: usize,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let orig = work[tensor].data()[index];
    work[tensor].data_mut()[index] = orig + eps;
    let plus = f(work);
    work[tensor].data_mut()[index] = orig - eps;
    let minus = f(work);
    work[tensor].data_mut()[index] = orig;
    Ok((plus? - minus?) / (2.0 * eps))
}

/// Relative disagreement `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
