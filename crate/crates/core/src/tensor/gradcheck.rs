//! Central finite-difference gradient verification.
//!
//! These helpers only drive forward passes, so they stay independent of the
//! backward implementations they are used to check. Run them with `f64`
//! tensors; at `f32` the difference quotients drown in rounding noise.

use super::Tensor;
use crate::error::Result;

/// Central-difference gradients of `loss_fn` with respect to every element of
/// every tensor in `params`, perturbing one element at a time by `±eps`.
///
/// `loss_fn` must rebuild its forward pass from the *same* tensors on every
/// call and return a scalar.
pub fn finite_difference_grads<F>(
    params: &[Tensor<f64>],
    mut loss_fn: F,
    eps: f64,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    let mut grads = Vec::with_capacity(params.len());
    for p in params {
        let n = p.numel();
        let mut g = vec![0.0; n];
        for j in 0..n {
            let original = p.data()[j];
            p.update_data(|d| d[j] = original + eps);
            let plus = loss_fn()?.item();
            p.update_data(|d| d[j] = original - eps);
            let minus = loss_fn()?.item();
            p.update_data(|d| d[j] = original);
            g[j] = (plus - minus) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Worst relative disagreement between two gradient sets, with the usual
/// guard against near-zero denominators.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.iter().zip(n) {
            let denom = av.abs().max(nv.abs()).max(1e-6);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Run one backward pass and compare against central finite differences.
/// Returns the maximum relative error over all parameter elements.
pub fn check_gradients<F>(params: &[Tensor<f64>], mut loss_fn: F, eps: f64) -> Result<f64>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let numeric = finite_difference_grads(params, loss_fn, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn catches_correct_gradient() {
        let x = Tensor::<f64>::param(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let err = check_gradients(
            &[x.clone()],
            || {
                let y = ops::sigmoid(&ops::mul(&x, &x)?);
                Ok(ops::mean(&y))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn flags_wrong_gradient() {
        // sum(x) reported against finite differences of sum(2x) must disagree.
        let x = Tensor::<f64>::param(vec![2], vec![1.0, 2.0]).unwrap();
        x.zero_grad();
        let loss = ops::sum(&x);
        loss.backward().unwrap();
        let analytic = vec![x.grad().unwrap()];
        let numeric =
            finite_difference_grads(&[x.clone()], || Ok(ops::scale(&ops::sum(&x), 2.0)), 1e-5)
                .unwrap();
        assert!(max_relative_error(&analytic, &numeric) > 0.4);
    }
}
