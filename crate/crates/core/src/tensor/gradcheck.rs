//! Central-difference gradient checking.

use super::{no_grad, Element, Tensor};
use crate::error::Result;

/// Max over elements of `|analytic − numeric| / (|analytic| + 1e-8)`,
/// where `numeric` is the central difference of `f` with step `eps`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    finite_diff_check_many(|xs| f(&xs[0]), std::slice::from_ref(x), eps)
}

/// Same as [`finite_diff_check`] but perturbs every element of every
/// tensor in `xs`; the error is the max over all of them.
pub fn finite_diff_check_many<T, F>(f: F, xs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let leaves: Vec<Tensor<T>> = xs.iter().map(|x| x.detach().with_grad()).collect();
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<T>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![T::zero(); l.numel()]))
        .collect();

    let _guard = no_grad();
    let mut worst = 0.0f64;
    for (which, x) in xs.iter().enumerate() {
        let base = x.to_f64_vec();
        for i in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                let mut inputs: Vec<Tensor<T>> = xs.iter().map(|t| t.detach()).collect();
                inputs[which] = Tensor::from_f64(x.shape(), &v)?;
                Ok(f(&inputs)?.item()?.as_f64())
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let a = analytic[which][i].as_f64();
            worst = worst.max((a - numeric).abs() / (a.abs() + 1e-8));
        }
    }
    Ok(worst)
}
