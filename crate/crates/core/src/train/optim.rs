use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::tensor::{Element, Tensor};

use super::TrainConfig;

/// `weight · Σ|θ|` over every parameter tensor.
pub fn l1_penalty<T: Element>(params: &[Tensor<T>], weight: f64) -> Result<Tensor<T>> {
    if weight < 0.0 {
        return Err(usage(format!("l1 weight {weight} is negative")));
    }
    Tensor::abs_sum_all(params)?.scale(weight)
}

/// AdamW moments, kept in `f64` whatever the parameter precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub shapes: Vec<Vec<usize>>,
    pub t: u64,
}

impl OptimState {
    pub fn new<T: Element>(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            t: 0,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
/// Returns fresh gradient-tracking leaves; ranges in `cfg` are not
/// checked here so that degenerate settings such as `lr = 0` can be used.
pub fn adamw_step<T: Element>(
    params: &[Tensor<T>],
    grads: &[Vec<T>],
    state: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<Vec<Tensor<T>>> {
    if params.len() != grads.len() || params.len() != state.shapes.len() {
        return Err(usage(format!(
            "adamw_step: {} params, {} grads, {} optimizer slots",
            params.len(),
            grads.len(),
            state.shapes.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != state.shapes[i] || g.len() != p.numel() {
            return Err(usage(format!(
                "adamw_step: parameter {i} has shape {:?}, gradient length {}, optimizer shape {:?}",
                p.shape(),
                g.len(),
                state.shapes[i]
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    let mut out = Vec::with_capacity(params.len());
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let data = p
            .data()
            .iter()
            .zip(g)
            .enumerate()
            .map(|(j, (&theta, &gj))| {
                let gj = gj.as_f64();
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let step = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
                T::from_f64(theta.as_f64() * decay - cfg.lr * step)
            })
            .collect();
        out.push(Tensor::new(p.shape(), data)?.with_grad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;

    fn scalar_cfg(lr: f64, wd: f64, eps: f64) -> TrainConfig {
        TrainConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: wd,
            eps,
            ..TrainConfig::default()
        }
    }

    fn step1(theta: f64, g: f64, cfg: &TrainConfig) -> f64 {
        let p = [Tensor::<f64>::scalar(theta).with_grad()];
        let mut st = OptimState::new(&p);
        adamw_step(&p, &[vec![g]], &mut st, cfg).unwrap()[0]
            .item()
            .unwrap()
    }

    #[test]
    fn hand_traced_scalar_step() {
        // m̂ = 0.5, v̂ = 0.25, step = 1; θ = 1·(1 − 1e-7) − 1e-3.
        let got = step1(1.0, 0.5, &scalar_cfg(1e-3, 1e-4, 0.0));
        assert!((got - 0.9989999).abs() < 1e-12, "{got}");
    }

    #[test]
    fn zero_gradient_cases() {
        assert_eq!(step1(0.7, 0.0, &scalar_cfg(1e-3, 0.0, 1e-6)), 0.7);
        let got = step1(0.7, 0.0, &scalar_cfg(1e-3, 1e-2, 1e-6));
        assert!((got - 0.7 * (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let p = [Tensor::<f32>::from_fn(&[3, 4], |i| i as f32 * 0.3 - 1.0).with_grad()];
        let mut st = OptimState::new(&p);
        let g = vec![(0..12).map(|i| (i as f32).sin()).collect::<Vec<_>>()];
        let out = adamw_step(&p, &g, &mut st, &scalar_cfg(0.0, 1e-4, 1e-6)).unwrap();
        assert_eq!(out[0].data(), p[0].data());
        assert_eq!(st.t, 1);
        assert!(st.v[0].iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let p = [Tensor::<f32>::zeros(&[2]).with_grad()];
        let mut st = OptimState::new(&p);
        assert!(matches!(
            adamw_step(&p, &[vec![0.0; 3]], &mut st, &TrainConfig::default()),
            Err(crate::Error::Usage(_))
        ));
        assert!(adamw_step(&p, &[], &mut st, &TrainConfig::default()).is_err());
    }

    #[test]
    fn l1_values() {
        let z = [Tensor::<f64>::zeros(&[4]).with_grad()];
        assert_eq!(l1_penalty(&z, 1e-5).unwrap().item().unwrap(), 0.0);
        let p = [Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 3.0])
            .unwrap()
            .with_grad()];
        assert!((l1_penalty(&p, 1e-5).unwrap().item().unwrap() - 6e-5).abs() < 1e-18);
        assert!(l1_penalty(&p, -1.0).is_err());
    }

    #[test]
    fn l1_gradient_is_weighted_sign() {
        let x = Tensor::<f64>::from_f64(&[5], &[0.3, -0.7, 1.2, -0.05, 0.9])
            .unwrap()
            .with_grad();
        l1_penalty(std::slice::from_ref(&x), 0.25)
            .unwrap()
            .backward()
            .unwrap();
        let expect: Vec<f64> = x.data().iter().map(|v| 0.25 * v.signum()).collect();
        assert_eq!(x.grad().unwrap(), expect);
        let err =
            finite_diff_check(|t| l1_penalty(std::slice::from_ref(t), 0.25), &x, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
