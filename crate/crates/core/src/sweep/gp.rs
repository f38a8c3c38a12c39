use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::rng::{rng_for, stream, Prng};

use super::space::SearchSpace;

/// Diagonal jitter tried, in order, when the kernel matrix will not factor.
pub const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

// ln 0.01, ln 10
const LOG_LENGTH_BOUNDS: (f64, f64) = (-2.0 * std::f64::consts::LN_10, std::f64::consts::LN_10);
const LOG_SIGNAL_BOUNDS: (f64, f64) = (
    -2.0 * std::f64::consts::LN_10,
    2.0 * std::f64::consts::LN_10,
);
const RESTARTS: usize = 5;
const ASCENT_STEPS: usize = 200;

/// Squared-exponential kernel hyperparameters in standardized output units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_var * (-0.5 * r2).exp()
    }
}

/// Lower Cholesky factor of the row-major `n × n` matrix `a`, or `None`
/// if a pivot is not strictly positive.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * x[k]).sum();
        x[i] = (x[i] - s) / l[i * n + i];
    }
    x
}

fn solve_upper_t(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (x[i] - s) / l[i * n + i];
    }
    x
}

/// Factors `k` as given, then with escalating diagonal jitter. Returns
/// the factor and the jitter that was needed.
fn factor(k: &[f64], n: usize) -> Result<(Vec<f64>, f64)> {
    if let Some(l) = cholesky(k, n) {
        return Ok((l, 0.0));
    }
    for j in JITTER_LADDER {
        let mut kj = k.to_vec();
        (0..n).for_each(|i| kj[i * n + i] += j);
        if let Some(l) = cholesky(&kj, n) {
            return Ok((l, j));
        }
    }
    Err(Error::Numerical(format!(
        "{n}×{n} kernel matrix is not positive definite even with jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

fn kernel_matrix(xs: &[Vec<f64>], h: &GpHyper) -> Vec<f64> {
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = h.kernel(&xs[i], &xs[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += h.noise_var;
    }
    k
}

/// Log marginal likelihood and its gradient with respect to
/// `[ln l_1 .. ln l_d, ln σ_f²]`.
fn lml_with_grad(xs: &[Vec<f64>], y: &[f64], h: &GpHyper) -> Option<(f64, Vec<f64>)> {
    let n = xs.len();
    let d = h.length_scales.len();
    let k = kernel_matrix(xs, h);
    let (l, _) = factor(&k, n).ok()?;
    let alpha = solve_upper_t(&l, n, &solve_lower(&l, n, y));
    let lml = -0.5 * y.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>()
        - (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut kinv = vec![0.0; n * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = solve_upper_t(&l, n, &solve_lower(&l, n, &e));
        (0..n).for_each(|r| kinv[r * n + c] = col[r]);
    }
    let mut grad = vec![0.0; d + 1];
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[i * n + j];
            let kf = h.kernel(&xs[i], &xs[j]);
            grad[d] += 0.5 * w * kf;
            for (q, g) in grad.iter_mut().take(d).enumerate() {
                let diff = (xs[i][q] - xs[j][q]) / h.length_scales[q];
                *g += 0.5 * w * kf * diff * diff;
            }
        }
    }
    lml.is_finite().then_some((lml, grad))
}

fn clamp_params(theta: &mut [f64]) {
    let d = theta.len() - 1;
    for t in &mut theta[..d] {
        *t = t.clamp(LOG_LENGTH_BOUNDS.0, LOG_LENGTH_BOUNDS.1);
    }
    theta[d] = theta[d].clamp(LOG_SIGNAL_BOUNDS.0, LOG_SIGNAL_BOUNDS.1);
}

fn hyper_of(theta: &[f64], noise: f64) -> GpHyper {
    let d = theta.len() - 1;
    GpHyper {
        length_scales: theta[..d].iter().map(|t| t.exp()).collect(),
        signal_var: theta[d].exp(),
        noise_var: noise,
    }
}

/// Adaptive-step ascent on the log marginal likelihood inside the
/// parameter box.
fn ascend(xs: &[Vec<f64>], y: &[f64], mut theta: Vec<f64>, noise: f64) -> Option<(f64, Vec<f64>)> {
    clamp_params(&mut theta);
    let (mut best, mut grad) = lml_with_grad(xs, y, &hyper_of(&theta, noise))?;
    let mut step = 0.5;
    for _ in 0..ASCENT_STEPS {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-9 || step < 1e-5 {
            break;
        }
        let mut cand: Vec<f64> = theta
            .iter()
            .zip(&grad)
            .map(|(t, g)| t + step * g / norm.max(1.0))
            .collect();
        clamp_params(&mut cand);
        match lml_with_grad(xs, y, &hyper_of(&cand, noise)) {
            Some((v, g)) if v > best => {
                best = v;
                grad = g;
                theta = cand;
                step *= 1.2;
            }
            _ => step *= 0.5,
        }
    }
    Some((best, theta))
}

/// Gaussian-process regression on unit-cube inputs with standardized
/// outputs and a cached Cholesky factorization.
#[derive(Clone, Debug, PartialEq)]
pub struct GpSurrogate {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

fn check_observations(xs: &[Vec<f64>], ys: &[f64], noise: f64) -> Result<()> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(usage(format!(
            "GP needs ≥ 1 observation, got {} inputs and {} outputs",
            xs.len(),
            ys.len()
        )));
    }
    let d = xs[0].len();
    if d == 0
        || xs
            .iter()
            .any(|x| x.len() != d || x.iter().any(|v| !v.is_finite()))
    {
        return Err(usage(
            "GP inputs must share one nonzero dimension and be finite",
        ));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(usage("GP outputs must be finite"));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(usage(format!("GP noise variance {noise} must be ≥ 0")));
    }
    Ok(())
}

fn standardize(ys: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 1e-12 { sd } else { 1.0 };
    (mean, scale, ys.iter().map(|y| (y - mean) / scale).collect())
}

impl GpSurrogate {
    /// Conditions on the observations with fixed hyperparameters.
    pub fn with_hyper(xs: &[Vec<f64>], ys: &[f64], hyper: GpHyper) -> Result<Self> {
        check_observations(xs, ys, hyper.noise_var)?;
        if hyper.length_scales.len() != xs[0].len()
            || hyper.length_scales.iter().any(|l| !(*l > 0.0))
            || !(hyper.signal_var > 0.0)
        {
            return Err(usage(
                "GP hyperparameters must be positive, one length-scale per input dimension",
            ));
        }
        let (y_mean, y_scale, y) = standardize(ys);
        let n = xs.len();
        let (chol, jitter) = factor(&kernel_matrix(xs, &hyper), n)?;
        let alpha = solve_upper_t(&chol, n, &solve_lower(&chol, n, &y));
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            y_mean,
            y_scale,
            hyper,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.ys
    }

    /// `(mean, sd)` used to standardize outputs.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    /// Diagonal jitter added to make the kernel matrix factor.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn best_observed(&self) -> f64 {
        self.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn prior_sd(&self) -> f64 {
        self.y_scale * self.hyper.signal_var.sqrt()
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let n = self.xs.len();
        let ks: Vec<f64> = self.xs.iter().map(|xi| self.hyper.kernel(xi, x)).collect();
        let mu = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = solve_lower(&self.chol, n, &ks);
        let var = (self.hyper.signal_var - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_scale * mu, self.y_scale * var.sqrt())
    }
}

/// Fits kernel length-scales and signal variance by multi-restart
/// ascent of the log marginal likelihood, with `noise` fixed as the
/// noise variance in standardized output units.
pub fn gp_fit(xs: &[Vec<f64>], ys: &[f64], noise: f64) -> Result<GpSurrogate> {
    check_observations(xs, ys, noise)?;
    let d = xs[0].len();
    let (_, _, y) = standardize(ys);
    let mut rng = rng_for(xs.len() as u64, &[stream::SWEEP, d as u64]);
    let mut starts = vec![[vec![(0.3f64).ln(); d], vec![0.0]].concat()];
    for _ in 1..RESTARTS {
        let mut t: Vec<f64> = (0..d)
            .map(|_| rng.gen_range(LOG_LENGTH_BOUNDS.0..LOG_LENGTH_BOUNDS.1))
            .collect();
        t.push(rng.gen_range(-1.0..1.0));
        starts.push(t);
    }
    let best = starts
        .into_iter()
        .filter_map(|t| ascend(xs, &y, t, noise))
        .fold(None::<(f64, Vec<f64>)>, |acc, cur| match acc {
            Some(a) if a.0 >= cur.0 => Some(a),
            _ => Some(cur),
        });
    let theta = match best {
        Some((_, t)) => t,
        None => {
            return Err(Error::Numerical(
                "no hyperparameter start gave a factorable kernel matrix".into(),
            ))
        }
    };
    GpSurrogate::with_hyper(xs, ys, hyper_of(&theta, noise))
}

pub fn gp_posterior(gp: &GpSurrogate, x: &[f64]) -> (f64, f64) {
    gp.posterior(x)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected amount by which `Y ~ N(mu, sigma²)` exceeds `best`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let d = mu - best;
    if !(sigma > 0.0) {
        return d.max(0.0);
    }
    let z = d / sigma;
    (d * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// Draws `n_candidates` points and returns the one with the largest
/// expected improvement over the best observation; ties keep the
/// earliest draw.
pub fn propose_next<S: SearchSpace>(
    gp: &GpSurrogate,
    space: &S,
    rng: &mut Prng,
    n_candidates: usize,
) -> S::Point {
    let best = gp.best_observed();
    let mut chosen: Option<(f64, S::Point)> = None;
    for _ in 0..n_candidates.max(1) {
        let p = space.sample(rng);
        let (mu, sigma) = gp.posterior(&space.encode(&p));
        let ei = expected_improvement(mu, sigma, best);
        if chosen.as_ref().is_none_or(|(e, _)| ei > *e) {
            chosen = Some((ei, p));
        }
    }
    chosen.expect("at least one candidate").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::UnitBox;

    fn hyper(d: usize, l: f64, noise: f64) -> GpHyper {
        GpHyper {
            length_scales: vec![l; d],
            signal_var: 1.0,
            noise_var: noise,
        }
    }

    #[test]
    fn single_point_interpolates() {
        let gp = GpSurrogate::with_hyper(&[vec![0.3, 0.7]], &[0.62], hyper(2, 0.4, 0.0)).unwrap();
        let (mu, sd) = gp.posterior(&[0.3, 0.7]);
        assert!((mu - 0.62).abs() < 1e-12 && sd < 1e-6);
        let fit = gp_fit(&[vec![0.3, 0.7]], &[0.62], 0.0).unwrap();
        assert!((fit.posterior(&[0.3, 0.7]).0 - 0.62).abs() < 1e-9);
    }

    #[test]
    fn conflicting_duplicates_shrink() {
        let xs = vec![vec![0.5], vec![0.5]];
        let gp = GpSurrogate::with_hyper(&xs, &[0.2, 0.8], hyper(1, 0.3, 0.1)).unwrap();
        let mu = gp.posterior(&[0.5]).0;
        assert!(mu > 0.2 && mu < 0.8, "{mu}");
        // zero noise forces jitter
        let gp0 = GpSurrogate::with_hyper(&xs, &[0.2, 0.2], hyper(1, 0.3, 0.0)).unwrap();
        assert!(gp0.jitter() > 0.0);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let xs = vec![vec![0.1, 0.1], vec![0.2, 0.15], vec![0.05, 0.3]];
        let gp = GpSurrogate::with_hyper(&xs, &[0.3, 0.9, 0.5], hyper(2, 0.05, 1e-6)).unwrap();
        let (mu, sd) = gp.posterior(&[50.0, 50.0]);
        assert!((mu - gp.prior_mean()).abs() <= 0.01 * gp.prior_sd());
        assert!((sd / gp.prior_sd() - 1.0).abs() < 0.01);
    }

    #[test]
    fn non_positive_matrix_is_numerical_error() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
        assert!(matches!(
            factor(&[1.0, 2.0, 2.0, 1.0], 2),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn lml_gradient_matches_differences() {
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![i as f64 / 6.0, ((i * 7) % 6) as f64 / 6.0])
            .collect();
        let y: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin() + x[1]).collect();
        let (_, _, y) = standardize(&y);
        let theta = vec![(0.4f64).ln(), (0.7f64).ln(), (1.3f64).ln()];
        let (_, g) = lml_with_grad(&xs, &y, &hyper_of(&theta, 1e-3)).unwrap();
        for i in 0..3 {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += 1e-5;
            m[i] -= 1e-5;
            let fd = (lml_with_grad(&xs, &y, &hyper_of(&p, 1e-3)).unwrap().0
                - lml_with_grad(&xs, &y, &hyper_of(&m, 1e-3)).unwrap().0)
                / 2e-5;
            assert!(
                (fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn fit_improves_on_the_default_start() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (8.0 * x[0]).sin()).collect();
        let gp = gp_fit(&xs, &ys, 1e-6).unwrap();
        let (_, _, y) = standardize(&ys);
        let start = lml_with_grad(&xs, &y, &hyper_of(&[(0.3f64).ln(), 0.0], 1e-6))
            .unwrap()
            .0;
        let fitted = lml_with_grad(&xs, &y, gp.hyper()).unwrap().0;
        assert!(fitted >= start);
        let (mu, _) = gp.posterior(&[0.5 / 11.0]);
        assert!((mu - (8.0 * 0.5 / 11.0f64).sin()).abs() < 0.05);
    }

    #[test]
    fn ei_reference_values() {
        assert_eq!(expected_improvement(0.3, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.7, 0.0, 0.5), 0.7 - 0.5);
        assert!((expected_improvement(0.0, 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((expected_improvement(1.0, 1.0, 0.0) - 1.083_315_470_049_99).abs() < 1e-9);
    }

    #[test]
    fn single_candidate_is_returned() {
        let gp = GpSurrogate::with_hyper(&[vec![0.5]], &[1.0], hyper(1, 0.2, 1e-6)).unwrap();
        let mut a = rng_for(4, &[]);
        let mut b = rng_for(4, &[]);
        let p = propose_next(&gp, &UnitBox { dims: 1 }, &mut a, 1);
        assert_eq!(p, UnitBox { dims: 1 }.sample(&mut b));
    }
}
