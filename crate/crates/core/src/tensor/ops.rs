use super::{BackwardOp, Element, Tensor};
use crate::error::{config, usage, Result};

fn same_shape<T: Element>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(config(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

struct AddOp;
impl<T: Element> BackwardOp<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec()), Some(grad.to_vec())]
    }
}

struct SubOp;
impl<T: Element> BackwardOp<T> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![
            Some(grad.to_vec()),
            Some(grad.iter().map(|&g| -g).collect()),
        ]
    }
}

struct MulOp;
impl<T: Element> BackwardOp<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let ga = inputs[0]
            .requires_grad()
            .then(|| grad.iter().zip(b).map(|(&g, &y)| g * y).collect());
        let gb = inputs[1]
            .requires_grad()
            .then(|| grad.iter().zip(a).map(|(&g, &x)| g * x).collect());
        vec![ga, gb]
    }
}

struct ScaleOp<T>(T);
impl<T: Element> BackwardOp<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.iter().map(|&g| g * self.0).collect())]
    }
}

/// Multiplication by a constant factor array (dropout masks and the like).
struct MaskOp<T>(Vec<T>);
impl<T: Element> BackwardOp<T> for MaskOp<T> {
    fn name(&self) -> &'static str {
        "mask"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            grad.iter().zip(&self.0).map(|(&g, &m)| g * m).collect(),
        )]
    }
}

struct SquareOp;
impl<T: Element> BackwardOp<T> for SquareOp {
    fn name(&self) -> &'static str {
        "square"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let two = T::from_f64(2.0);
        vec![Some(
            grad.iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| g * two * x)
                .collect(),
        )]
    }
}

struct SumOp {
    scale: f64,
}
impl<T: Element> BackwardOp<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = T::from_f64(grad[0].as_f64() * self.scale);
        vec![Some(vec![g; inputs[0].numel()])]
    }
}

/// `Σ_i Σ_j |x_ij|` over several tensors, with subgradient `sign(x)` (0 at 0).
struct AbsSumOp;
impl<T: Element> BackwardOp<T> for AbsSumOp {
    fn name(&self) -> &'static str {
        "abs_sum"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = grad[0];
        inputs
            .iter()
            .map(|t| {
                t.requires_grad().then(|| {
                    t.data()
                        .iter()
                        .map(|&x| {
                            if x > T::zero() {
                                g
                            } else if x < T::zero() {
                                -g
                            } else {
                                T::zero()
                            }
                        })
                        .collect()
                })
            })
            .collect()
    }
}

struct ReshapeOp;
impl<T: Element> BackwardOp<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec())]
    }
}

struct ReluOp;
impl<T: Element> BackwardOp<T> for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            grad.iter()
                .zip(inputs[0].data())
                .map(|(&g, &x)| g * T::from_f64(f64::from(u8::from(x > T::zero()))))
                .collect(),
        )]
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Keeps Φ(x) and φ(x) from the forward pass.
struct GeluOp<T> {
    /// `Φ(x) + x·φ(x)` at each input.
    slope: Vec<T>,
}
impl<T: Element> BackwardOp<T> for GeluOp<T> {
    fn name(&self) -> &'static str {
        "gelu"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            grad.iter().zip(&self.slope).map(|(&g, &s)| g * s).collect(),
        )]
    }
}

struct SigmoidOp;
impl<T: Element> BackwardOp<T> for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, _: &[Tensor<T>], out: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(
            grad.iter()
                .zip(out)
                .map(|(&g, &s)| g * s * (T::one() - s))
                .collect(),
        )]
    }
}

/// `y[n,c,..] = x[n,c,..] * s[n,c]`.
struct ChannelScaleOp {
    plane: usize,
}
impl<T: Element> BackwardOp<T> for ChannelScaleOp {
    fn name(&self) -> &'static str {
        "channel_scale"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, s) = (inputs[0].data(), inputs[1].data());
        let p = self.plane;
        let gx = inputs[0].requires_grad().then(|| {
            grad.iter()
                .enumerate()
                .map(|(i, &g)| g * s[i / p])
                .collect()
        });
        let gs = inputs[1].requires_grad().then(|| {
            s.iter()
                .enumerate()
                .map(|(j, _)| {
                    let acc: f64 = (j * p..(j + 1) * p)
                        .map(|i| grad[i].as_f64() * x[i].as_f64())
                        .sum();
                    T::from_f64(acc)
                })
                .collect()
        });
        vec![gx, gs]
    }
}

struct PickOp {
    index: usize,
}
impl<T: Element> BackwardOp<T> for PickOp {
    fn name(&self) -> &'static str {
        "pick"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::zero(); inputs[0].numel()];
        g[self.index] = grad[0];
        vec![Some(g)]
    }
}

fn unary<T: Element>(
    x: &Tensor<T>,
    op: impl BackwardOp<T> + 'static,
    f: impl Fn(T) -> T,
) -> Result<Tensor<T>> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(x.shape().to_vec(), data, vec![x.clone()], op)
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            AddOp,
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            SubOp,
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            MulOp,
        )
    }

    pub fn scale(&self, s: f64) -> Result<Tensor<T>> {
        let s = T::from_f64(s);
        unary(self, ScaleOp(s), |v| v * s)
    }

    /// Elementwise product with constant factors that receive no gradient.
    pub fn mul_const(&self, factors: Vec<T>) -> Result<Tensor<T>> {
        if factors.len() != self.numel() {
            return Err(usage(format!(
                "mul_const: {} factors for {} elements",
                factors.len(),
                self.numel()
            )));
        }
        let data = self
            .data()
            .iter()
            .zip(&factors)
            .map(|(&a, &m)| a * m)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            MaskOp(factors),
        )
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        unary(self, SquareOp, |v| v * v)
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let s: f64 = self.data().iter().map(|x| x.as_f64()).sum();
        Tensor::from_op(
            Vec::new(),
            vec![T::from_f64(s)],
            vec![self.clone()],
            SumOp { scale: 1.0 },
        )
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        if self.numel() == 0 {
            return Err(usage("mean of an empty tensor"));
        }
        let n = self.numel() as f64;
        let s: f64 = self.data().iter().map(|x| x.as_f64()).sum();
        Tensor::from_op(
            Vec::new(),
            vec![T::from_f64(s / n)],
            vec![self.clone()],
            SumOp { scale: 1.0 / n },
        )
    }

    /// `Σ |x|` over every element of every tensor, as one scalar.
    pub fn abs_sum_all(tensors: &[Tensor<T>]) -> Result<Tensor<T>> {
        let s: f64 = tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|x| x.as_f64().abs())
            .sum();
        Tensor::from_op(Vec::new(), vec![T::from_f64(s)], tensors.to_vec(), AbsSumOp)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if super::numel(shape) != self.numel() {
            return Err(config(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            ReshapeOp,
        )
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        unary(self, ReluOp, |v| v.max(T::zero()))
    }

    /// `x · Φ(x)` with the exact normal CDF.
    pub fn gelu(&self) -> Result<Tensor<T>> {
        let mut data = vec![T::zero(); self.numel()];
        let mut slope = vec![T::zero(); self.numel()];
        for ((y, s), &x) in data.iter_mut().zip(&mut slope).zip(self.data()) {
            let (c, p) = x.normal_cdf_pdf();
            *y = x * c;
            *s = c + x * p;
        }
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            GeluOp { slope },
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        unary(self, SigmoidOp, |v| {
            let x = v.as_f64();
            let s = if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            };
            T::from_f64(s)
        })
    }

    /// Scales each `[n, c]` plane of a rank ≥ 2 tensor by `scales[n, c]`.
    pub fn channel_scale(&self, scales: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() < 2 || scales.shape() != &self.shape()[..2] {
            return Err(config(format!(
                "channel_scale: scales {:?} do not match input {:?}",
                scales.shape(),
                self.shape()
            )));
        }
        let plane: usize = self.shape()[2..].iter().product();
        let s = scales.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * s[i / plane.max(1)])
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), scales.clone()],
            ChannelScaleOp {
                plane: plane.max(1),
            },
        )
    }

    /// The element at flat index `index`, as a scalar.
    pub fn pick(&self, index: usize) -> Result<Tensor<T>> {
        let v = *self
            .data()
            .get(index)
            .ok_or_else(|| usage(format!("pick index {index} out of {}", self.numel())))?;
        Tensor::from_op(Vec::new(), vec![v], vec![self.clone()], PickOp { index })
    }
}
