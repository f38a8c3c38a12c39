//! Dense row-major tensors with tape-free reverse-mode differentiation.
//!
//! Every differentiable op produces a new [`Tensor`] that keeps a handle
//! to its inputs and a boxed backward rule. [`Tensor::backward`] walks
//! that graph in reverse topological order and accumulates gradients
//! into the `requires_grad` leaves it reaches.
//!
//! Tensor data is immutable once created; only the gradient slot of a
//! leaf changes. Optimizers replace parameter tensors rather than
//! writing into them.

mod conv;
mod gradcheck;
mod linalg;
mod loss;
mod ops;
mod pool;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use num_traits_shim::FloatLike;

pub use conv::conv2d;
pub use gradcheck::{finite_diff_check, finite_diff_check_many};
pub use linalg::matmul;
pub use loss::{linear, softmax_cross_entropy};
pub use ops::{normal_cdf, normal_pdf};
pub use pool::{global_avg_pool, pool2d, PoolKind};

use crate::error::{usage, Error, Result};

/// Scalar types a [`Tensor`] can hold.
///
/// Parameters and activations are normally `f32`; `f64` tensors exist so
/// that gradient checks have enough precision to be meaningful.
pub trait Element:
    FloatLike + Copy + Send + Sync + PartialOrd + fmt::Debug + fmt::Display + Default + 'static
{
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    /// The caller guarantees that every strided index stays inside the
    /// buffers behind the pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    #[inline]

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    #[inline]

    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// The handful of float operations the kernels need, without pulling in
/// a numeric-traits dependency.
pub mod num_traits_shim {
    use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

    pub trait FloatLike:
        Add<Output = Self>
        + Sub<Output = Self>
        + Mul<Output = Self>
        + Div<Output = Self>
        + Neg<Output = Self>
        + AddAssign
        + SubAssign
        + MulAssign
        + Sized
    {
        fn zero() -> Self;
        fn one() -> Self;
        fn is_finite(self) -> bool;
        fn abs(self) -> Self;
        fn sqrt(self) -> Self;
        fn exp(self) -> Self;
        /// Standard normal CDF and density at `self`.
        fn normal_cdf_pdf(self) -> (Self, Self);
        fn max(self, other: Self) -> Self;
        fn neg_infinity() -> Self;
    }

    /// Φ(x) and φ(x) from one `exp(−x²/2)`. Φ uses the rational
    /// approximation of Abramowitz & Stegun 7.1.26 for erf, absolute error
    /// below 1.5e-7, i.e. under an f32 ulp near ±1.
    #[inline]
    pub fn normal_cdf_pdf_f32(x: f32) -> (f32, f32) {
        const P: f32 = 0.327_591_1;
        const A: [f32; 5] = [
            0.254_829_6,
            -0.284_496_74,
            1.421_413_8,
            -1.453_152_1,
            1.061_405_4,
        ];
        let e = exp_nonpositive_f32(-0.5 * x * x);
        let z = x.abs() * std::f32::consts::FRAC_1_SQRT_2;
        let t = 1.0 / (1.0 + P * z);
        let poly = t * (A[0] + t * (A[1] + t * (A[2] + t * (A[3] + t * A[4]))));
        let erf = (1.0 - poly * e).copysign(x);
        (0.5 + 0.5 * erf, 0.398_942_3 * e)
    }

    /// `exp(x)` for `x ≤ 0`, within 2 ulp, branch-free so loops over it
    /// vectorize. Results below `exp(−87)` flush toward zero.
    #[inline]
    fn exp_nonpositive_f32(x: f32) -> f32 {
        const LN2_HI: f32 = 0.693_359_4;
        const LN2_LO: f32 = -2.121_944_4e-4;
        // adding and removing 1.5·2^23 rounds to the nearest integer
        const ROUND: f32 = 12_582_912.0;
        let x = x.max(-87.0);
        let shifted = x * std::f32::consts::LOG2_E + ROUND;
        let n = shifted - ROUND;
        let r = x - n * LN2_HI - n * LN2_LO;
        let p = ((((1.987_569_1e-4 * r + 1.398_199_9e-3) * r + 8.333_452e-3) * r + 4.166_579_6e-2)
            * r
            + 0.166_666_65)
            * r
            + 0.5;
        let poly = p * r * r + r + 1.0;
        // the low mantissa bits of `shifted` hold n; rebias them into 2^n
        let bias = 127u32.wrapping_sub(ROUND.to_bits());
        poly * f32::from_bits(shifted.to_bits().wrapping_add(bias) << 23)
    }

    #[inline]
    fn normal_cdf_pdf_f64(x: f64) -> (f64, f64) {
        (
            0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            0.398_942_280_401_432_7 * (-0.5 * x * x).exp(),
        )
    }

    macro_rules! impl_float_like {
        ($t:ty, $cdf_pdf:path) => {
            impl FloatLike for $t {
                #[inline]
                fn zero() -> Self {
                    0.0
                }
                #[inline]
                fn one() -> Self {
                    1.0
                }
                #[inline]
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
                #[inline]
                fn abs(self) -> Self {
                    <$t>::abs(self)
                }
                #[inline]
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                #[inline]
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                #[inline]
                fn normal_cdf_pdf(self) -> (Self, Self) {
                    $cdf_pdf(self)
                }
                #[inline]
                fn max(self, other: Self) -> Self {
                    <$t>::max(self, other)
                }
                #[inline]
                fn neg_infinity() -> Self {
                    <$t>::NEG_INFINITY
                }
            }
        };
    }
    impl_float_like!(f32, normal_cdf_pdf_f32);
    impl_float_like!(f64, normal_cdf_pdf_f64);
}

/// Backward rule of a recorded op.
///
/// Returns one optional gradient per input, in input order. An entry
/// may be `None` when the input does not require a gradient.
pub(crate) trait BackwardOp<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Element> {
    inputs: Vec<Tensor<T>>,
    op: Box<dyn BackwardOp<T>>,
}

struct Inner<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// An n-dimensional array with optional gradient tracking.
///
/// Cloning is cheap: clones share the same storage and gradient slot.
pub struct Tensor<T: Element = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &T::NAME)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("op", &self.inner.node.as_ref().map(|n| n.op.name()))
            .finish()
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on the current thread while alive.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Branch-free scan so the check vectorizes on large buffers.
fn all_finite<T: Element>(data: &[T]) -> bool {
    data.iter().fold(true, |ok, x| ok & x.is_finite())
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn from_parts(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        node: Option<Node<T>>,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    /// A constant (non-tracking) tensor.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(usage(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(Vec::new(), vec![value], false, None)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self::from_parts(shape.to_vec(), data, false, None)
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    /// Returns a leaf with the same values that accumulates gradients.
    pub fn with_grad(self) -> Self {
        let (shape, data) = match Arc::try_unwrap(self.inner) {
            Ok(inner) => (inner.shape, inner.data),
            Err(shared) => (shared.shape.clone(), shared.data.clone()),
        };
        Self::from_parts(shape, data, true, None)
    }

    /// A new leaf holding a copy of the values, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            false,
            None,
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|x| x.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.inner.data.as_slice() {
            [x] => Ok(*x),
            _ => Err(usage(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            ))),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    /// Accumulated gradient, if any backward pass has reached this leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }

    /// Records the result of an op. Fails if any output value is non-finite.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        op: impl BackwardOp<T> + 'static,
    ) -> Result<Self> {
        debug_assert_eq!(data.len(), numel(&shape));
        if !all_finite(&data) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let node = track.then(|| Node {
            inputs,
            op: Box::new(op),
        });
        Ok(Self::from_parts(shape, data, track, node))
    }

    /// Back-propagates from this one-element tensor.
    ///
    /// Gradients accumulate into each reachable `requires_grad` leaf;
    /// calling this twice without [`Tensor::zero_grad`] doubles them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(usage(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(usage(
                "backward() on a tensor that is not part of a gradient graph",
            ));
        }

        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(self.key(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            match &t.inner.node {
                None => {
                    let mut slot = t.inner.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let input_grads = node.op.backward(&node.inputs, t.data(), &g);
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(
                            ig.len(),
                            input.numel(),
                            "grad shape from {}",
                            node.op.name()
                        );
                        match grads.get_mut(&input.key()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(input.key(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the tracked subgraph (inputs before consumers).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for input in node.inputs.iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}
