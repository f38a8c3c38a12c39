//! Layer vocabulary for the residual networks: group normalization,
//! activations, squeeze-excitation, stochastic depth, dropout and the
//! bottleneck block built from them.

mod activation;
mod bottleneck;
mod norm;
mod se;
mod stochastic;

pub use activation::{activation, Activation};
pub use bottleneck::{bottleneck_block, BlockConfig, BottleneckParams};
pub use norm::{group_norm, Affine, DEFAULT_EPS};
pub use se::{hidden_width as se_hidden_width, squeeze_excitation, SeParams};
pub use stochastic::{dropout, stochastic_depth};

use rand::Rng;

use crate::error::{usage, Result};
use crate::rng::Prng;
use crate::tensor::{Element, Tensor};

/// Whether stochastic layers are active. Training mode carries the
/// random stream they draw from.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Prng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub fn reborrow(&mut self) -> Mode<'_> {
        match self {
            Mode::Eval => Mode::Eval,
            Mode::Train(rng) => Mode::Train(rng),
        }
    }
}

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/√fan_in`.
    FanIn(usize),
    Ones,
    Zeros,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// A fresh gradient-tracking leaf drawn from `rng`.
    pub fn init_tensor<T: Element>(&self, rng: &mut Prng) -> Tensor<T> {
        let t = match self.init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(&self.shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
            }
            Init::Ones => Tensor::full(&self.shape, T::one()),
            Init::Zeros => Tensor::zeros(&self.shape),
        };
        t.with_grad()
    }
}

/// Hands out parameter tensors in declaration order.
pub struct ParamCursor<'a, T: Element> {
    params: &'a [Tensor<T>],
    pos: usize,
}

impl<'a, T: Element> ParamCursor<'a, T> {
    pub fn new(params: &'a [Tensor<T>]) -> Self {
        Self { params, pos: 0 }
    }

    pub fn next(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let t = self
            .params
            .get(self.pos)
            .ok_or_else(|| usage(format!("parameter list exhausted at position {}", self.pos)))?;
        if t.shape() != shape {
            return Err(usage(format!(
                "parameter {} has shape {:?}, expected {:?}",
                self.pos,
                t.shape(),
                shape
            )));
        }
        self.pos += 1;
        Ok(t.clone())
    }

    pub fn affine(&mut self, channels: usize) -> Result<Affine<T>> {
        Ok(Affine {
            gamma: self.next(&[channels])?,
            beta: self.next(&[channels])?,
        })
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos == self.params.len()
    }
}

pub(crate) fn norm_specs(prefix: &str, channels: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::new(format!("{prefix}.weight"), &[channels], Init::Ones),
        ParamSpec::new(format!("{prefix}.bias"), &[channels], Init::Zeros),
    ]
}

pub(crate) fn conv_spec(name: String, cin: usize, cout: usize, k: usize) -> ParamSpec {
    ParamSpec::new(name, &[cout, cin, k, k], Init::FanIn(cin * k * k))
}
