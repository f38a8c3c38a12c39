use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Gelu,
}

pub fn activation<T: Element>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    match kind {
        Activation::Relu => x.relu(),
        Activation::Gelu => x.gelu(),
    }
}
