use crate::error::{config, Result};
use crate::nn::Activation;
use crate::tensor::Element;

use super::{Layer, Model};

const NORM_GROUPS: usize = 32;

/// The 18-layer residual network: 7×7/2 stem, 3×3/2 max pool, four
/// stages of two basic blocks at 64/128/256/512 channels, global
/// pooling and a linear classifier. Normalization layers carry a
/// per-channel scale and shift.
pub fn build_resnet18_reference<T: Element>(num_classes: usize, seed: u64) -> Result<Model<T>> {
    if num_classes == 0 {
        return Err(config("num_classes must be at least 1"));
    }
    let mut layers = vec![
        Layer::Conv {
            name: "stem.conv".into(),
            in_channels: 3,
            out_channels: 64,
            kernel: 7,
            stride: 2,
            padding: 3,
            bias: false,
        },
        Layer::Norm {
            name: "stem.norm".into(),
            channels: 64,
            groups: NORM_GROUPS,
        },
        Layer::Act(Activation::Relu),
        Layer::MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
        },
    ];
    let mut cin = 64;
    for (stage, cout) in [64, 128, 256, 512].into_iter().enumerate() {
        for b in 0..2 {
            layers.push(Layer::Basic {
                name: format!("layer{}.{b}", stage + 1),
                in_channels: cin,
                out_channels: cout,
                stride: if b == 0 && stage > 0 { 2 } else { 1 },
                groups: NORM_GROUPS,
            });
            cin = cout;
        }
    }
    layers.push(Layer::GlobalPool);
    layers.push(Layer::Linear {
        name: "fc".into(),
        in_features: 512,
        out_features: num_classes,
    });
    Model::from_layers(layers, 3, seed)
}
