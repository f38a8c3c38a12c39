use crate::error::{config, data, usage, Result};
use crate::nn::{
    activation, bottleneck_block, conv_spec, dropout, group_norm, norm_specs, Activation,
    BlockConfig, BottleneckParams, Init, Mode, ParamCursor, ParamSpec, DEFAULT_EPS,
};
use crate::rng::{rng_for, stream};
use crate::tensor::{conv2d, global_avg_pool, linear, pool2d, Element, PoolKind, Tensor};

use super::ModelConfig;

/// One step of a sequential network.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Norm {
        name: String,
        channels: usize,
        groups: usize,
    },
    Act(Activation),
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Bottleneck {
        name: String,
        block: BlockConfig,
    },
    /// Two 3×3 convolutions with a residual connection.
    Basic {
        name: String,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        groups: usize,
    },
    /// `[N, C, H, W] -> [N, C]`
    GlobalPool,
    Dropout(f64),
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
    },
}

impl Layer {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![conv_spec(
                    format!("{name}.weight"),
                    *in_channels,
                    *out_channels,
                    *kernel,
                )];
                if *bias {
                    v.push(ParamSpec::new(
                        format!("{name}.bias"),
                        &[*out_channels],
                        Init::FanIn(in_channels * kernel * kernel),
                    ));
                }
                v
            }
            Layer::Norm { name, channels, .. } => norm_specs(name, *channels).to_vec(),
            Layer::Bottleneck { name, block } => block.param_specs(name),
            Layer::Basic {
                name,
                in_channels,
                out_channels,
                stride,
                ..
            } => {
                let (cin, cout) = (*in_channels, *out_channels);
                let mut v = vec![conv_spec(format!("{name}.conv1.weight"), cin, cout, 3)];
                v.extend(norm_specs(&format!("{name}.norm1"), cout));
                v.push(conv_spec(format!("{name}.conv2.weight"), cout, cout, 3));
                v.extend(norm_specs(&format!("{name}.norm2"), cout));
                if *stride != 1 || cin != cout {
                    v.push(conv_spec(
                        format!("{name}.downsample.conv.weight"),
                        cin,
                        cout,
                        1,
                    ));
                    v.extend(norm_specs(&format!("{name}.downsample.norm"), cout));
                }
                v
            }
            Layer::Linear {
                name,
                in_features,
                out_features,
            } => vec![
                ParamSpec::new(
                    format!("{name}.weight"),
                    &[*out_features, *in_features],
                    Init::FanIn(*in_features),
                ),
                ParamSpec::new(
                    format!("{name}.bias"),
                    &[*out_features],
                    Init::FanIn(*in_features),
                ),
            ],
            Layer::Act(_) | Layer::MaxPool { .. } | Layer::GlobalPool | Layer::Dropout(_) => {
                Vec::new()
            }
        }
    }

    fn forward<T: Element>(
        &self,
        x: &Tensor<T>,
        cursor: &mut ParamCursor<'_, T>,
        mode: Mode<'_>,
    ) -> Result<Tensor<T>> {
        match self {
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
                ..
            } => {
                let w = cursor.next(&[*out_channels, *in_channels, *kernel, *kernel])?;
                let b = if *bias {
                    Some(cursor.next(&[*out_channels])?)
                } else {
                    None
                };
                conv2d(x, &w, b.as_ref(), *stride, *padding)
            }
            Layer::Norm {
                channels, groups, ..
            } => {
                let a = cursor.affine(*channels)?;
                group_norm(x, *groups, &a.gamma, &a.beta, DEFAULT_EPS)
            }
            Layer::Act(kind) => activation(x, *kind),
            Layer::MaxPool {
                kernel,
                stride,
                padding,
            } => pool2d(x, PoolKind::Max, *kernel, *stride, *padding),
            Layer::Bottleneck { block, .. } => {
                let p = BottleneckParams::from_cursor(block, cursor)?;
                bottleneck_block(x, block, &p, mode)
            }
            Layer::Basic {
                in_channels,
                out_channels,
                stride,
                groups,
                ..
            } => {
                let (cin, cout, g) = (*in_channels, *out_channels, *groups);
                let w1 = cursor.next(&[cout, cin, 3, 3])?;
                let n1 = cursor.affine(cout)?;
                let w2 = cursor.next(&[cout, cout, 3, 3])?;
                let n2 = cursor.affine(cout)?;
                let h = conv2d(x, &w1, None, *stride, 1)?;
                let h = group_norm(&h, g, &n1.gamma, &n1.beta, DEFAULT_EPS)?.relu()?;
                let h = conv2d(&h, &w2, None, 1, 1)?;
                let h = group_norm(&h, g, &n2.gamma, &n2.beta, DEFAULT_EPS)?;
                let shortcut = if *stride != 1 || cin != cout {
                    let w = cursor.next(&[cout, cin, 1, 1])?;
                    let n = cursor.affine(cout)?;
                    group_norm(
                        &conv2d(x, &w, None, *stride, 0)?,
                        g,
                        &n.gamma,
                        &n.beta,
                        DEFAULT_EPS,
                    )?
                } else {
                    x.clone()
                };
                h.add(&shortcut)?.relu()
            }
            Layer::GlobalPool => {
                let s = x.shape();
                if s.len() != 4 {
                    return Err(config(format!("global pool expects [N,C,H,W], got {s:?}")));
                }
                global_avg_pool(x)?.reshape(&[s[0], s[1]])
            }
            Layer::Dropout(rate) => dropout(x, *rate, mode),
            Layer::Linear {
                in_features,
                out_features,
                ..
            } => {
                let w = cursor.next(&[*out_features, *in_features])?;
                let b = cursor.next(&[*out_features])?;
                linear(x, &w, &b)
            }
        }
    }
}

/// A sequential network: its layers and one flat list of parameter
/// tensors in the order the layers consume them.
#[derive(Clone, Debug)]
pub struct Model<T: Element = f32> {
    layers: Vec<Layer>,
    specs: Vec<ParamSpec>,
    params: Vec<Tensor<T>>,
    /// Offset into `params` at which each layer's tensors start.
    offsets: Vec<usize>,
    config: Option<ModelConfig>,
    in_channels: usize,
}

/// Layers of a network built from `cfg`.
pub fn phytnet_layers(cfg: &ModelConfig) -> Vec<Layer> {
    let mut layers = vec![
        Layer::Conv {
            name: "stem.conv".into(),
            in_channels: 3,
            out_channels: cfg.stem_channels,
            kernel: 3,
            stride: 2,
            padding: 1,
            bias: false,
        },
        Layer::Norm {
            name: "stem.norm".into(),
            channels: cfg.stem_channels,
            groups: cfg.groups,
        },
        Layer::Act(cfg.activation),
    ];
    let mut index_in_stage = 0;
    let mut last_stage = usize::MAX;
    for (stage, block) in cfg.blocks() {
        if stage != last_stage {
            index_in_stage = 0;
            last_stage = stage;
        }
        layers.push(Layer::Bottleneck {
            name: format!("stages.{stage}.blocks.{index_in_stage}"),
            block,
        });
        index_in_stage += 1;
    }
    let width = *cfg
        .stage_channels
        .last()
        .expect("validated config has a stage");
    layers.push(Layer::GlobalPool);
    if cfg.dropout_rate > 0.0 {
        layers.push(Layer::Dropout(cfg.dropout_rate));
    }
    layers.push(Layer::Linear {
        name: "head.fc".into(),
        in_features: width,
        out_features: cfg.out_nodes,
    });
    layers
}

/// Builds and initializes a network from a validated configuration.
/// Each parameter tensor draws from its own stream of `seed`.
pub fn build_model<T: Element>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut m = Model::from_layers(phytnet_layers(cfg), 3, seed)?;
    m.config = Some(cfg.clone());
    Ok(m)
}

impl<T: Element> Model<T> {
    /// Initializes an arbitrary layer sequence expecting `in_channels`
    /// input channels.
    pub fn from_layers(layers: Vec<Layer>, in_channels: usize, seed: u64) -> Result<Self> {
        let mut specs = Vec::new();
        let mut offsets = Vec::with_capacity(layers.len());
        for layer in &layers {
            if let Layer::Bottleneck { block, .. } = layer {
                block.validate()?;
            }
            offsets.push(specs.len());
            specs.extend(layer.param_specs());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = specs.iter().find(|s| !seen.insert(s.name.as_str())) {
            return Err(config(format!("duplicate parameter name {}", dup.name)));
        }
        let params = specs
            .iter()
            .enumerate()
            .map(|(i, s)| s.init_tensor(&mut rng_for(seed, &[stream::INIT, i as u64])))
            .collect();
        Ok(Self {
            layers,
            specs,
            params,
            offsets,
            config: None,
            in_channels,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn config(&self) -> Option<&ModelConfig> {
        self.config.as_ref()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Replaces every parameter tensor. Shapes must match the layout.
    pub fn set_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(usage(format!(
                "expected {} parameter tensors, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        for (s, p) in self.specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(usage(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    p.shape(),
                    s.shape
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Index of the global pooling layer that separates the feature
    /// extractor from the head.
    fn split_point(&self) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::GlobalPool))
            .ok_or_else(|| usage("model has no global pooling layer"))
    }

    fn run(
        &self,
        range: std::ops::Range<usize>,
        x: &Tensor<T>,
        mut mode: Mode<'_>,
    ) -> Result<Tensor<T>> {
        let start = self
            .offsets
            .get(range.start)
            .copied()
            .unwrap_or(self.params.len());
        let mut cursor = ParamCursor::new(&self.params[start..]);
        let mut h = x.clone();
        for layer in &self.layers[range] {
            h = layer.forward(&h, &mut cursor, mode.reborrow())?;
        }
        Ok(h)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let rank = if matches!(self.layers.first(), Some(Layer::Linear { .. })) {
            2
        } else {
            4
        };
        if s.len() != rank || s[1] != self.in_channels {
            if rank == 2 {
                return Err(data(format!(
                    "expected an [N, {}] batch, got {s:?}",
                    self.in_channels
                )));
            }
            return Err(data(format!(
                "expected an [N, {}, H, W] batch, got {s:?}",
                self.in_channels
            )));
        }
        Ok(())
    }

    /// Logits `[N, out_nodes]` for an image batch `[N, C, S, S]`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode<'_>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.run(0..self.layers.len(), x, mode)
    }

    /// Output of the last layer before global pooling.
    pub fn features(&self, x: &Tensor<T>, mode: Mode<'_>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.run(0..self.split_point()?, x, mode)
    }

    /// Maps a feature map from [`Model::features`] to logits.
    pub fn head(&self, features: &Tensor<T>, mode: Mode<'_>) -> Result<Tensor<T>> {
        self.run(self.split_point()?..self.layers.len(), features, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::no_grad;

    fn small_cfg() -> ModelConfig {
        let mut c = ModelConfig::minimal(4);
        c.stage_channels = vec![16, 32];
        c.blocks_per_stage = vec![1, 2];
        c.out_nodes = 8;
        c
    }

    #[test]
    fn output_has_out_nodes_columns() {
        let m = build_model::<f32>(&small_cfg(), 1).unwrap();
        let y = m
            .forward(&Tensor::zeros(&[2, 3, 32, 32]), Mode::Eval)
            .unwrap();
        assert_eq!(y.shape(), &[2, 8]);
    }

    #[test]
    fn minimal_config_runs_on_smallest_input() {
        let m = build_model::<f32>(&ModelConfig::minimal(4), 0).unwrap();
        let x = Tensor::from_fn(&[1, 3, 200, 200], |i| (i % 7) as f32 / 7.0);
        let _g = no_grad();
        assert_eq!(m.forward(&x, Mode::Eval).unwrap().shape(), &[1, 4]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model::<f32>(&small_cfg(), 7).unwrap();
        let b = build_model::<f32>(&small_cfg(), 7).unwrap();
        let c = build_model::<f32>(&small_cfg(), 8).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.data(), q.data());
        }
        assert!(a
            .params()
            .iter()
            .zip(c.params())
            .any(|(p, q)| p.data() != q.data()));
        assert!(a.param_names().eq(b.param_names()));
    }

    #[test]
    fn parameter_names_unique_and_structured() {
        let m = build_model::<f32>(&small_cfg(), 0).unwrap();
        let names: Vec<&str> = m.param_names().collect();
        assert_eq!(names[0], "stem.conv.weight");
        assert!(names.contains(&"stages.1.blocks.1.conv2.weight"));
        assert!(names.contains(&"stages.1.blocks.0.shortcut.conv.weight"));
        assert_eq!(*names.last().unwrap(), "head.fc.bias");
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
    }

    #[test]
    fn empty_batch() {
        let m = build_model::<f32>(&small_cfg(), 0).unwrap();
        let y = m
            .forward(&Tensor::zeros(&[0, 3, 32, 32]), Mode::Eval)
            .unwrap();
        assert_eq!(y.shape(), &[0, 8]);
    }

    #[test]
    fn wrong_channel_count_is_data_error() {
        let m = build_model::<f32>(&small_cfg(), 0).unwrap();
        assert!(matches!(
            m.forward(&Tensor::zeros(&[1, 1, 32, 32]), Mode::Eval),
            Err(crate::Error::Data(_))
        ));
    }

    #[test]
    fn eval_is_deterministic_and_features_compose_with_head() {
        let mut c = small_cfg();
        c.dropout_rate = 0.3;
        c.survive_prob = 0.7;
        let m = build_model::<f32>(&c, 3).unwrap();
        let x = Tensor::from_fn(&[2, 3, 24, 24], |i| ((i * 13) % 17) as f32 / 17.0);
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
        let f = m.features(&x, Mode::Eval).unwrap();
        assert_eq!(f.shape(), &[2, 32, 6, 6]);
        assert_eq!(m.head(&f, Mode::Eval).unwrap().data(), a.data());
    }

    #[test]
    fn every_parameter_influences_logits() {
        let mut c = small_cfg();
        c.use_se = true;
        let m = build_model::<f64>(&c, 5).unwrap();
        let x = Tensor::from_fn(&[2, 3, 20, 20], |i| ((i * 31) % 29) as f64 / 29.0 - 0.5);
        let base = m.forward(&x, Mode::Eval).unwrap();
        for i in 0..m.params().len() {
            let mut params = m.params().to_vec();
            let mut v = params[i].data().to_vec();
            v[0] += 0.1;
            params[i] = Tensor::new(params[i].shape(), v).unwrap();
            let mut probe = m.clone();
            probe.set_params(params).unwrap();
            let y = probe.forward(&x, Mode::Eval).unwrap();
            assert_ne!(y.data(), base.data(), "{}", m.param_specs()[i].name);
        }
    }

    #[test]
    fn set_params_checks_shapes() {
        let mut m = build_model::<f32>(&small_cfg(), 0).unwrap();
        let mut p = m.params().to_vec();
        p[0] = Tensor::zeros(&[1]);
        assert!(m.set_params(p).is_err());
        assert!(m.set_params(Vec::new()).is_err());
    }
}
