//! Network construction from a [`ModelConfig`], exact parameter and
//! multiply-accumulate counting, the ResNet18 reference and checkpoints.

mod checkpoint;
mod config;
mod cost;
mod model;
mod resnet;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, model_from_checkpoint, save_checkpoint, MAGIC, VERSION,
};
pub use config::{
    ModelConfig, BLOCKS_RANGE, CHANNEL_RANGE, INPUT_SIZE_RANGE, KERNEL_RANGE, OUT_NODES_RANGE,
};
pub use cost::{cost_report, count_flops, count_params, CostReport};
pub use model::{build_model, phytnet_layers, Layer, Model};
pub use resnet::build_resnet18_reference;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn single_conv(k: usize, cin: usize, cout: usize, stride: usize, padding: usize) -> Model<f32> {
        Model::from_layers(
            vec![Layer::Conv {
                name: "conv".into(),
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride,
                padding,
                bias: false,
            }],
            cin,
            0,
        )
        .unwrap()
    }

    #[test]
    fn single_linear_has_nine_parameters() {
        let m = Model::<f32>::from_layers(
            vec![Layer::Linear {
                name: "fc".into(),
                in_features: 2,
                out_features: 3,
            }],
            2,
            0,
        )
        .unwrap();
        assert_eq!(count_params(&m), 9);
        let y = m
            .forward(&crate::Tensor::zeros(&[5, 2]), crate::nn::Mode::Eval)
            .unwrap();
        assert_eq!(y.shape(), &[5, 3]);
    }

    #[test]
    fn single_conv_macs() {
        // 3×3 'same' convolution keeps 100×100
        let m = single_conv(3, 16, 32, 1, 1);
        assert_eq!(
            count_flops(&m, 100).unwrap(),
            (3 * 3 * 16 * 32 * 100 * 100) as f64
        );
        assert_eq!(count_flops(&m, 100).unwrap(), 46_080_000.0);
    }

    #[test]
    fn doubling_input_quadruples_conv_macs() {
        let m = single_conv(3, 4, 8, 1, 1);
        for s in [10, 37, 64] {
            assert_eq!(
                count_flops(&m, 2 * s).unwrap(),
                4.0 * count_flops(&m, s).unwrap()
            );
        }
    }

    #[test]
    fn spatial_collapse_is_config_error() {
        let m = single_conv(5, 1, 1, 1, 0);
        assert!(matches!(count_flops(&m, 3), Err(crate::Error::Config(_))));
        assert!(matches!(count_flops(&m, 0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn resnet18_parameter_count() {
        let m = build_resnet18_reference::<f32>(4, 0).unwrap();
        assert_eq!(count_params(&m), 11_178_564);
        let big = build_resnet18_reference::<f32>(1000, 0).unwrap();
        let head: usize = big
            .param_specs()
            .iter()
            .filter(|s| s.name.starts_with("fc."))
            .map(|s| s.numel())
            .sum();
        assert_eq!(head, 513_000);
    }

    #[test]
    fn resnet18_macs_at_408() {
        let m = build_resnet18_reference::<f32>(4, 0).unwrap();
        let g = count_flops(&m, 408).unwrap() / 1e9;
        assert!((g - 6.16).abs() <= 0.05 * 6.16, "{g}");
        // 224² is the familiar 1.82 G figure
        let g224 = count_flops(&m, 224).unwrap() / 1e9;
        assert!((g224 - 1.82).abs() < 0.01, "{g224}");
    }

    /// Hand-summed parameter ledger for a configuration.
    fn ledger(cfg: &ModelConfig) -> usize {
        let mut total = 3 * 9 * cfg.stem_channels + 2 * cfg.stem_channels;
        let mut cin = cfg.stem_channels;
        for (stage, (&cout, &n)) in cfg
            .stage_channels
            .iter()
            .zip(&cfg.blocks_per_stage)
            .enumerate()
        {
            for b in 0..n {
                let mid = (cout / 4).max(1);
                let k = cfg.mid_kernel;
                total += cin * mid + 2 * mid;
                total += mid * mid * k * k + 2 * mid;
                total += mid * cout + 2 * cout;
                if cfg.use_se {
                    let hidden = (cout / cfg.se_reduction).max(1);
                    total += 2 * cout * hidden + hidden + cout;
                }
                let stride = if b == 0 && stage > 0 { 2 } else { 1 };
                if stride != 1 || cin != cout {
                    total += cin * cout + 2 * cout;
                }
                cin = cout;
            }
        }
        total + cin * cfg.out_nodes + cfg.out_nodes
    }

    #[test]
    fn sample_config_matches_ledger() {
        let cfg = ModelConfig {
            stem_channels: 32,
            stage_channels: vec![32, 64, 128],
            blocks_per_stage: vec![2, 1, 3],
            mid_kernel: 7,
            out_nodes: 8,
            num_classes: 4,
            input_size: 285,
            groups: 8,
            use_se: true,
            se_reduction: 4,
            activation: Activation::Relu,
            survive_prob: 0.9,
            dropout_rate: 0.1,
        };
        let m = build_model::<f32>(&cfg, 0).unwrap();
        assert_eq!(count_params(&m), ledger(&cfg));
        // written out by hand for this configuration
        assert_eq!(ledger(&cfg), 236_840);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut cfg = ModelConfig::minimal(4);
        cfg.use_se = true;
        let m = build_model::<f32>(&cfg, 11).unwrap();
        let bytes = checkpoint_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"PHYT");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let back = model_from_checkpoint(&bytes).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().iter().zip(back.params()) {
            let bits =
                |t: &crate::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let m = build_model::<f32>(&ModelConfig::minimal(4), 1).unwrap();
        let bytes = checkpoint_bytes(&m).unwrap();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(model_from_checkpoint(&wrong_magic).is_err());
        assert!(model_from_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(model_from_checkpoint(&extra).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(
            model_from_checkpoint(&version),
            Err(crate::Error::Checkpoint(_))
        ));
    }

    #[test]
    fn reference_model_cannot_be_checkpointed() {
        let m = build_resnet18_reference::<f32>(4, 0).unwrap();
        assert!(checkpoint_bytes(&m).is_err());
    }
}
