//! Model presets: small architectures with seeded initialization and
//! per-preset training defaults.

use crate::engine::{ActivationKind, ActivationMode, Layer, Model, Optimizer, TrainConfig};
use crate::error::NnError;
use crate::rng::{chacha, normal_vec};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

type Result<T> = std::result::Result<T, NnError>;

/// Named architectures selectable from specs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Flatten → 784→32 dense → relu → 32→10 dense, for 1×28×28 inputs.
    MlpSmall,
    /// Two strided conv blocks then a dense head, for 1×28×28 inputs.
    CnnMnist,
    /// Deeper strided conv stack for 3×32×32 inputs.
    CnnCifarDeep,
}

impl Preset {
    pub fn parse(token: &str) -> Result<Preset> {
        match token {
            "mlp_small" => Ok(Preset::MlpSmall),
            "cnn_mnist" => Ok(Preset::CnnMnist),
            "cnn_cifar_deep" => Ok(Preset::CnnCifarDeep),
            other => Err(NnError::config(format!("unknown model preset '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::MlpSmall => "mlp_small",
            Preset::CnnMnist => "cnn_mnist",
            Preset::CnnCifarDeep => "cnn_cifar_deep",
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            Preset::MlpSmall | Preset::CnnMnist => vec![1, 28, 28],
            Preset::CnnCifarDeep => vec![3, 32, 32],
        }
    }

    /// Training defaults tuned for single-core desk runs.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let adam = Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        match self {
            Preset::MlpSmall => TrainConfig {
                optimizer: adam,
                learning_rate: 0.004,
                epochs: 12,
                batch_size: 64,
                weight_decay: 1e-4,
                seed,
            },
            Preset::CnnMnist => TrainConfig {
                optimizer: adam,
                learning_rate: 0.003,
                epochs: 6,
                batch_size: 64,
                weight_decay: 1e-4,
                seed,
            },
            Preset::CnnCifarDeep => TrainConfig {
                optimizer: adam,
                learning_rate: 0.002,
                epochs: 30,
                batch_size: 64,
                weight_decay: 1e-4,
                seed,
            },
        }
    }
}

fn he_dense(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Layer {
    let std = (2.0 / in_dim as f64).sqrt();
    Layer::Dense {
        weight: Tensor {
            shape: vec![out_dim, in_dim],
            data: normal_vec(rng, out_dim * in_dim, std),
        },
        bias: Tensor::zeros(&[out_dim]),
    }
}

fn he_conv(
    rng: &mut ChaCha8Rng,
    oc: usize,
    ic: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Layer {
    let std = (2.0 / (ic * k * k) as f64).sqrt();
    Layer::Conv2D {
        weight: Tensor {
            shape: vec![oc, ic, k, k],
            data: normal_vec(rng, oc * ic * k * k, std),
        },
        bias: Tensor::zeros(&[oc]),
        stride,
        padding,
    }
}

/// Builds a preset with seeded He-initialized weights, in exact-relu mode.
pub fn build(preset: Preset, seed: u64) -> Result<Model> {
    let mut rng = chacha(seed);
    let act = Layer::Activation(ActivationKind::Relu);
    let layers = match preset {
        Preset::MlpSmall => vec![
            Layer::Flatten,
            he_dense(&mut rng, 32, 784),
            act.clone(),
            he_dense(&mut rng, 10, 32),
        ],
        Preset::CnnMnist => vec![
            he_conv(&mut rng, 6, 1, 5, 2, 2), // 6×14×14
            act.clone(),
            he_conv(&mut rng, 12, 6, 5, 2, 2), // 12×7×7
            act.clone(),
            Layer::Flatten,
            he_dense(&mut rng, 10, 12 * 7 * 7),
        ],
        Preset::CnnCifarDeep => vec![
            he_conv(&mut rng, 16, 3, 3, 1, 1), // 16×32×32
            act.clone(),
            he_conv(&mut rng, 32, 16, 3, 2, 1), // 32×16×16
            act.clone(),
            he_conv(&mut rng, 64, 32, 3, 2, 1), // 64×8×8
            act.clone(),
            Layer::Flatten,
            he_dense(&mut rng, 10, 64 * 8 * 8),
        ],
    };
    Model::new(layers, ActivationMode::ExactRelu, 10, preset.input_shape())
}

/// Fraction of examples the model classifies correctly.
pub fn accuracy(model: &Model, dataset: &crate::dataset::Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for (x, y) in dataset.examples() {
        let probs = model.probabilities(x)?;
        if crate::engine::argmax(&probs) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_compose_and_parse() {
        for (token, preset) in [
            ("mlp_small", Preset::MlpSmall),
            ("cnn_mnist", Preset::CnnMnist),
            ("cnn_cifar_deep", Preset::CnnCifarDeep),
        ] {
            assert_eq!(Preset::parse(token).unwrap(), preset);
            assert_eq!(preset.name(), token);
            let m = build(preset, 1).unwrap();
            let shapes = m.node_shapes().unwrap();
            assert_eq!(shapes.last().unwrap(), &vec![10]);
        }
        assert!(Preset::parse("resnet").is_err());
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = build(Preset::MlpSmall, 5).unwrap();
        let b = build(Preset::MlpSmall, 5).unwrap();
        let (Layer::Dense { weight: wa, .. }, Layer::Dense { weight: wb, .. }) =
            (&a.layers[1], &b.layers[1])
        else {
            panic!("expected dense layer");
        };
        assert_eq!(wa.data, wb.data);
        let c = build(Preset::MlpSmall, 6).unwrap();
        let Layer::Dense { weight: wc, .. } = &c.layers[1] else {
            panic!("expected dense layer");
        };
        assert_ne!(wa.data, wc.data);
    }
}
