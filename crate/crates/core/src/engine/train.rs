//! Mini-batch training with SGD or Adam. Fully sequential and seeded, so a
//! given (seed, config, data) triple always produces bit-identical weights.

use rand::seq::SliceRandom;

use crate::dataset::Dataset;
use crate::error::NnError;
use crate::rng::chacha;
use crate::tensor::Tensor;

use super::layer::Layer;
use super::loss::{cross_entropy, dloss_dscores};
use super::model::{LayerGrads, Model};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::adam_default(),
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// One (dw, db) accumulator per parameterized layer, indexed like `layers`.
fn zero_grads(model: &Model) -> Vec<Option<(Tensor, Tensor)>> {
    model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Dense { weight, bias } | Layer::Conv2D { weight, bias, .. } => Some((
                Tensor::zeros(&weight.shape),
                Tensor::zeros(&bias.shape),
            )),
            _ => None,
        })
        .collect()
}

/// Trains a copy of the model; returns it with the per-epoch mean loss curve.
pub fn train(
    model: &Model,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>), NnError> {
    if dataset.is_empty() {
        return Err(NnError::config("training set is empty"));
    }
    if dataset.num_classes != model.num_classes {
        return Err(NnError::config(format!(
            "dataset has {} classes but model expects {}",
            dataset.num_classes, model.num_classes
        )));
    }
    let mut model = model.clone();
    let mut rng = chacha(config.seed);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();

    // Adam moments per parameterized layer: (weight state, bias state).
    let mut adam: Vec<Option<(AdamState, AdamState)>> = model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Dense { weight, bias } | Layer::Conv2D { weight, bias, .. } => {
                Some((
                    AdamState {
                        m: vec![0.0; weight.len()],
                        v: vec![0.0; weight.len()],
                    },
                    AdamState {
                        m: vec![0.0; bias.len()],
                        v: vec![0.0; bias.len()],
                    },
                ))
            }
            _ => None,
        })
        .collect();
    let mut step = 0usize;
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in indices.chunks(config.batch_size) {
            let mut acc = zero_grads(&model);
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = &dataset.images[i];
                let label = dataset.labels[i];
                let (scores, cache) = model.forward_cached(x)?;
                batch_loss += cross_entropy(&scores.data, label);
                let upstream = Tensor::from_vec(dloss_dscores(&scores.data, label));
                let (grads, _) = model.backward_params(&cache, &upstream);
                for (slot, g) in acc.iter_mut().zip(grads) {
                    if let (Some((aw, ab)), LayerGrads::Params { dw, db }) = (slot.as_mut(), g) {
                        for (a, d) in aw.data.iter_mut().zip(&dw.data) {
                            *a += d;
                        }
                        for (a, d) in ab.data.iter_mut().zip(&db.data) {
                            *a += d;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(NnError::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            step += 1;

            for (li, slot) in acc.iter().enumerate() {
                let Some((aw, ab)) = slot else { continue };
                let (weight, bias) = match &mut model.layers[li] {
                    Layer::Dense { weight, bias } | Layer::Conv2D { weight, bias, .. } => {
                        (weight, bias)
                    }
                    _ => unreachable!(),
                };
                let (ws, bs) = adam[li].as_mut().unwrap();
                // Decay applies to weights only, folded into the gradient.
                apply_update(
                    &mut weight.data,
                    &aw.data,
                    scale,
                    config.weight_decay,
                    config,
                    ws,
                    step,
                );
                apply_update(&mut bias.data, &ab.data, scale, 0.0, config, bs, step);
            }
        }
        curve.push(epoch_loss / dataset.len() as f64);
    }
    Ok((model, curve))
}

fn apply_update(
    params: &mut [f64],
    grad_sum: &[f64],
    scale: f64,
    weight_decay: f64,
    config: &TrainConfig,
    state: &mut AdamState,
    step: usize,
) {
    match config.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad_sum) {
                let g = g * scale + weight_decay * *p;
                *p -= config.learning_rate * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let bc1 = 1.0 - beta1.powi(step as i32);
            let bc2 = 1.0 - beta2.powi(step as i32);
            for (i, (p, g)) in params.iter_mut().zip(grad_sum).enumerate() {
                let g = g * scale + weight_decay * *p;
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                *p -= config.learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
