//! Frozen-feature binary task for influence experiments: a trained trunk
//! keeps its weights, a fresh two-way head is fitted on two classes with
//! head-only gradient steps, and gradient-sign versus random-sign influence
//! perturbations are swept over budgets.

use crate::dataset::Dataset;
use crate::engine::{argmax, Layer, Model};
use crate::error::NnError;
use crate::harness::csvutil::{fmt_float, mean_std, write_csv};
use crate::harness::data::Splits;
use crate::influence::influence_attack_eval;
use crate::rng::{chacha, normal_vec};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::path::Path;

type Result<T> = std::result::Result<T, NnError>;

/// A binary task carved out of a ten-class dataset: the trunk of the given
/// model with a fresh 2-way dense head on top.
#[derive(Debug, Clone)]
pub struct BinaryTask {
    pub model: Model,
    pub train: Dataset,
    pub test: Dataset,
}

/// Replaces the model's final dense layer with a fresh seeded 2-way head.
fn with_fresh_head(trunk: &Model, seed: u64) -> Result<Model> {
    let final_idx = trunk.final_dense_index()?;
    let in_dim = match &trunk.layers[final_idx] {
        Layer::Dense { weight, .. } => weight.shape[1],
        _ => unreachable!(),
    };
    let mut layers = trunk.layers[..final_idx].to_vec();
    let mut rng = chacha(seed ^ 0xbead_5eed);
    layers.push(Layer::Dense {
        weight: Tensor {
            shape: vec![2, in_dim],
            data: normal_vec(&mut rng, 2 * in_dim, (1.0 / in_dim as f64).sqrt()),
        },
        bias: Tensor::zeros(&[2]),
    });
    Model::new(layers, trunk.activation_mode, 2, trunk.input_shape.clone())
}

/// Fits only the final dense layer by SGD on the cross-entropy loss,
/// leaving every trunk weight frozen.
pub fn train_head_only(
    model: &mut Model,
    train: &Dataset,
    epochs: usize,
    lr: f64,
    weight_decay: f64,
    seed: u64,
) -> Result<()> {
    let final_idx = model.final_dense_index()?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = chacha(seed ^ 0x4ead_011e);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = model.grad_params_final(&train.images[i], train.labels[i])?;
            let Layer::Dense { weight, bias } = &mut model.layers[final_idx] else {
                unreachable!()
            };
            let (c, f) = (weight.shape[0], weight.shape[1]);
            for row in 0..c {
                for col in 0..f {
                    let idx = row * f + col;
                    weight.data[idx] -=
                        lr * (g.data[idx] + weight_decay * weight.data[idx]);
                }
                let bidx = c * f + row;
                bias.data[row] -= lr * (g.data[bidx] + weight_decay * bias.data[row]);
            }
        }
    }
    Ok(())
}

/// Builds the frozen-feature binary task from ten-class splits and a
/// trained trunk model, keeping the two listed classes.
pub fn build_binary_task(
    splits: &Splits,
    trunk: &Model,
    classes: (usize, usize),
    head_epochs: usize,
    seed: u64,
) -> Result<BinaryTask> {
    let keep = [classes.0, classes.1];
    let train = splits.train.filter_classes(&keep);
    let test = splits.test.filter_classes(&keep);
    if train.is_empty() || test.is_empty() {
        return Err(NnError::config("binary task has an empty split"));
    }
    let mut model = with_fresh_head(trunk, seed)?;
    train_head_only(&mut model, &train, head_epochs, 0.1, 1e-4, seed)?;
    Ok(BinaryTask { model, train, test })
}

/// One influence-attack evaluation row.
#[derive(Debug, Clone)]
pub struct InfluenceRow {
    pub image_id: usize,
    /// Budget in 1/255 units.
    pub epsilon: f64,
    /// "grad" for the gradient-sign attack, "rand" for the baseline.
    pub variant: &'static str,
    pub rank_corr: f64,
    pub top5: f64,
    pub pred_preserved: bool,
}

pub const INFLUENCE_HEADER: [&str; 6] = [
    "image_id",
    "epsilon",
    "variant",
    "rank_corr",
    "top_k",
    "pred_preserved",
];

/// Sweeps gradient-sign and random-sign influence perturbations over the
/// selected correctly classified test images and budgets.
pub fn run_influence_sweep(
    task: &BinaryTask,
    image_indices: &[usize],
    epsilons_255: &[f64],
    seed: u64,
    top_m: usize,
    damping: f64,
) -> Result<Vec<InfluenceRow>> {
    let jobs: Vec<(usize, usize, f64)> = image_indices
        .iter()
        .enumerate()
        .flat_map(|(image_id, &ds_idx)| {
            epsilons_255
                .iter()
                .map(move |&eps| (image_id, ds_idx, eps))
        })
        .collect();
    let results: Vec<Result<Vec<InfluenceRow>>> = jobs
        .par_iter()
        .map(|&(image_id, ds_idx, eps)| {
            let x = &task.test.images[ds_idx];
            let label = task.test.labels[ds_idx];
            let eval = influence_attack_eval(
                &task.model,
                &task.train,
                x,
                label,
                eps / 255.0,
                seed ^ (image_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                top_m,
                damping,
            )?;
            Ok(vec![
                InfluenceRow {
                    image_id,
                    epsilon: eps,
                    variant: "grad",
                    rank_corr: eval.gradient.rank_correlation,
                    top5: eval.gradient.topk_intersection,
                    pred_preserved: eval.gradient_preserved,
                },
                InfluenceRow {
                    image_id,
                    epsilon: eps,
                    variant: "rand",
                    rank_corr: eval.random.rank_correlation,
                    top5: eval.random.topk_intersection,
                    pred_preserved: eval.random_preserved,
                },
            ])
        })
        .collect();
    let mut rows = Vec::with_capacity(jobs.len() * 2);
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Correctly classified test indices of the binary task, shuffled by seed.
pub fn select_binary_images(task: &BinaryTask, n: usize, seed: u64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..task.test.len()).collect();
    order.shuffle(&mut chacha(seed ^ 0x00c0_ffee));
    let mut picked = Vec::with_capacity(n);
    for idx in order {
        let probs = task.model.probabilities(&task.test.images[idx])?;
        if argmax(&probs) == task.test.labels[idx] {
            picked.push(idx);
            if picked.len() == n {
                return Ok(picked);
            }
        }
    }
    Err(NnError::config(format!(
        "only {} correctly classified binary test images, asked for {n}",
        picked.len()
    )))
}

/// Writes influence rows plus a per-(epsilon, variant) summary.
pub fn write_influence_artifacts(dir: &Path, rows: &[InfluenceRow]) -> Result<()> {
    let fields: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.image_id.to_string(),
                fmt_float(r.epsilon),
                r.variant.to_string(),
                fmt_float(r.rank_corr),
                fmt_float(r.top5),
                if r.pred_preserved { "1" } else { "0" }.to_string(),
            ]
        })
        .collect();
    write_csv(&dir.join("influence_rows.csv"), &INFLUENCE_HEADER, &fields)?;
    let mut groups: std::collections::BTreeMap<(u64, &str), Vec<&InfluenceRow>> =
        std::collections::BTreeMap::new();
    for row in rows.iter().filter(|r| r.pred_preserved) {
        groups
            .entry((row.epsilon.to_bits(), row.variant))
            .or_default()
            .push(row);
    }
    let out: Vec<Vec<String>> = groups
        .into_iter()
        .map(|((eps_bits, variant), members)| {
            let rank = mean_std(&members.iter().map(|r| r.rank_corr).collect::<Vec<f64>>());
            let top5 = mean_std(&members.iter().map(|r| r.top5).collect::<Vec<f64>>());
            vec![
                fmt_float(f64::from_bits(eps_bits)),
                variant.to_string(),
                members.len().to_string(),
                fmt_float(rank.0),
                fmt_float(rank.1),
                fmt_float(top5.0),
                fmt_float(top5.1),
            ]
        })
        .collect();
    write_csv(
        &dir.join("influence_summary.csv"),
        &[
            "epsilon",
            "variant",
            "n",
            "rank_corr_mean",
            "rank_corr_std",
            "top_k_mean",
            "top_k_std",
        ],
        &out,
    )
}
