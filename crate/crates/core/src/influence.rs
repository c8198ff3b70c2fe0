//! Training-point influence on a test-point loss through the final dense
//! layer, and the single-step gradient-sign attack that reorders the
//! influence ranking while preserving the prediction.

use crate::dataset::Dataset;
use crate::engine::{hessian_final_layer, Cholesky, Layer, Model};
use crate::error::NnError;
use crate::metrics::{self, MetricReport};
use crate::rng::{chacha, sign_vec};
use crate::tensor::Tensor;
use rayon::prelude::*;

/// One training point's effect on the test loss.
#[derive(Debug, Clone)]
pub struct InfluenceRecord {
    pub train_index: usize,
    pub influence: f64,
    /// Cached H⁻¹ ∇_θL(z_i) over the final layer's flat parameters.
    pub ihvp: Tensor,
}

/// Factored final-layer Hessian plus a parameter stamp so cached solves
/// are never silently reused after the model changes.
pub struct InfluenceSystem {
    chol: Cholesky,
    stamp: u64,
    pub damping: f64,
}

/// FNV-1a over the bit patterns of every parameter in the model.
fn param_stamp(model: &Model) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: f64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for layer in &model.layers {
        match layer {
            Layer::Dense { weight, bias } => {
                weight.data.iter().for_each(|&v| eat(v));
                bias.data.iter().for_each(|&v| eat(v));
            }
            Layer::Conv2D { weight, bias, .. } => {
                weight.data.iter().for_each(|&v| eat(v));
                bias.data.iter().for_each(|&v| eat(v));
            }
            _ => {}
        }
    }
    h
}

impl InfluenceSystem {
    /// Builds and factors the damped final-layer Hessian over the training
    /// set. Requires the network to end in its final dense layer.
    pub fn build(model: &Model, train: &Dataset, damping: f64) -> Result<Self, NnError> {
        model.final_dense_is_last()?;
        let h = hessian_final_layer(model, train, damping)?;
        let chol = Cholesky::factor(&h)?;
        Ok(InfluenceSystem {
            chol,
            stamp: param_stamp(model),
            damping,
        })
    }

    /// True while the model still has the parameters the factorization saw.
    pub fn is_current(&self, model: &Model) -> bool {
        self.stamp == param_stamp(model)
    }

    /// H⁻¹ v over the flat final-layer parameters.
    pub fn ihvp(&self, v: &Tensor) -> Tensor {
        Tensor {
            shape: v.shape.clone(),
            data: self.chol.solve(&v.data),
        }
    }

    /// One cached record per training point, in training order.
    pub fn records(&self, model: &Model, train: &Dataset) -> Result<Vec<InfluenceRecord>, NnError> {
        let grads: Vec<Tensor> = train
            .examples()
            .map(|(x, y)| model.grad_params_final(x, y))
            .collect::<Result<_, _>>()?;
        Ok(grads
            .into_par_iter()
            .enumerate()
            .map(|(i, g)| InfluenceRecord {
                train_index: i,
                influence: 0.0,
                ihvp: self.ihvp(&g),
            })
            .collect())
    }
}

/// Scores every record against one test gradient: I = −∇_θL(z_t)ᵀ ihvp_i.
/// Influences are written into the records; order is unchanged.
pub fn score_records(records: &mut [InfluenceRecord], test_grad: &Tensor) {
    for r in records {
        r.influence = -test_grad.dot(&r.ihvp);
    }
}

/// Influence of every training point on the test point, sorted by
/// descending influence (ties toward the lower training index).
pub fn influence_all(
    model: &Model,
    train: &Dataset,
    x_t: &Tensor,
    label_t: usize,
    damping: f64,
) -> Result<Vec<InfluenceRecord>, NnError> {
    let system = InfluenceSystem::build(model, train, damping)?;
    let mut records = system.records(model, train)?;
    let g_t = model.grad_params_final(x_t, label_t)?;
    score_records(&mut records, &g_t);
    sort_by_influence(&mut records);
    Ok(records)
}

fn sort_by_influence(records: &mut [InfluenceRecord]) {
    records.sort_by(|a, b| {
        b.influence
            .partial_cmp(&a.influence)
            .unwrap()
            .then(a.train_index.cmp(&b.train_index))
    });
}

/// ∇_x [∇_θL(z_t, x)ᵀ w] for a flat final-layer vector w: the closed-form
/// final-layer gradient (p − y) ⊗ [a; 1] is differentiated through both of
/// its input-dependent factors — the softmax scores and the feature vector
/// — and the resulting adjoint is pulled back to the input.
pub(crate) fn grad_x_of_test_grad_dot(
    model: &Model,
    x_t: &Tensor,
    label_t: usize,
    w: &Tensor,
) -> Result<Tensor, NnError> {
    let final_idx = model.final_dense_is_last()?;
    let (weight_shape, _) = match &model.layers[final_idx] {
        Layer::Dense { weight, bias } => (weight.shape.clone(), bias.len()),
        _ => unreachable!(),
    };
    let (c, f) = (weight_shape[0], weight_shape[1]);
    if w.len() != c * (f + 1) {
        return Err(NnError::LengthMismatch {
            left: w.len(),
            right: c * (f + 1),
        });
    }

    let (scores, cache) = model.forward_cached(x_t)?;
    let a = &cache.nodes[final_idx]; // features entering the final layer
    let p = crate::engine::softmax(&scores.data);

    // r_c = ⟨w_W[c,:], a⟩ + w_b[c]; the objective is (p − y)ᵀ r.
    let mut r = vec![0.0; c];
    for cls in 0..c {
        let row = &w.data[cls * f..(cls + 1) * f];
        let mut acc = w.data[c * f + cls];
        for j in 0..f {
            acc += row[j] * a.data[j];
        }
        r[cls] = acc;
    }

    // Route through the softmax: dφ/ds = (diag(p) − ppᵀ) r.
    let pr: f64 = p.iter().zip(&r).map(|(pi, ri)| pi * ri).sum();
    let ds: Vec<f64> = p.iter().zip(&r).map(|(pi, ri)| pi * (ri - pr)).collect();

    // Pull dφ/ds through the final dense layer onto the features, and add
    // the direct route dφ/da = w_Wᵀ (p − y).
    let mut da = vec![0.0; f];
    if let Layer::Dense { weight, .. } = &model.layers[final_idx] {
        for cls in 0..c {
            let row = &weight.data[cls * f..(cls + 1) * f];
            let g = ds[cls];
            for j in 0..f {
                da[j] += row[j] * g;
            }
        }
    }
    let mut y = vec![0.0; c];
    y[label_t] = 1.0;
    for cls in 0..c {
        let row = &w.data[cls * f..(cls + 1) * f];
        let pmy = p[cls] - y[cls];
        for j in 0..f {
            da[j] += row[j] * pmy;
        }
    }

    let seed = Tensor {
        shape: a.shape.clone(),
        data: da,
    };
    let grad = model.backward_from(&cache, final_idx, seed);
    grad.assert_finite("influence attack gradient")
        .map_err(|_| NnError::NonFiniteGradient)?;
    Ok(grad)
}

/// δ = −ε·sign(∇_{x_t} Σ_{i ≤ top_m} ∇_θL(z_t)ᵀ H⁻¹ ∇_θL(z_(i))), the
/// single-step perturbation that suppresses the summed influence of the
/// currently most influential training points.
pub fn influence_attack_direction(
    model: &Model,
    train: &Dataset,
    x_t: &Tensor,
    label_t: usize,
    top_m: usize,
    epsilon: f64,
    damping: f64,
) -> Result<Tensor, NnError> {
    if top_m == 0 || top_m > train.len() {
        return Err(NnError::InvalidK {
            k: top_m,
            len: train.len(),
        });
    }
    let records = influence_all(model, train, x_t, label_t, damping)?;
    let mut w = Tensor::zeros(&[records[0].ihvp.len()]);
    for r in records.iter().take(top_m) {
        w = w.add(&r.ihvp);
    }
    // The objective Σ I(z_(i), z_t) = −g_tᵀ w; maximize suppression by
    // stepping against the gradient of g_tᵀ w.
    let grad = grad_x_of_test_grad_dot(model, x_t, label_t, &w)?;
    Ok(Tensor {
        shape: grad.shape.clone(),
        data: grad.data.iter().map(|g| -epsilon * g.signum()).collect(),
    })
}

/// Head-to-head evaluation of the gradient-sign attack against a
/// random-sign perturbation of the same budget.
#[derive(Debug, Clone)]
pub struct InfluenceAttackEval {
    pub gradient: MetricReport,
    pub random: MetricReport,
    pub gradient_preserved: bool,
    pub random_preserved: bool,
    pub x_gradient: Tensor,
    pub x_random: Tensor,
}

/// Influence vectors (aligned by training index) before and after each
/// perturbation, compared by rank correlation and top-5 intersection.
pub fn influence_attack_eval(
    model: &Model,
    train: &Dataset,
    x_t: &Tensor,
    label_t: usize,
    epsilon: f64,
    seed: u64,
    top_m: usize,
    damping: f64,
) -> Result<InfluenceAttackEval, NnError> {
    let system = InfluenceSystem::build(model, train, damping)?;
    let mut records = system.records(model, train)?;

    let aligned = |records: &[InfluenceRecord]| -> Vec<f64> {
        let mut v = vec![0.0; records.len()];
        for r in records {
            v[r.train_index] = r.influence;
        }
        v
    };

    let g_t = model.grad_params_final(x_t, label_t)?;
    score_records(&mut records, &g_t);
    let before = aligned(&records);

    // Gradient-sign perturbation re-uses the already-scored ranking.
    let mut ranked = records.clone();
    sort_by_influence(&mut ranked);
    if top_m == 0 || top_m > ranked.len() {
        return Err(NnError::InvalidK {
            k: top_m,
            len: ranked.len(),
        });
    }
    let mut w = Tensor::zeros(&[g_t.len()]);
    for r in ranked.iter().take(top_m) {
        w = w.add(&r.ihvp);
    }
    let obj_grad = grad_x_of_test_grad_dot(model, x_t, label_t, &w)?;
    let clip01 = |t: Tensor| Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    };
    let x_gradient = clip01(Tensor {
        shape: x_t.shape.clone(),
        data: x_t
            .data
            .iter()
            .zip(&obj_grad.data)
            .map(|(&v, &g)| v - epsilon * g.signum())
            .collect(),
    });
    let signs = sign_vec(&mut chacha(seed), x_t.len());
    let x_random = clip01(Tensor {
        shape: x_t.shape.clone(),
        data: x_t
            .data
            .iter()
            .zip(&signs)
            .map(|(&v, &s)| v + epsilon * s)
            .collect(),
    });

    // Only the test gradient changes under an input perturbation, so the
    // cached solves are reused for both "after" scorings.
    let mut eval_at = |x: &Tensor| -> Result<(Vec<f64>, bool), NnError> {
        let g = model.grad_params_final(x, label_t)?;
        score_records(&mut records, &g);
        let preserved = model.predict(x)? == model.predict(x_t)?;
        Ok((aligned(&records), preserved))
    };
    let (after_g, gradient_preserved) = eval_at(&x_gradient)?;
    let (after_r, random_preserved) = eval_at(&x_random)?;

    let k = 5.min(train.len());
    let side_report = |after: &[f64]| -> Result<MetricReport, NnError> {
        Ok(MetricReport {
            rank_correlation: metrics::spearman(&before, after)?,
            topk_intersection: metrics::topk_intersection(&before, after, k)?,
            k,
            center_shift: 0.0, // influence vectors carry no spatial layout
        })
    };

    Ok(InfluenceAttackEval {
        gradient: side_report(&after_g)?,
        random: side_report(&after_r)?,
        gradient_preserved,
        random_preserved,
        x_gradient,
        x_random,
    })
}
