//! Input gradients of the dissimilarity objectives. Each routine returns
//! the objective value and its exact gradient through the full chain:
//! raw attribution → absolute value → normalization → objective.

use crate::engine::{Layer, Model};
use crate::error::NnError;
use crate::interpret::{self, ReferencePoint, SaliencyMap};
use crate::metrics;
use crate::tensor::Tensor;

/// A frozen dissimilarity objective, built once from the unperturbed map.
#[derive(Debug, Clone)]
pub(crate) enum Objective {
    /// Drive mass out of `b`, the top-k feature set of the original map.
    TopK { b: Vec<usize> },
    /// Drive mass into a fixed 0/1 target region.
    Targeted { mask: Vec<f64> },
    /// Move the center of mass away from the original center.
    MassCenter { c_t: (f64, f64) },
}

impl Objective {
    /// D(I) for a normalized map.
    pub fn value(&self, map: &SaliencyMap) -> Result<f64, NnError> {
        match self {
            Objective::TopK { b } => Ok(-b.iter().map(|&i| map.values.data[i]).sum::<f64>()),
            Objective::Targeted { mask } => Ok(mask
                .iter()
                .zip(&map.values.data)
                .map(|(m, v)| m * v)
                .sum()),
            Objective::MassCenter { c_t } => {
                let c = metrics::center_of_mass(map)?;
                Ok(((c.0 - c_t.0).powi(2) + (c.1 - c_t.1).powi(2)).sqrt())
            }
        }
    }

    /// dD/dI for a normalized map. The mass-center denominator is smoothed
    /// so the gradient exists at zero displacement.
    pub fn grad_map(&self, map: &SaliencyMap) -> Result<Vec<f64>, NnError> {
        let d = map.values.len();
        match self {
            Objective::TopK { b } => {
                let mut u = vec![0.0; d];
                for &i in b {
                    u[i] = -1.0;
                }
                Ok(u)
            }
            Objective::Targeted { mask } => Ok(mask.clone()),
            Objective::MassCenter { c_t } => {
                let c = metrics::center_of_mass(map)?;
                let dr = c.0 - c_t.0;
                let dc = c.1 - c_t.1;
                let denom = (dr * dr + dc * dc + 1e-12).sqrt();
                let (h, w) = grid_dims(&map.values.shape)?;
                let mut u = vec![0.0; d];
                for (i, slot) in u.iter_mut().enumerate() {
                    let (r, cc) = grid_position(i, h, w);
                    *slot = (dr * r + dc * cc) / denom;
                }
                Ok(u)
            }
        }
    }
}

/// (H, W) of the spatial grid underlying a map shape.
fn grid_dims(shape: &[usize]) -> Result<(usize, usize), NnError> {
    match shape.len() {
        2 => Ok((shape[0], shape[1])),
        3 => Ok((shape[1], shape[2])),
        _ => Err(NnError::shape("grid position", &[0, 0], shape)),
    }
}

/// 1-based (row, col) of flat feature index i; channels share positions.
fn grid_position(i: usize, h: usize, w: usize) -> (f64, f64) {
    let p = i % (h * w);
    ((p / w + 1) as f64, (p % w + 1) as f64)
}

/// Objective value and dD/dx when the attribution is the plain gradient:
/// raw = ∇S_c(x), so dD/dx = H(x) · q with one Hessian-vector product.
pub(crate) fn grad_simple(
    model: &Model,
    x: &Tensor,
    class_index: usize,
    obj: &Objective,
) -> Result<(f64, Tensor), NnError> {
    let raw = model.grad_input(x, class_index)?;
    let (_, d, q) = objective_at(&raw, obj, crate::interpret::SaliencyMethod::SimpleGradient)?;
    let grad = model.hessian_input_vp(x, &q, class_index)?;
    grad.assert_finite("dissimilarity gradient")
        .map_err(|_| NnError::NonFiniteGradient)?;
    Ok((d, grad))
}

/// Raw attribution → (normalized map, D, dD/draw), shared by all three
/// routines. The pullback through |·| and normalization is
/// dD/draw_j = sign(raw_j) · (u_j − ⟨I, u⟩) / S where h = |raw|, S = Σ h,
/// I = h/S and u = dD/dI.
fn objective_at(
    raw: &Tensor,
    obj: &Objective,
    method: crate::interpret::SaliencyMethod,
) -> Result<(SaliencyMap, f64, Tensor), NnError> {
    let h = raw.abs();
    let s = h.sum();
    if s < 1e-12 {
        return Err(NnError::DegenerateSaliency);
    }
    let map = SaliencyMap {
        values: h.scale(1.0 / s),
        method,
    };
    let d = obj.value(&map)?;
    let u = obj.grad_map(&map)?;
    let iu: f64 = map.values.data.iter().zip(&u).map(|(a, b)| a * b).sum();
    let q = Tensor {
        shape: raw.shape.clone(),
        data: raw
            .data
            .iter()
            .zip(&u)
            .map(|(&r, &uv)| if r == 0.0 { 0.0 } else { r.signum() * (uv - iu) / s })
            .collect(),
    };
    Ok((map, d, q))
}

/// Objective value and dD/dx for path-integrated attributions with M steps:
/// raw_j = (Δx_j/M)·Σ_k ∂S/∂x_j(x_k). Differentiating moves one term
/// through the path points (δ_ij picks up the mean path gradient) and one
/// through the Hessians at each path point.
pub(crate) fn grad_integrated(
    model: &Model,
    x: &Tensor,
    reference: &ReferencePoint,
    steps: usize,
    class_index: usize,
    obj: &Objective,
) -> Result<(f64, Tensor), NnError> {
    if steps == 0 {
        return Err(NnError::config("integrated gradients need at least one step"));
    }
    let delta = x.sub(&reference.x0);
    let m = steps as f64;

    let mut grad_sum = Tensor::zeros(&x.shape);
    for k in 1..=steps {
        let t = k as f64 / m;
        let point = reference.x0.add(&delta.scale(t));
        grad_sum = grad_sum.add(&model.grad_input(&point, class_index)?);
    }
    let raw = delta.hadamard(&grad_sum).scale(1.0 / m);
    let (_, d, q) = objective_at(&raw, obj, crate::interpret::SaliencyMethod::IntegratedGradients)?;

    // First term: the δ_ij route, q ⊙ mean path gradient.
    let mut total = q.hadamard(&grad_sum).scale(1.0 / m);
    // Second term: Σ_k (t_k/M) · H(x_k) · (q ⊙ Δx).
    let w = q.hadamard(&delta);
    for k in 1..=steps {
        let t = k as f64 / m;
        let point = reference.x0.add(&delta.scale(t));
        let (_, hv) = model.grad_and_hvp(&point, &w, class_index)?;
        total = total.add(&hv.scale(t / m));
    }
    total
        .assert_finite("dissimilarity gradient")
        .map_err(|_| NnError::NonFiniteGradient)?;
    Ok((d, total))
}

/// d/dz of the rescale multiplier ρ(z) = (g(z) − g(z⁰)) / (z − z⁰);
/// zero inside the guard band where ρ is frozen at g'(z⁰).
fn rho_prime(mode: crate::engine::ActivationMode, z: f64, z0: f64) -> f64 {
    let dz = z - z0;
    if dz.abs() < interpret::RESCALE_GUARD {
        return 0.0;
    }
    (mode.prime(z) * dz - (mode.value(z) - mode.value(z0))) / (dz * dz)
}

/// Objective value and dD/dx for rescale-rule attributions:
/// raw = m(x) ⊙ Δx. The direct route contributes q ⊙ m; the multiplier
/// route re-enters the network once per activation level: the vector
/// c = q ⊙ Δx is pushed up the multiplier chain, multiplied by ρ' and the
/// downward multiplier at each level, and the result is pulled back to the
/// input through the true forward graph.
pub(crate) fn grad_rescale(
    model: &Model,
    x: &Tensor,
    reference: &ReferencePoint,
    class_index: usize,
    obj: &Objective,
) -> Result<(f64, Tensor), NnError> {
    let pass = interpret::rescale_pass(model, x, reference, class_index)?;
    let delta = x.sub(&reference.x0);
    let raw = pass.multipliers.hadamard(&delta);
    let (_, d, q) = objective_at(&raw, obj, crate::interpret::SaliencyMethod::DeepLift)?;

    // Upward sweep: push c through the multiplier chain, recording the
    // vector arriving at each activation input.
    let c = q.hadamard(&delta);
    let mut b = c;
    let mut b_at_act: Vec<(usize, Tensor)> = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        match layer {
            Layer::Activation(_) => {
                b_at_act.push((i, b.clone()));
                let z = &pass.cache_x.nodes[i];
                let z0 = &pass.cache_ref.nodes[i];
                let data = z
                    .data
                    .iter()
                    .zip(&z0.data)
                    .zip(&b.data)
                    .map(|((&zi, &z0i), &bi)| {
                        let rho = if (zi - z0i).abs() < interpret::RESCALE_GUARD {
                            model.activation_mode.prime(z0i)
                        } else {
                            (model.activation_mode.value(zi) - model.activation_mode.value(z0i))
                                / (zi - z0i)
                        };
                        rho * bi
                    })
                    .collect();
                b = Tensor {
                    shape: z.shape.clone(),
                    data,
                };
            }
            layer => {
                b = model.tangent_layer(layer, &pass.cache_x.nodes[i], &b);
            }
        }
    }

    // Downward sweep through the true forward graph, injecting the
    // per-level spray ρ'(z) ⊙ m̄ ⊙ b at each activation input.
    let sprays: std::collections::HashMap<usize, Tensor> = b_at_act
        .into_iter()
        .map(|(i, b_in)| {
            let z = &pass.cache_x.nodes[i];
            let z0 = &pass.cache_ref.nodes[i];
            let m_down = pass
                .act_levels
                .iter()
                .find(|(idx, _)| *idx == i)
                .map(|(_, m)| m)
                .expect("activation level recorded in rescale pass");
            let data = z
                .data
                .iter()
                .zip(&z0.data)
                .zip(m_down.data.iter().zip(&b_in.data))
                .map(|((&zi, &z0i), (&mi, &bi))| {
                    rho_prime(model.activation_mode, zi, z0i) * mi * bi
                })
                .collect();
            (
                i,
                Tensor {
                    shape: z.shape.clone(),
                    data,
                },
            )
        })
        .collect();

    let top = model.layers.len();
    let mut v = Tensor::zeros(&pass.cache_x.nodes[top].shape);
    for i in (0..top).rev() {
        v = model.vjp_layer(&model.layers[i], &pass.cache_x.nodes[i], &v);
        if let Some(spray) = sprays.get(&i) {
            v = v.add(spray);
        }
    }

    let total = q.hadamard(&pass.multipliers).add(&v);
    total
        .assert_finite("dissimilarity gradient")
        .map_err(|_| NnError::NonFiniteGradient)?;
    Ok((d, total))
}
