//! Geometry of interpretation fragility: dominant curvature directions of a
//! class score, angles between interpretation-attack and prediction-attack
//! directions, how the achievable saliency change scales with input
//! dimension, and a conservative Lipschitz ceiling on the gradient map.

use crate::engine::{conv_forward, conv_input_vjp, ActivationMode, Layer, Model};
use crate::error::NnError;
use crate::influence::{grad_x_of_test_grad_dot, influence_all};
use crate::rng::{chacha, normal_vec};
use crate::tensor::Tensor;

type Result<T> = std::result::Result<T, NnError>;

/// Default number of power-iteration steps.
pub const POWER_ITERS: usize = 200;
/// Default relative convergence tolerance for power iteration.
pub const POWER_TOL: f64 = 1e-9;

/// A unit direction that perturbs the interpretation fastest, paired with the
/// unit direction that perturbs the prediction fastest, and the undirected
/// angle between them in degrees.
#[derive(Debug, Clone)]
pub struct DirectionPair {
    pub interp_dir: Tensor,
    pub pred_dir: Tensor,
    pub angle_deg: f64,
}

/// Undirected angle in degrees between two unit vectors: acos(|cosine|),
/// always in [0, 90].
fn undirected_angle_deg(a: &Tensor, b: &Tensor) -> f64 {
    let c = a.dot(b).abs().min(1.0);
    c.acos().to_degrees()
}

/// Flips a vector so its first entry of nonnegligible magnitude is positive,
/// removing the sign ambiguity of an eigendirection.
fn canonicalize_sign(v: &mut Tensor) {
    for x in v.data.iter() {
        if x.abs() > 1e-12 {
            if *x < 0.0 {
                for y in v.data.iter_mut() {
                    *y = -*y;
                }
            }
            return;
        }
    }
}

/// Power iteration for the top eigendirection of a PSD linear operator,
/// given as a matrix-free matvec. Returns the unit eigenvector and the
/// final Rayleigh estimate of the eigenvalue.
fn power_iteration<F>(dim: usize, iters: usize, tol: f64, seed: u64, op: F) -> Result<(Tensor, f64)>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let mut rng = chacha(seed);
    let mut v = Tensor {
        shape: vec![dim],
        data: normal_vec(&mut rng, dim, 1.0),
    };
    let n0 = v.norm2();
    if n0 < 1e-300 {
        return Err(NnError::NoConvergence { residual: f64::NAN });
    }
    v = v.scale(1.0 / n0);
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let w = op(&v)?;
        w.assert_finite("power iteration")?;
        let norm = w.norm2();
        if norm < 1e-300 {
            // The operator annihilates the iterate: flat (or numerically
            // flat) spectrum with no dominant direction to report.
            return Err(NnError::NoConvergence { residual: norm });
        }
        let next = w.scale(1.0 / norm);
        // Rayleigh quotient vᵀ(op v) for the unit iterate.
        let estimate = v.dot(&w);
        let residual = (estimate - lambda).abs() / estimate.abs().max(1e-300);
        lambda = estimate;
        v = next;
        if residual < tol {
            canonicalize_sign(&mut v);
            return Ok((v, lambda));
        }
    }
    let w = op(&v)?;
    let estimate = v.dot(&w);
    let residual = (estimate - lambda).abs() / estimate.abs().max(1e-300);
    if residual < tol {
        canonicalize_sign(&mut v);
        return Ok((v, estimate));
    }
    Err(NnError::NoConvergence { residual })
}

/// Unit direction of largest-magnitude curvature of the class score at x:
/// the top eigendirection of H = ∇²_x S(x), found by power iteration on the
/// PSD square H·H so that negative extremes are captured too. The sign is
/// canonicalized (first nonnegligible entry positive).
pub fn top_hessian_direction(
    model: &Model,
    x: &Tensor,
    class_index: usize,
    iters: usize,
    tol: f64,
) -> Result<Tensor> {
    let dim = x.len();
    let (v, _) = power_iteration(dim, iters, tol, 0x7059_a11e, |u| {
        let hu = model.hessian_input_vp(x, u, class_index)?;
        model.hessian_input_vp(x, &hu, class_index)
    })?;
    let mut v = Tensor {
        shape: x.shape.clone(),
        data: v.data,
    };
    canonicalize_sign(&mut v);
    Ok(v)
}

/// Angle between the fastest interpretation-perturbing direction (top
/// curvature direction of the score) and the fastest prediction-perturbing
/// direction (the normalized score gradient) at x.
pub fn attack_angle(model: &Model, x: &Tensor, class_index: usize) -> Result<DirectionPair> {
    let interp = top_hessian_direction(model, x, class_index, POWER_ITERS, POWER_TOL)?;
    let g = model.grad_input(x, class_index)?;
    let gn = g.norm2();
    if gn < 1e-12 {
        return Err(NnError::DegenerateDirection);
    }
    let pred = g.scale(1.0 / gn);
    let angle_deg = undirected_angle_deg(&interp, &pred);
    Ok(DirectionPair {
        interp_dir: interp,
        pred_dir: pred,
        angle_deg,
    })
}

/// Angle between the steepest direction of the summed top-m influence
/// objective at a test point and the prediction-gradient direction there.
/// The direction is the raw (pre-sign) gradient of the objective, so it does
/// not depend on any perturbation budget.
pub fn influence_attack_angle(
    model: &Model,
    train: &Dataset,
    x_t: &Tensor,
    label_t: usize,
    top_m: usize,
    damping: f64,
) -> Result<DirectionPair> {
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
    let g_obj = grad_x_of_test_grad_dot(model, x_t, label_t, &w)?;
    let on = g_obj.norm2();
    if on < 1e-12 {
        return Err(NnError::DegenerateDirection);
    }
    let interp = g_obj.scale(1.0 / on);

    let probs = model.probabilities(x_t)?;
    let pred_class = crate::engine::argmax(&probs);
    let g = model.grad_input(x_t, pred_class)?;
    let gn = g.norm2();
    if gn < 1e-12 {
        return Err(NnError::DegenerateDirection);
    }
    let pred = g.scale(1.0 / gn);
    let angle_deg = undirected_angle_deg(&interp, &pred);
    Ok(DirectionPair {
        interp_dir: interp,
        pred_dir: pred,
        angle_deg,
    })
}

/// Closed-form relative change of the single-unit saliency under a
/// perturbation δ: for S(x) = g(wᵀx), each gradient entry scales by
/// wᵀδ · g''(wᵀx) / g'(wᵀx) to first order, independent of the entry.
pub fn relative_saliency_change(
    w: &Tensor,
    x: &Tensor,
    delta: &Tensor,
    g: ActivationMode,
) -> Result<f64> {
    if w.shape != x.shape || w.shape != delta.shape {
        return Err(NnError::shape("relative change operands", &w.shape, &x.shape));
    }
    let z = w.dot(x);
    let gp = g.prime(z);
    if gp == 0.0 {
        return Err(NnError::ZeroDerivative);
    }
    Ok(w.dot(delta) * g.second(z) / gp)
}

/// Relative first-order change of a single-unit influence score under δ.
/// For the shared one-unit model the influence expression carries the same
/// g'(wᵀx) factor as the saliency, so the relative change reduces to the
/// identical closed form.
pub fn relative_influence_change(
    w: &Tensor,
    x: &Tensor,
    delta: &Tensor,
    g: ActivationMode,
) -> Result<f64> {
    relative_saliency_change(w, x, delta, g)
}

/// One dimension's worth of scaling measurements.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub dim: usize,
    /// |relative saliency change| per trial.
    pub feature_changes: Vec<f64>,
    /// |relative influence change| per trial.
    pub influence_changes: Vec<f64>,
}

impl ScalingRow {
    pub fn mean_feature(&self) -> f64 {
        mean(&self.feature_changes)
    }
    pub fn mean_influence(&self) -> f64 {
        mean(&self.influence_changes)
    }
}

/// Result of the dimension-scaling experiment.
#[derive(Debug, Clone)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of log(mean |change|) against log(dim).
    pub log_log_slope: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Measures how the achievable first-order saliency change under an
/// ℓ∞ budget grows with input dimension. Each trial draws a unit-ℓ₂ weight
/// vector and input, takes the worst-case step δ = ε·sign(w), and records
/// the closed-form relative changes of both the saliency and the influence
/// score of the shared single-unit softplus model.
pub fn dimension_scaling_experiment(
    dims: &[usize],
    trials: usize,
    epsilon: f64,
    seed: u64,
) -> Result<ScalingTable> {
    if dims.is_empty() || trials == 0 {
        return Err(NnError::config("scaling experiment needs dims and trials"));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(NnError::config("epsilon must be positive and finite"));
    }
    let g = ActivationMode::Softplus { beta: 1.0 };
    let mut rows = Vec::with_capacity(dims.len());
    for (di, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(NnError::config("dimension must be positive"));
        }
        let mut rng = chacha(seed ^ (di as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut feature_changes = Vec::with_capacity(trials);
        let mut influence_changes = Vec::with_capacity(trials);
        for _ in 0..trials {
            let w = Tensor {
                shape: vec![d],
                data: normal_vec(&mut rng, d, 1.0),
            }
            .unit()
            .ok_or(NnError::DegenerateInput)?;
            let x = Tensor {
                shape: vec![d],
                data: normal_vec(&mut rng, d, 1.0),
            }
            .unit()
            .ok_or(NnError::DegenerateInput)?;
            let delta = Tensor {
                shape: vec![d],
                data: w.data.iter().map(|v| epsilon * v.signum()).collect(),
            };
            feature_changes.push(relative_saliency_change(&w, &x, &delta, g)?.abs());
            influence_changes.push(relative_influence_change(&w, &x, &delta, g)?.abs());
        }
        rows.push(ScalingRow {
            dim: d,
            feature_changes,
            influence_changes,
        });
    }
    let log_log_slope = if rows.len() >= 2 {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| ((r.dim as f64).ln(), r.mean_feature().max(1e-300).ln()))
            .collect();
        least_squares_slope(&pts)
    } else {
        0.0
    };
    Ok(ScalingTable {
        rows,
        log_log_slope,
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// One-sided Mann–Whitney z statistic for "values in `b` stochastically
/// dominate values in `a`". Normal approximation; ties get half weight.
pub fn mann_whitney_z(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    if n == 0.0 || m == 0.0 {
        return 0.0;
    }
    let mut u = 0.0;
    for &x in b {
        for &y in a {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    let mu = n * m / 2.0;
    let sigma = (n * m * (n + m + 1.0) / 12.0).sqrt();
    if sigma == 0.0 {
        0.0
    } else {
        (u - mu) / sigma
    }
}

/// Steepest saliency-perturbing direction of a two-layer net with
/// mutually orthogonal first-layer rows: S(x) = Σ_j v_j g(w_jᵀx + b_j).
/// In the orthogonal-row regime the score Hessian is diagonalized by the
/// normalized rows, so the extreme direction is the row maximizing
/// |v_j·g''(z_j)|·‖w_j‖². Returns the unit row and its 1-based unit index.
pub fn two_layer_steepest_direction(
    model: &Model,
    x: &Tensor,
    class_index: usize,
) -> Result<(Tensor, usize)> {
    let (w1, b1, act, w2) = match model.layers.as_slice() {
        [Layer::Dense {
            weight: w1,
            bias: b1,
        }, Layer::Activation(_), Layer::Dense { weight: w2, .. }] => {
            (w1, b1, model.activation_mode, w2)
        }
        _ => {
            return Err(NnError::config(
                "expected dense / activation / dense layer stack",
            ))
        }
    };
    let (h, d) = (w1.shape[0], w1.shape[1]);
    if h >= d {
        return Err(NnError::config(
            "hidden width must be smaller than the input dimension",
        ));
    }
    if class_index >= w2.shape[0] {
        return Err(NnError::config("class index out of range"));
    }
    if x.len() != d {
        return Err(NnError::shape("two-layer input", &[d], &x.shape));
    }
    // Orthogonality check over normalized row pairs.
    let mut max_dot: f64 = 0.0;
    for i in 0..h {
        for j in (i + 1)..h {
            let mut dot = 0.0;
            let mut ni = 0.0;
            let mut nj = 0.0;
            for c in 0..d {
                let a = w1.data[i * d + c];
                let b = w1.data[j * d + c];
                dot += a * b;
                ni += a * a;
                nj += b * b;
            }
            let denom = (ni.sqrt() * nj.sqrt()).max(1e-300);
            max_dot = max_dot.max((dot / denom).abs());
        }
    }
    if max_dot > 1e-8 {
        return Err(NnError::NotOrthogonal { max_dot });
    }
    let mut best = (f64::NEG_INFINITY, 0usize);
    for j in 0..h {
        let mut z = b1.data[j];
        let mut nsq = 0.0;
        for c in 0..d {
            let wv = w1.data[j * d + c];
            z += wv * x.data[c];
            nsq += wv * wv;
        }
        let v_j = w2.data[class_index * h + j];
        let score = (v_j * act.second(z)).abs() * nsq;
        if score > best.0 {
            best = (score, j);
        }
    }
    let k = best.1;
    let mut row = Tensor {
        shape: vec![d],
        data: (0..d).map(|c| w1.data[k * d + c]).collect(),
    };
    let n = row.norm2();
    if n < 1e-300 {
        return Err(NnError::DegenerateDirection);
    }
    row = row.scale(1.0 / n);
    canonicalize_sign(&mut row);
    Ok((row, k + 1))
}

/// Largest singular value of a 2-D weight tensor, by power iteration on WᵀW.
pub fn operator_norm(w: &Tensor, iters: usize, tol: f64) -> Result<f64> {
    if w.shape.len() != 2 {
        return Err(NnError::shape("operator norm matrix", &[2], &[w.shape.len()]));
    }
    let (m, n) = (w.shape[0], w.shape[1]);
    let (_, lambda) = power_iteration(n, iters, tol, 0x5e_ed01, |v| {
        // u = Wv, then Wᵀu.
        let mut u = vec![0.0; m];
        for r in 0..m {
            let mut s = 0.0;
            for c in 0..n {
                s += w.data[r * n + c] * v.data[c];
            }
            u[r] = s;
        }
        let mut out = vec![0.0; n];
        for r in 0..m {
            let ur = u[r];
            if ur != 0.0 {
                for c in 0..n {
                    out[c] += w.data[r * n + c] * ur;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n],
            data: out,
        })
    })?;
    Ok(lambda.max(0.0).sqrt())
}

/// Largest singular value of a convolution, treated as a linear operator on
/// input-shaped tensors, by power iteration on convᵀ∘conv (never
/// materialized).
fn conv_operator_norm(
    weight: &Tensor,
    stride: usize,
    padding: usize,
    input_shape: &[usize],
    iters: usize,
    tol: f64,
) -> Result<f64> {
    let dim: usize = input_shape.iter().product();
    let (_, lambda) = power_iteration(dim, iters, tol, 0xc0_4501, |v| {
        let vt = Tensor {
            shape: input_shape.to_vec(),
            data: v.data.clone(),
        };
        let u = conv_forward(weight, None, stride, padding, &vt);
        let back = conv_input_vjp(weight, stride, padding, input_shape, &u);
        Ok(Tensor {
            shape: vec![dim],
            data: back.data,
        })
    })?;
    Ok(lambda.max(0.0).sqrt())
}

/// Lipschitz slope of the first derivative of the activation, i.e. the
/// largest |g''|: β/4 for softplus. The exact hinge has no finite curvature
/// bound at the kink, so it is rejected.
fn activation_prime_lipschitz(mode: ActivationMode) -> Result<f64> {
    match mode {
        ActivationMode::Softplus { beta } => Ok(beta / 4.0),
        ActivationMode::ExactRelu => Err(NnError::UnsupportedActivation),
    }
}

/// Conservative ceiling on the Lipschitz constant of the gradient map
/// x ↦ ∇_x S(x): every linear block feeding an activation contributes its
/// squared operator norm times the curvature bound of that activation, and
/// linear layers after the last activation contribute their operator norm
/// once. A network with no activations has a constant gradient, so the
/// ceiling is 0.
pub fn lipschitz_interpretation_bound(model: &Model) -> Result<f64> {
    let shapes = model.node_shapes()?;
    let mut bound = 1.0;
    let mut open = 1.0; // product of norms of linear layers since the last activation
    let mut any_activation = false;
    for (i, layer) in model.layers.iter().enumerate() {
        match layer {
            Layer::Dense { weight, .. } => {
                open *= operator_norm(weight, POWER_ITERS, POWER_TOL)?;
            }
            Layer::Conv2D {
                weight,
                stride,
                padding,
                ..
            } => {
                open *= conv_operator_norm(
                    weight,
                    *stride,
                    *padding,
                    &shapes[i],
                    POWER_ITERS,
                    POWER_TOL,
                )?;
            }
            Layer::Flatten => {}
            Layer::Activation(_) => {
                any_activation = true;
                bound *= open * open * activation_prime_lipschitz(model.activation_mode)?;
                open = 1.0;
            }
        }
    }
    if !any_activation {
        return Ok(0.0);
    }
    Ok(bound * open)
}
