//! Perturbation attacks on feature-importance maps: a random-sign
//! baseline and three iterative signed-gradient attacks (top-k mass,
//! targeted region, center-of-mass displacement). Gradient steps use a
//! smooth surrogate; predictions are always validated on the exact model.

mod grad;

pub(crate) use grad::Objective;

use crate::engine::{ActivationMode, Model};
use crate::error::NnError;
use crate::interpret::{self, ReferencePoint, SaliencyMap, SaliencyMethod};
use crate::metrics::{self, MetricReport};
use crate::rng::{chacha, sign_vec};
use crate::tensor::Tensor;

/// Which dissimilarity is maximized (or, for the baseline, none).
#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    RandomSign,
    TopK { k: usize },
    Targeted { mask: Tensor },
    MassCenter,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::RandomSign => "rand",
            AttackKind::TopK { .. } => "topk",
            AttackKind::Targeted { .. } => "target",
            AttackKind::MassCenter => "center",
        }
    }
}

/// Default top-k budget for a given input shape: 100 features for
/// desk-scale grids, 1000 once images reach 224 pixels a side.
pub fn default_k(input_shape: &[usize]) -> usize {
    let side = *input_shape.iter().max().unwrap_or(&1);
    if side >= 224 {
        1000
    } else {
        100
    }
}

/// Full description of one attack run.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L∞ budget in the input's value range ([0,1] here, so 8/255 ≈ 0.031).
    pub epsilon: f64,
    /// Signed-gradient step size, same units as epsilon.
    pub alpha: f64,
    /// Iteration count P.
    pub iters: usize,
    pub seed: u64,
    pub method: SaliencyMethod,
    /// Path steps M for integrated gradients (both map and its gradient).
    pub ig_steps: usize,
    /// Smoothness of the softplus surrogate used for attack gradients.
    pub beta: f64,
    /// k used in the reported top-k intersection metric.
    pub metric_k: usize,
    /// Reference point for path/rescale attributions; zeros when absent.
    pub reference: Option<Tensor>,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, epsilon: f64, alpha: f64, iters: usize) -> Self {
        AttackConfig {
            kind,
            epsilon,
            alpha,
            iters,
            seed: 0,
            method: SaliencyMethod::SimpleGradient,
            ig_steps: 100,
            beta: 10.0,
            metric_k: 100,
            reference: None,
        }
    }

    fn validate(&self, x_t: &Tensor) -> Result<(), NnError> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(NnError::config("epsilon must be a finite nonnegative real"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(NnError::config("alpha must be a finite positive real"));
        }
        if self.iters == 0 {
            return Err(NnError::config("iteration count must be positive"));
        }
        if self.epsilon > 0.0 && self.alpha > self.epsilon * self.iters as f64 {
            return Err(NnError::config(
                "alpha exceeds epsilon * iterations; the first clip would dominate",
            ));
        }
        match &self.kind {
            AttackKind::TopK { k } => {
                if *k == 0 || *k > x_t.len() {
                    return Err(NnError::InvalidK {
                        k: *k,
                        len: x_t.len(),
                    });
                }
            }
            AttackKind::Targeted { mask } => {
                if mask.shape != x_t.shape {
                    return Err(NnError::shape("target mask", &x_t.shape, &mask.shape));
                }
                if mask.data.iter().all(|&v| v == 0.0) {
                    return Err(NnError::config("target mask selects no features"));
                }
            }
            _ => {}
        }
        if self.metric_k == 0 || self.metric_k > x_t.len() {
            return Err(NnError::InvalidK {
                k: self.metric_k,
                len: x_t.len(),
            });
        }
        Ok(())
    }

    fn reference_point(&self, x_t: &Tensor) -> Result<ReferencePoint, NnError> {
        match &self.reference {
            None => Ok(ReferencePoint::zeros(&x_t.shape)),
            Some(x0) => {
                if x0.shape != x_t.shape {
                    return Err(NnError::shape("reference point", &x_t.shape, &x0.shape));
                }
                Ok(ReferencePoint::custom(x0.clone()))
            }
        }
    }
}

/// Outcome of one attack on one input.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub x_adv: Tensor,
    /// Dissimilarity of each iterate, in order; empty for the baseline.
    pub dissimilarity_trace: Vec<f64>,
    /// 1-based iteration whose iterate was returned; 0 when none preserved
    /// the prediction (x_adv is then the unperturbed input).
    pub selected_iteration: usize,
    pub prediction_preserved: bool,
    pub confidence_before: f64,
    pub confidence_after: f64,
    /// Similarity of the original and perturbed maps on the exact model.
    pub metrics: MetricReport,
}

/// x_t + ε·s with s uniform over {−1,+1}^d, clipped to [0,1].
pub fn random_sign_perturbation(x_t: &Tensor, epsilon: f64, seed: u64) -> Tensor {
    let mut rng = chacha(seed);
    let signs = sign_vec(&mut rng, x_t.len());
    let data = x_t
        .data
        .iter()
        .zip(&signs)
        .map(|(&v, &s)| (v + epsilon * s).clamp(0.0, 1.0))
        .collect();
    Tensor {
        shape: x_t.shape.clone(),
        data,
    }
}

/// The change measure between the interpretation at x and at x_t, with
/// index sets and target centers frozen from x_t.
pub fn dissimilarity<F>(
    kind: &AttackKind,
    x_t: &Tensor,
    x: &Tensor,
    saliency_fn: F,
) -> Result<f64, NnError>
where
    F: Fn(&Tensor) -> Result<SaliencyMap, NnError>,
{
    let obj = build_objective(kind, &saliency_fn(x_t)?)?;
    obj.value(&saliency_fn(x)?)
}

fn build_objective(kind: &AttackKind, original: &SaliencyMap) -> Result<Objective, NnError> {
    match kind {
        AttackKind::RandomSign => Err(NnError::config(
            "the random-sign baseline has no dissimilarity objective",
        )),
        AttackKind::TopK { k } => Ok(Objective::TopK {
            b: metrics::topk_indices(&original.values.data, *k)?,
        }),
        AttackKind::Targeted { mask } => Ok(Objective::Targeted {
            mask: mask.data.clone(),
        }),
        AttackKind::MassCenter => Ok(Objective::MassCenter {
            c_t: metrics::center_of_mass(original)?,
        }),
    }
}

/// Clips x into the ε-ball around x_t intersected with the value range.
fn clip(x: &Tensor, x_t: &Tensor, epsilon: f64) -> Tensor {
    let data = x
        .data
        .iter()
        .zip(&x_t.data)
        .map(|(&v, &c)| v.max(c - epsilon).min(c + epsilon).clamp(0.0, 1.0))
        .collect();
    Tensor {
        shape: x.shape.clone(),
        data,
    }
}

/// Iterative signed-gradient ascent on the dissimilarity, returning the
/// best iterate whose prediction matches the unperturbed one.
pub fn iterative_attack(
    model: &Model,
    x_t: &Tensor,
    cfg: &AttackConfig,
) -> Result<AttackResult, NnError> {
    cfg.validate(x_t)?;
    if matches!(cfg.kind, AttackKind::RandomSign) {
        return random_sign_attack(model, x_t, cfg);
    }

    let class = model.predict(x_t)?;
    let confidence_before = model.probabilities(x_t)?[class];
    let surrogate = model.with_mode(ActivationMode::Softplus { beta: cfg.beta });
    let reference = cfg.reference_point(x_t)?;

    // Freeze the objective from the unperturbed surrogate map.
    let original_surr = interpret::saliency(
        &surrogate,
        x_t,
        cfg.method,
        &reference,
        cfg.ig_steps,
        class,
    )?;
    let obj = build_objective(&cfg.kind, &original_surr)?;

    let eval = |x: &Tensor| -> Result<(f64, Tensor), NnError> {
        match cfg.method {
            SaliencyMethod::SimpleGradient => grad::grad_simple(&surrogate, x, class, &obj),
            SaliencyMethod::IntegratedGradients => {
                grad::grad_integrated(&surrogate, x, &reference, cfg.ig_steps, class, &obj)
            }
            SaliencyMethod::DeepLift => {
                grad::grad_rescale(&surrogate, x, &reference, class, &obj)
            }
        }
    };

    let mut x = x_t.clone();
    let mut iterates: Vec<Tensor> = Vec::with_capacity(cfg.iters);
    let mut trace: Vec<f64> = Vec::with_capacity(cfg.iters);
    for p in 0..cfg.iters {
        let (d_here, gradient) = eval(&x)?;
        if p >= 1 {
            trace.push(d_here); // D of the iterate produced by pass p-1
        }
        let mut step: Vec<f64> = gradient.data.iter().map(|g| g.signum()).collect();
        if step.iter().all(|&s| s == 0.0) && matches!(cfg.kind, AttackKind::MassCenter) {
            // At zero displacement the smoothed center gradient vanishes
            // identically; kick off with a seeded random direction.
            let mut rng = chacha(cfg.seed ^ 0x9e37_79b9_7f4a_7c15 ^ p as u64);
            step = sign_vec(&mut rng, x.len());
        }
        let stepped = Tensor {
            shape: x.shape.clone(),
            data: x
                .data
                .iter()
                .zip(&step)
                .map(|(&v, &s)| v + cfg.alpha * s)
                .collect(),
        };
        x = clip(&stepped, x_t, cfg.epsilon);
        iterates.push(x.clone());
    }
    // D of the final iterate needs one more objective evaluation.
    let final_map = interpret::saliency(&surrogate, &x, cfg.method, &reference, cfg.ig_steps, class)?;
    trace.push(obj.value(&final_map)?);

    // Best prediction-preserving iterate, validated on the exact model.
    let mut selected: Option<(usize, f64)> = None;
    for (idx, cand) in iterates.iter().enumerate() {
        if model.predict(cand)? != class {
            continue;
        }
        if selected.map_or(true, |(_, best_d)| trace[idx] > best_d) {
            selected = Some((idx, trace[idx]));
        }
    }

    let (x_adv, selected_iteration, prediction_preserved) = match selected {
        Some((idx, _)) => (iterates[idx].clone(), idx + 1, true),
        None => (x_t.clone(), 0, false),
    };
    let confidence_after = model.probabilities(&x_adv)?[class];
    let metrics = exact_model_metrics(model, x_t, &x_adv, cfg, class)?;

    Ok(AttackResult {
        x_adv,
        dissimilarity_trace: trace,
        selected_iteration,
        prediction_preserved,
        confidence_before,
        confidence_after,
        metrics,
    })
}

fn random_sign_attack(
    model: &Model,
    x_t: &Tensor,
    cfg: &AttackConfig,
) -> Result<AttackResult, NnError> {
    let class = model.predict(x_t)?;
    let confidence_before = model.probabilities(x_t)?[class];
    let x_adv = random_sign_perturbation(x_t, cfg.epsilon, cfg.seed);
    let prediction_preserved = model.predict(&x_adv)? == class;
    let confidence_after = model.probabilities(&x_adv)?[class];
    let metrics = exact_model_metrics(model, x_t, &x_adv, cfg, class)?;
    Ok(AttackResult {
        x_adv,
        dissimilarity_trace: Vec::new(),
        selected_iteration: 0,
        prediction_preserved,
        confidence_before,
        confidence_after,
        metrics,
    })
}

/// Before/after interpretation similarity, computed on the exact model the
/// perturbed image will actually be judged by.
fn exact_model_metrics(
    model: &Model,
    x_t: &Tensor,
    x_adv: &Tensor,
    cfg: &AttackConfig,
    class: usize,
) -> Result<MetricReport, NnError> {
    let reference = cfg.reference_point(x_t)?;
    let before = interpret::saliency(model, x_t, cfg.method, &reference, cfg.ig_steps, class)?;
    let after = interpret::saliency(model, x_adv, cfg.method, &reference, cfg.ig_steps, class)?;
    metrics::report(&before, &after, cfg.metric_k)
}
