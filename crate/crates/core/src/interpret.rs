//! Feature-importance interpretations: simple gradient, integrated
//! gradients, and the rescale-rule variant of reference-based relevance
//! propagation. All maps are absolute-valued and normalized to sum 1.

use crate::dataset::Dataset;
use crate::engine::{ForwardCache, Layer, Model};
use crate::error::NnError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyMethod {
    SimpleGradient,
    IntegratedGradients,
    DeepLift,
}

impl SaliencyMethod {
    pub fn parse(s: &str) -> Result<Self, NnError> {
        match s {
            "sg" | "simple_gradient" => Ok(SaliencyMethod::SimpleGradient),
            "ig" | "integrated_gradients" => Ok(SaliencyMethod::IntegratedGradients),
            "dl" | "deeplift" => Ok(SaliencyMethod::DeepLift),
            other => Err(NnError::config(format!("unknown saliency method '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SaliencyMethod::SimpleGradient => "sg",
            SaliencyMethod::IntegratedGradients => "ig",
            SaliencyMethod::DeepLift => "dl",
        }
    }
}

/// Per-feature importance scores over an input; nonnegative, sums to 1.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub values: Tensor,
    pub method: SaliencyMethod,
}

impl SaliencyMap {
    /// Normalizes the (already nonnegative) raw scores into a map.
    pub fn from_raw(raw: Tensor, method: SaliencyMethod) -> Result<Self, NnError> {
        Ok(SaliencyMap {
            values: normalize(&raw)?,
            method,
        })
    }
}

/// The anchor x⁰ that integrated gradients and rescale propagation measure from.
#[derive(Debug, Clone)]
pub struct ReferencePoint {
    pub x0: Tensor,
    pub kind: RefKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    Zeros,
    PixelwiseMean,
    ChannelwiseMean,
    Custom,
}

impl ReferencePoint {
    pub fn zeros(shape: &[usize]) -> Self {
        ReferencePoint {
            x0: Tensor::zeros(shape),
            kind: RefKind::Zeros,
        }
    }

    /// Mean image of the dataset (per pixel, per channel).
    pub fn pixelwise_mean(data: &Dataset) -> Self {
        let shape = data.image_shape().to_vec();
        let mut acc = vec![0.0; data.images[0].len()];
        for img in &data.images {
            for (a, v) in acc.iter_mut().zip(&img.data) {
                *a += v;
            }
        }
        let n = data.len() as f64;
        ReferencePoint {
            x0: Tensor {
                shape,
                data: acc.into_iter().map(|v| v / n).collect(),
            },
            kind: RefKind::PixelwiseMean,
        }
    }

    /// One scalar mean per channel, broadcast over the spatial grid.
    pub fn channelwise_mean(data: &Dataset) -> Self {
        let shape = data.image_shape().to_vec();
        let (c, hw) = if shape.len() == 3 {
            (shape[0], shape[1] * shape[2])
        } else {
            (1, shape.iter().product())
        };
        let mut means = vec![0.0; c];
        for img in &data.images {
            for ch in 0..c {
                means[ch] += img.data[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
        }
        let denom = (data.len() * hw) as f64;
        let mut x0 = vec![0.0; c * hw];
        for ch in 0..c {
            let m = means[ch] / denom;
            x0[ch * hw..(ch + 1) * hw].fill(m);
        }
        ReferencePoint {
            x0: Tensor { shape, data: x0 },
            kind: RefKind::ChannelwiseMean,
        }
    }

    pub fn custom(x0: Tensor) -> Self {
        ReferencePoint {
            x0,
            kind: RefKind::Custom,
        }
    }
}

/// Divides nonnegative raw scores by their sum.
pub fn normalize(raw: &Tensor) -> Result<Tensor, NnError> {
    let total = raw.sum();
    if total < 1e-12 {
        return Err(NnError::DegenerateSaliency);
    }
    Ok(raw.scale(1.0 / total))
}

/// |∇_x S_class| normalized.
pub fn simple_gradient_saliency(
    model: &Model,
    x: &Tensor,
    class_index: usize,
) -> Result<SaliencyMap, NnError> {
    let grad = model.grad_input(x, class_index)?;
    SaliencyMap::from_raw(grad.abs(), SaliencyMethod::SimpleGradient)
}

/// Signed attributions Δx_j/M · Σ_{k=1..M} ∂S/∂x_j evaluated along the
/// straight path from the reference to x.
pub fn integrated_gradients_signed(
    model: &Model,
    x: &Tensor,
    reference: &ReferencePoint,
    steps: usize,
    class_index: usize,
) -> Result<Tensor, NnError> {
    if steps == 0 {
        return Err(NnError::config("integrated gradients need at least one step"));
    }
    if reference.x0.shape != x.shape {
        return Err(NnError::shape("reference point", &x.shape, &reference.x0.shape));
    }
    let delta = x.sub(&reference.x0);
    let mut grad_sum = Tensor::zeros(&x.shape);
    for k in 1..=steps {
        let t = k as f64 / steps as f64;
        let point = reference.x0.add(&delta.scale(t));
        let g = model.grad_input(&point, class_index)?;
        grad_sum = grad_sum.add(&g);
    }
    Ok(delta.hadamard(&grad_sum).scale(1.0 / steps as f64))
}

pub fn integrated_gradients(
    model: &Model,
    x: &Tensor,
    reference: &ReferencePoint,
    steps: usize,
    class_index: usize,
) -> Result<SaliencyMap, NnError> {
    let signed = integrated_gradients_signed(model, x, reference, steps, class_index)?;
    SaliencyMap::from_raw(signed.abs(), SaliencyMethod::IntegratedGradients)
}

/// Internals of one rescale-rule backward pass, kept around because the
/// attack gradient needs the per-level multipliers, not just the result.
#[derive(Debug)]
pub(crate) struct RescalePass {
    /// Multipliers at the input level; contributions are m ⊙ (x - x⁰).
    pub multipliers: Tensor,
    /// Forward caches at x and at the reference.
    pub cache_x: ForwardCache,
    pub cache_ref: ForwardCache,
    /// Per activation layer, in descending layer order: (layer index,
    /// downward multiplier arriving at that activation's output).
    pub act_levels: Vec<(usize, Tensor)>,
}

/// Near-zero input-difference guard for the rescale multiplier.
pub(crate) const RESCALE_GUARD: f64 = 1e-7;

pub(crate) fn rescale_pass(
    model: &Model,
    x: &Tensor,
    reference: &ReferencePoint,
    class_index: usize,
) -> Result<RescalePass, NnError> {
    if reference.x0.shape != x.shape {
        return Err(NnError::shape("reference point", &x.shape, &reference.x0.shape));
    }
    if class_index >= model.num_classes {
        return Err(NnError::InvalidClass {
            class: class_index,
            num_classes: model.num_classes,
        });
    }
    let (_, cache_x) = model.forward_cached(x)?;
    let (_, cache_ref) = model.forward_cached(&reference.x0)?;

    let mut m = Tensor::zeros(&[model.num_classes]);
    m.data[class_index] = 1.0;
    let mut act_levels = Vec::new();
    for i in (0..model.layers.len()).rev() {
        let z = &cache_x.nodes[i];
        match &model.layers[i] {
            Layer::Activation(_) => {
                let z0 = &cache_ref.nodes[i];
                act_levels.push((i, m.clone()));
                let mode = model.activation_mode;
                let data = z
                    .data
                    .iter()
                    .zip(&z0.data)
                    .zip(&m.data)
                    .map(|((&zi, &z0i), &mi)| {
                        let rho = if (zi - z0i).abs() < RESCALE_GUARD {
                            mode.prime(z0i)
                        } else {
                            (mode.value(zi) - mode.value(z0i)) / (zi - z0i)
                        };
                        rho * mi
                    })
                    .collect();
                m = Tensor {
                    shape: z.shape.clone(),
                    data,
                };
            }
            // Linear layers propagate multipliers exactly like gradients.
            Layer::Dense { weight, .. } => {
                m = crate::engine::dense_input_vjp(weight, &m);
            }
            Layer::Conv2D {
                weight,
                stride,
                padding,
                ..
            } => {
                m = crate::engine::conv_input_vjp(weight, *stride, *padding, &z.shape, &m);
            }
            Layer::Flatten => {
                m = Tensor {
                    shape: z.shape.clone(),
                    data: m.data.clone(),
                };
            }
        }
    }
    Ok(RescalePass {
        multipliers: m,
        cache_x,
        cache_ref,
        act_levels,
    })
}

/// Signed rescale contributions m ⊙ (x - x⁰); they sum to S(x) - S(x⁰).
pub fn deeplift_signed(
    model: &Model,
    x: &Tensor,
    reference: &ReferencePoint,
    class_index: usize,
) -> Result<Tensor, NnError> {
    let pass = rescale_pass(model, x, reference, class_index)?;
    Ok(pass.multipliers.hadamard(&x.sub(&reference.x0)))
}

pub fn deeplift_rescale(
    model: &Model,
    x: &Tensor,
    reference: &ReferencePoint,
    class_index: usize,
) -> Result<SaliencyMap, NnError> {
    let signed = deeplift_signed(model, x, reference, class_index)?;
    SaliencyMap::from_raw(signed.abs(), SaliencyMethod::DeepLift)
}

/// Dispatcher over the three methods with one call surface.
pub fn saliency(
    model: &Model,
    x: &Tensor,
    method: SaliencyMethod,
    reference: &ReferencePoint,
    ig_steps: usize,
    class_index: usize,
) -> Result<SaliencyMap, NnError> {
    match method {
        SaliencyMethod::SimpleGradient => simple_gradient_saliency(model, x, class_index),
        SaliencyMethod::IntegratedGradients => {
            integrated_gradients(model, x, reference, ig_steps, class_index)
        }
        SaliencyMethod::DeepLift => deeplift_rescale(model, x, reference, class_index),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ActivationKind, ActivationMode};
    use crate::rng::{chacha, normal_vec};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn linear_model(w: Vec<f64>, d: usize) -> Model {
        Model::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![1, d], w).unwrap(),
                bias: Tensor::from_vec(vec![0.0]),
            }],
            ActivationMode::ExactRelu,
            1,
            vec![d],
        )
        .unwrap()
    }

    fn dense(rng: &mut ChaCha8Rng, out: usize, inp: usize, scale: f64) -> Layer {
        Layer::Dense {
            weight: Tensor {
                shape: vec![out, inp],
                data: normal_vec(rng, out * inp, scale),
            },
            bias: Tensor {
                shape: vec![out],
                data: normal_vec(rng, out, 0.1),
            },
        }
    }

    fn two_layer(seed: u64, beta: f64, scale: f64) -> Model {
        let mut rng = chacha(seed);
        Model::new(
            vec![
                dense(&mut rng, 10, 6, scale),
                Layer::Activation(ActivationKind::Relu),
                dense(&mut rng, 4, 10, scale),
            ],
            ActivationMode::Softplus { beta },
            4,
            vec![6],
        )
        .unwrap()
    }

    #[test]
    fn normalize_basics() {
        let n = normalize(&Tensor::from_vec(vec![1.0, 1.0, 2.0])).unwrap();
        assert_eq!(n.data, vec![0.25, 0.25, 0.5]);
        assert_eq!(normalize(&Tensor::from_vec(vec![5.0])).unwrap().data, vec![1.0]);
        assert!(matches!(
            normalize(&Tensor::from_vec(vec![0.0, 0.0])),
            Err(NnError::DegenerateSaliency)
        ));
    }

    #[test]
    fn linear_gradient_saliency_is_normalized_weights() {
        let m = linear_model(vec![1.0, -3.0], 2);
        for x in [[0.0, 0.0], [5.0, -7.0]] {
            let s = simple_gradient_saliency(&m, &Tensor::from_vec(x.to_vec()), 0).unwrap();
            assert_eq!(s.values.data, vec![0.25, 0.75]);
        }
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let m = linear_model(vec![0.0, 0.0], 2);
        assert!(matches!(
            simple_gradient_saliency(&m, &Tensor::from_vec(vec![1.0, 2.0]), 0),
            Err(NnError::DegenerateSaliency)
        ));
    }

    #[test]
    fn gradient_saliency_matches_finite_differences() {
        let m = two_layer(4, 4.0, 0.7);
        let x = Tensor {
            shape: vec![6],
            data: normal_vec(&mut chacha(44), 6, 1.0),
        };
        let s = simple_gradient_saliency(&m, &x, 2).unwrap();
        let h = 1e-5;
        let mut fd = vec![0.0; 6];
        for i in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[i] += h;
            xm.data[i] -= h;
            fd[i] =
                (m.forward(&xp).unwrap().data[2] - m.forward(&xm).unwrap().data[2]) / (2.0 * h);
        }
        let total: f64 = fd.iter().map(|v| v.abs()).sum();
        for i in 0..6 {
            assert_close(s.values.data[i], fd[i].abs() / total, 1e-7);
        }
    }

    #[test]
    fn ig_linear_model_single_step_is_exact() {
        let m = linear_model(vec![2.0, 1.0], 2);
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let r = ReferencePoint::zeros(&[2]);
        let signed = integrated_gradients_signed(&m, &x, &r, 1, 0).unwrap();
        assert_eq!(signed.data, vec![2.0, 2.0]);
        let s = integrated_gradients(&m, &x, &r, 1, 0).unwrap();
        assert_eq!(s.values.data, vec![0.5, 0.5]);
    }

    #[test]
    fn ig_at_reference_is_degenerate() {
        let m = linear_model(vec![2.0, 1.0], 2);
        let x = Tensor::from_vec(vec![0.0, 0.0]);
        let r = ReferencePoint::zeros(&[2]);
        assert!(matches!(
            integrated_gradients(&m, &x, &r, 10, 0),
            Err(NnError::DegenerateSaliency)
        ));
    }

    /// Completeness: signed attributions sum to S(x) - S(x⁰) up to the
    /// Riemann-sum error of the path integral. The gap is measured against
    /// the class whose score moved the most, so the relative tolerance is
    /// not divided by a near-cancelling denominator.
    #[test]
    fn ig_completeness_on_smooth_nets() {
        for seed in 0..20u64 {
            let m = two_layer(seed, 0.5, 0.3);
            let mut rng = chacha(900 + seed);
            let x = Tensor {
                shape: vec![6],
                data: normal_vec(&mut rng, 6, 0.8),
            };
            let r = ReferencePoint::zeros(&[6]);
            let sx = m.forward(&x).unwrap();
            let s0 = m.forward(&r.x0).unwrap();
            let class = (0..4)
                .max_by(|&a, &b| {
                    let da = (sx.data[a] - s0.data[a]).abs();
                    let db = (sx.data[b] - s0.data[b]).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            let signed = integrated_gradients_signed(&m, &x, &r, 300, class).unwrap();
            let delta_s = sx.data[class] - s0.data[class];
            let rel = (signed.sum() - delta_s).abs() / delta_s.abs();
            assert!(rel < 1e-3, "seed {seed}: relative gap {rel}");
        }
    }

    #[test]
    fn rescale_on_identity_activation_net_equals_ig() {
        // With no nonlinearity both reduce to |Δx ⊙ w|.
        let m = linear_model(vec![1.5, -0.5, 2.0], 3);
        let x = Tensor::from_vec(vec![0.2, 0.9, -0.4]);
        let r = ReferencePoint::zeros(&[3]);
        let a = integrated_gradients(&m, &x, &r, 7, 0).unwrap();
        let b = deeplift_rescale(&m, &x, &r, 0).unwrap();
        assert!(a.values.linf_dist(&b.values) < 1e-12);
    }

    #[test]
    fn single_relu_unit_multiplier() {
        // S = relu(x); from x⁰ = -1 to x = 1 the multiplier is
        // (1 - 0) / (1 - (-1)) = 0.5 and the contribution is exactly ΔS.
        let m = Model::new(
            vec![
                Layer::Dense {
                    weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                    bias: Tensor::from_vec(vec![0.0]),
                },
                Layer::Activation(ActivationKind::Relu),
                Layer::Dense {
                    weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                    bias: Tensor::from_vec(vec![0.0]),
                },
            ],
            ActivationMode::ExactRelu,
            1,
            vec![1],
        )
        .unwrap();
        let r = ReferencePoint::custom(Tensor::from_vec(vec![-1.0]));
        let signed = deeplift_signed(&m, &Tensor::from_vec(vec![1.0]), &r, 0).unwrap();
        assert_close(signed.data[0], 1.0, 1e-12);
    }

    /// Summation-to-delta holds exactly on random relu nets.
    #[test]
    fn rescale_summation_to_delta() {
        for seed in 0..20u64 {
            let mut rng = chacha(seed);
            let m = Model::new(
                vec![
                    dense(&mut rng, 12, 8, 0.8),
                    Layer::Activation(ActivationKind::Relu),
                    dense(&mut rng, 9, 12, 0.8),
                    Layer::Activation(ActivationKind::Relu),
                    dense(&mut rng, 5, 9, 0.8),
                ],
                ActivationMode::ExactRelu,
                5,
                vec![8],
            )
            .unwrap();
            let x = Tensor {
                shape: vec![8],
                data: normal_vec(&mut rng, 8, 1.0),
            };
            let r = ReferencePoint::custom(Tensor {
                shape: vec![8],
                data: normal_vec(&mut rng, 8, 1.0),
            });
            let class = seed as usize % 5;
            let signed = deeplift_signed(&m, &x, &r, class).unwrap();
            let delta_s = m.forward(&x).unwrap().data[class]
                - m.forward(&r.x0).unwrap().data[class];
            assert!(
                (signed.sum() - delta_s).abs() < 1e-6 * delta_s.abs().max(1.0),
                "seed {seed}: {} vs {}",
                signed.sum(),
                delta_s
            );
        }
    }

    /// Multiplying all scores by c > 0 leaves every normalized map unchanged.
    #[test]
    fn scale_invariance_of_all_methods() {
        let m = two_layer(8, 2.0, 0.6);
        let mut scaled = m.clone();
        if let Layer::Dense { weight, bias } = &mut scaled.layers[2] {
            *weight = weight.scale(13.0);
            *bias = bias.scale(13.0);
        }
        let x = Tensor {
            shape: vec![6],
            data: normal_vec(&mut chacha(77), 6, 1.0),
        };
        let r = ReferencePoint::zeros(&[6]);
        for method in [
            SaliencyMethod::SimpleGradient,
            SaliencyMethod::IntegratedGradients,
            SaliencyMethod::DeepLift,
        ] {
            let a = saliency(&m, &x, method, &r, 50, 3).unwrap();
            let b = saliency(&scaled, &x, method, &r, 50, 3).unwrap();
            assert!(
                a.values.linf_dist(&b.values) < 1e-9,
                "{:?} changed under score scaling",
                method
            );
        }
    }

    /// For a linear model with zero reference and unit input, all three
    /// methods coincide exactly.
    #[test]
    fn methods_agree_on_linear_model_at_ones() {
        let m = linear_model(vec![2.0, -1.0, 0.5, 3.0], 4);
        let x = Tensor::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let r = ReferencePoint::zeros(&[4]);
        let sg = simple_gradient_saliency(&m, &x, 0).unwrap();
        let ig = integrated_gradients(&m, &x, &r, 25, 0).unwrap();
        let dl = deeplift_rescale(&m, &x, &r, 0).unwrap();
        assert!(sg.values.linf_dist(&ig.values) < 1e-12);
        assert!(sg.values.linf_dist(&dl.values) < 1e-12);
    }

    #[test]
    fn reference_kinds_have_expected_shapes() {
        let images = vec![
            Tensor::new(vec![2, 2, 2], vec![0.0, 1.0, 0.0, 1.0, 0.5, 0.5, 0.5, 0.5]).unwrap(),
            Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.5, 0.5]).unwrap(),
        ];
        let data = Dataset::new(images, vec![0, 1], 2).unwrap();
        let pw = ReferencePoint::pixelwise_mean(&data);
        assert_eq!(pw.x0.data, vec![0.5; 8]);
        let cw = ReferencePoint::channelwise_mean(&data);
        assert_eq!(cw.x0.data, vec![0.5; 8]);
    }
}
