//! The network container and its differentiation machinery: forward
//! scoring, reverse-mode input/parameter gradients, and exact
//! input-Hessian-vector products via a forward-over-reverse sweep.

use crate::error::NnError;
use crate::tensor::Tensor;

use super::layer::{
    conv_forward, conv_input_vjp, conv_param_grads, dense_forward, dense_input_vjp, Layer,
};
use super::loss::{dloss_dscores, softmax};

/// How `Activation` layers are evaluated. Switching the mode never touches
/// parameters; it only swaps the nonlinearity (and its derivatives).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationMode {
    ExactRelu,
    Softplus { beta: f64 },
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl ActivationMode {
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            ActivationMode::ExactRelu => z.max(0.0),
            ActivationMode::Softplus { beta } => {
                let t = beta * z;
                if t > 30.0 {
                    z + (-t).exp() / beta
                } else if t < -30.0 {
                    t.exp() / beta
                } else {
                    (1.0 + t.exp()).ln() / beta
                }
            }
        }
    }

    pub fn prime(&self, z: f64) -> f64 {
        match *self {
            ActivationMode::ExactRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationMode::Softplus { beta } => logistic(beta * z),
        }
    }

    pub fn second(&self, z: f64) -> f64 {
        match *self {
            ActivationMode::ExactRelu => 0.0,
            ActivationMode::Softplus { beta } => {
                let s = logistic(beta * z);
                beta * s * (1.0 - s)
            }
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, ActivationMode::Softplus { .. })
    }
}

/// Per-layer parameter gradients, aligned with `Model::layers`.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Params { dw: Tensor, db: Tensor },
    None,
}

/// All intermediate values of one forward pass. `nodes[i]` is the input of
/// layer `i`; `nodes[layers.len()]` is the pre-softmax score vector.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub nodes: Vec<Tensor>,
}

impl ForwardCache {
    pub fn scores(&self) -> &Tensor {
        self.nodes.last().expect("cache never empty")
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub activation_mode: ActivationMode,
    pub num_classes: usize,
    pub input_shape: Vec<usize>,
}

impl Model {
    /// Builds and validates: consecutive layer shapes must compose and the
    /// final output must be the class-score vector.
    pub fn new(
        layers: Vec<Layer>,
        activation_mode: ActivationMode,
        num_classes: usize,
        input_shape: Vec<usize>,
    ) -> Result<Self, NnError> {
        let model = Model {
            layers,
            activation_mode,
            num_classes,
            input_shape,
        };
        model.node_shapes()?;
        Ok(model)
    }

    /// Shape of every node, input through scores; errors if layers do not compose.
    pub fn node_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        let out = shapes.last().unwrap();
        if out.len() != 1 || out[0] != self.num_classes {
            return Err(NnError::shape(
                "model output",
                &[self.num_classes],
                out,
            ));
        }
        Ok(shapes)
    }

    /// Same parameters, different nonlinearity evaluation.
    pub fn with_mode(&self, mode: ActivationMode) -> Model {
        let mut m = self.clone();
        m.activation_mode = mode;
        m
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        if x.shape != self.input_shape {
            return Err(NnError::shape("model input", &self.input_shape, &x.shape));
        }
        Ok(())
    }

    fn check_class(&self, class_index: usize) -> Result<(), NnError> {
        if class_index >= self.num_classes {
            return Err(NnError::InvalidClass {
                class: class_index,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    fn apply_layer(&self, layer: &Layer, x: &Tensor) -> Tensor {
        match layer {
            Layer::Dense { weight, bias } => dense_forward(weight, Some(bias), x),
            Layer::Conv2D {
                weight,
                bias,
                stride,
                padding,
            } => conv_forward(weight, Some(bias), *stride, *padding, x),
            Layer::Flatten => Tensor {
                shape: vec![x.len()],
                data: x.data.clone(),
            },
            Layer::Activation(_) => x.map(|v| self.activation_mode.value(v)),
        }
    }

    /// Pre-softmax scores for every class.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, ForwardCache), NnError> {
        self.check_input(x)?;
        let mut nodes = Vec::with_capacity(self.layers.len() + 1);
        nodes.push(x.clone());
        for layer in &self.layers {
            let next = self.apply_layer(layer, nodes.last().unwrap());
            nodes.push(next);
        }
        let scores = nodes.last().unwrap().clone();
        scores.assert_finite("forward scores")?;
        Ok((scores, ForwardCache { nodes }))
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize, NnError> {
        Ok(super::loss::argmax(&self.forward(x)?.data))
    }

    /// Gradient seed at node `node_idx` pulled back to the input through
    /// layers `node_idx-1 .. 0`.
    pub fn backward_from(&self, cache: &ForwardCache, node_idx: usize, seed: Tensor) -> Tensor {
        let mut grad = seed;
        for i in (0..node_idx).rev() {
            grad = self.vjp_layer(&self.layers[i], &cache.nodes[i], &grad);
        }
        grad
    }

    pub(crate) fn vjp_layer(&self, layer: &Layer, node_in: &Tensor, grad_out: &Tensor) -> Tensor {
        match layer {
            Layer::Dense { weight, .. } => dense_input_vjp(weight, grad_out),
            Layer::Conv2D {
                weight,
                stride,
                padding,
                ..
            } => conv_input_vjp(weight, *stride, *padding, &node_in.shape, grad_out),
            Layer::Flatten => Tensor {
                shape: node_in.shape.clone(),
                data: grad_out.data.clone(),
            },
            Layer::Activation(_) => Tensor {
                shape: node_in.shape.clone(),
                data: node_in
                    .data
                    .iter()
                    .zip(&grad_out.data)
                    .map(|(&z, &g)| self.activation_mode.prime(z) * g)
                    .collect(),
            },
        }
    }

    /// Directional (tangent) push of `tangent_in` through one layer; the
    /// affine offset drops out, so biases never appear here.
    pub(crate) fn tangent_layer(&self, layer: &Layer, node_in: &Tensor, tangent_in: &Tensor) -> Tensor {
        match layer {
            Layer::Dense { weight, .. } => dense_forward(weight, None, tangent_in),
            Layer::Conv2D {
                weight,
                stride,
                padding,
                ..
            } => conv_forward(weight, None, *stride, *padding, tangent_in),
            Layer::Flatten => Tensor {
                shape: vec![tangent_in.len()],
                data: tangent_in.data.clone(),
            },
            Layer::Activation(_) => Tensor {
                shape: node_in.shape.clone(),
                data: node_in
                    .data
                    .iter()
                    .zip(&tangent_in.data)
                    .map(|(&z, &t)| self.activation_mode.prime(z) * t)
                    .collect(),
            },
        }
    }

    fn one_hot(&self, class_index: usize) -> Tensor {
        let mut data = vec![0.0; self.num_classes];
        data[class_index] = 1.0;
        Tensor {
            shape: vec![self.num_classes],
            data,
        }
    }

    /// dS_class/dx, same shape as x. For exact-relu models this is the
    /// almost-everywhere gradient (gates at zero treated as closed).
    pub fn grad_input(&self, x: &Tensor, class_index: usize) -> Result<Tensor, NnError> {
        self.check_class(class_index)?;
        let (_, cache) = self.forward_cached(x)?;
        let grad = self.backward_from(&cache, self.layers.len(), self.one_hot(class_index));
        grad.assert_finite("input gradient")
            .map_err(|_| NnError::NonFiniteGradient)?;
        Ok(grad)
    }

    /// Fused gradient and input-Hessian-vector product of S_class at x:
    /// a tangent forward pass carries dx = v, and the reverse sweep carries
    /// both the adjoint and its directional derivative, so the result is the
    /// exact (∇²S)·v rather than a finite-difference estimate.
    pub fn grad_and_hvp(
        &self,
        x: &Tensor,
        v: &Tensor,
        class_index: usize,
    ) -> Result<(Tensor, Tensor), NnError> {
        if !self.activation_mode.is_smooth() {
            return Err(NnError::RequiresSmoothActivation);
        }
        self.check_class(class_index)?;
        if v.shape != x.shape {
            return Err(NnError::shape("hvp direction", &x.shape, &v.shape));
        }
        let (_, cache) = self.forward_cached(x)?;
        let n_layers = self.layers.len();

        // Tangent forward: rnodes[i] = d(nodes[i])/dt along x + t v.
        let mut rnodes = Vec::with_capacity(n_layers + 1);
        rnodes.push(v.clone());
        for i in 0..n_layers {
            let next = self.tangent_layer(&self.layers[i], &cache.nodes[i], &rnodes[i]);
            rnodes.push(next);
        }

        // Reverse sweep carrying (u, ru) = (adjoint, its tangent).
        let mut u = self.one_hot(class_index);
        let mut ru = Tensor::zeros(&[self.num_classes]);
        for i in (0..n_layers).rev() {
            let node_in = &cache.nodes[i];
            match &self.layers[i] {
                Layer::Dense { weight, .. } => {
                    u = dense_input_vjp(weight, &u);
                    ru = dense_input_vjp(weight, &ru);
                }
                Layer::Conv2D {
                    weight,
                    stride,
                    padding,
                    ..
                } => {
                    u = conv_input_vjp(weight, *stride, *padding, &node_in.shape, &u);
                    ru = conv_input_vjp(weight, *stride, *padding, &node_in.shape, &ru);
                }
                Layer::Flatten => {
                    u = Tensor {
                        shape: node_in.shape.clone(),
                        data: u.data.clone(),
                    };
                    ru = Tensor {
                        shape: node_in.shape.clone(),
                        data: ru.data.clone(),
                    };
                }
                Layer::Activation(_) => {
                    let rz = &rnodes[i];
                    let mut new_u = vec![0.0; node_in.len()];
                    let mut new_ru = vec![0.0; node_in.len()];
                    for j in 0..node_in.len() {
                        let z = node_in.data[j];
                        let gp = self.activation_mode.prime(z);
                        let gs = self.activation_mode.second(z);
                        new_ru[j] = gs * rz.data[j] * u.data[j] + gp * ru.data[j];
                        new_u[j] = gp * u.data[j];
                    }
                    u = Tensor {
                        shape: node_in.shape.clone(),
                        data: new_u,
                    };
                    ru = Tensor {
                        shape: node_in.shape.clone(),
                        data: new_ru,
                    };
                }
            }
        }
        u.assert_finite("gradient")
            .map_err(|_| NnError::NonFiniteGradient)?;
        ru.assert_finite("hessian-vector product")
            .map_err(|_| NnError::NonFiniteGradient)?;
        Ok((u, ru))
    }

    /// (∇²_x S_class)·v.
    pub fn hessian_input_vp(
        &self,
        x: &Tensor,
        v: &Tensor,
        class_index: usize,
    ) -> Result<Tensor, NnError> {
        Ok(self.grad_and_hvp(x, v, class_index)?.1)
    }

    /// Parameter gradients for every layer plus the input gradient, given an
    /// upstream gradient at the scores.
    pub fn backward_params(
        &self,
        cache: &ForwardCache,
        upstream: &Tensor,
    ) -> (Vec<LayerGrads>, Tensor) {
        let mut grads = vec![LayerGrads::None; self.layers.len()];
        let mut grad = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let node_in = &cache.nodes[i];
            match &self.layers[i] {
                Layer::Dense { weight, .. } => {
                    let (out, inp) = (weight.shape[0], weight.shape[1]);
                    let mut dw = vec![0.0; out * inp];
                    for o in 0..out {
                        let g = grad.data[o];
                        if g != 0.0 {
                            for j in 0..inp {
                                dw[o * inp + j] = g * node_in.data[j];
                            }
                        }
                    }
                    grads[i] = LayerGrads::Params {
                        dw: Tensor {
                            shape: vec![out, inp],
                            data: dw,
                        },
                        db: grad.clone(),
                    };
                    grad = dense_input_vjp(weight, &grad);
                }
                Layer::Conv2D {
                    weight,
                    stride,
                    padding,
                    ..
                } => {
                    let (dw, db) = conv_param_grads(weight, *stride, *padding, node_in, &grad);
                    grads[i] = LayerGrads::Params { dw, db };
                    grad = conv_input_vjp(weight, *stride, *padding, &node_in.shape, &grad);
                }
                _ => {
                    grad = self.vjp_layer(&self.layers[i], node_in, &grad);
                }
            }
        }
        (grads, grad)
    }

    /// Index of the last dense layer — the "final layer" for influence work.
    pub fn final_dense_index(&self) -> Result<usize, NnError> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense { .. }))
            .ok_or(NnError::UnsupportedLayer {
                kind: "model without a dense layer".to_string(),
            })
    }

    /// Requires the network to end in its final dense layer, so that layer's
    /// output is exactly the score vector (which is what makes the
    /// final-layer Hessian of the cross-entropy loss exact).
    pub fn final_dense_is_last(&self) -> Result<usize, NnError> {
        let idx = self.final_dense_index()?;
        if idx + 1 != self.layers.len() {
            return Err(NnError::UnsupportedLayer {
                kind: "final-layer operations need the network to end in a dense layer"
                    .to_string(),
            });
        }
        Ok(idx)
    }

    /// Flat dimension of the final dense layer's parameters: C*(F+1) laid out
    /// as all weights row-major by class, then all biases.
    pub fn final_param_dim(&self) -> Result<usize, NnError> {
        let idx = self.final_dense_index()?;
        if let Layer::Dense { weight, .. } = &self.layers[idx] {
            Ok(weight.shape[0] * (weight.shape[1] + 1))
        } else {
            unreachable!()
        }
    }

    /// Cross-entropy gradient over the final dense layer's parameters,
    /// flattened (weights row-major by class, then biases).
    pub fn grad_params_final(&self, x: &Tensor, label: usize) -> Result<Tensor, NnError> {
        self.check_class(label)?;
        let (scores, cache) = self.forward_cached(x)?;
        let upstream = Tensor::from_vec(dloss_dscores(&scores.data, label));
        let (grads, _) = self.backward_params(&cache, &upstream);
        let idx = self.final_dense_index()?;
        match &grads[idx] {
            LayerGrads::Params { dw, db } => {
                let mut flat = Vec::with_capacity(dw.len() + db.len());
                flat.extend_from_slice(&dw.data);
                flat.extend_from_slice(&db.data);
                Ok(Tensor {
                    shape: vec![flat.len()],
                    data: flat,
                })
            }
            LayerGrads::None => unreachable!("dense layers always produce grads"),
        }
    }

    /// Softmax probabilities at x.
    pub fn probabilities(&self, x: &Tensor) -> Result<Vec<f64>, NnError> {
        Ok(softmax(&self.forward(x)?.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ActivationKind;
    use crate::rng::{chacha, normal_vec};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
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

    fn small_softplus_net(seed: u64, beta: f64) -> Model {
        let mut rng = chacha(seed);
        Model::new(
            vec![
                dense(&mut rng, 8, 6, 0.8),
                Layer::Activation(ActivationKind::Relu),
                dense(&mut rng, 3, 8, 0.8),
            ],
            ActivationMode::Softplus { beta },
            3,
            vec![6],
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_is_identity_map() {
        let m = Model::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, 0.0]),
            }],
            ActivationMode::ExactRelu,
            2,
            vec![2],
        )
        .unwrap();
        let scores = m.forward(&Tensor::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(scores.data, vec![3.0, 4.0]);
    }

    #[test]
    fn affine_arithmetic() {
        let m = Model::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![1, 2], vec![2.0, 1.0]).unwrap(),
                bias: Tensor::from_vec(vec![1.0]),
            }],
            ActivationMode::ExactRelu,
            1,
            vec![2],
        )
        .unwrap();
        let scores = m.forward(&Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(scores.data, vec![5.0]);
    }

    #[test]
    fn forward_rejects_bad_input_shape() {
        let m = small_softplus_net(1, 10.0);
        assert!(matches!(
            m.forward(&Tensor::from_vec(vec![0.0; 5])),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn linear_model_gradient_is_the_weight_row() {
        let m = Model::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![1, 2], vec![1.0, -3.0]).unwrap(),
                bias: Tensor::from_vec(vec![0.0]),
            }],
            ActivationMode::ExactRelu,
            1,
            vec![2],
        )
        .unwrap();
        for x in [[0.0, 0.0], [2.0, -5.0], [10.0, 3.0]] {
            let g = m.grad_input(&Tensor::from_vec(x.to_vec()), 0).unwrap();
            assert_eq!(g.data, vec![1.0, -3.0]);
        }
    }

    #[test]
    fn single_softplus_unit_gradient_at_zero_is_half() {
        // S = softplus(x) with beta=10: dS/dx at 0 is the logistic at 0.
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
            ActivationMode::Softplus { beta: 10.0 },
            1,
            vec![1],
        )
        .unwrap();
        let g = m.grad_input(&Tensor::from_vec(vec![0.0]), 0).unwrap();
        assert_close(g.data[0], 0.5, 1e-12);
    }

    /// Central finite differences on a random two-layer softplus net.
    #[test]
    fn grad_input_matches_finite_differences() {
        for seed in 0..5u64 {
            let m = small_softplus_net(seed, 3.0);
            let mut rng = chacha(100 + seed);
            let x = Tensor {
                shape: vec![6],
                data: normal_vec(&mut rng, 6, 1.0),
            };
            let g = m.grad_input(&x, 1).unwrap();
            let h = 1e-5;
            for i in 0..6 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.data[i] += h;
                xm.data[i] -= h;
                let fd =
                    (m.forward(&xp).unwrap().data[1] - m.forward(&xm).unwrap().data[1]) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!(
                    ((g.data[i] - fd) / denom).abs() < 1e-6,
                    "seed {seed} dim {i}: {} vs {}",
                    g.data[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn grad_params_final_matches_finite_differences() {
        let m = small_softplus_net(7, 2.0);
        let mut rng = chacha(70);
        let x = Tensor {
            shape: vec![6],
            data: normal_vec(&mut rng, 6, 1.0),
        };
        let label = 2usize;
        let g = m.grad_params_final(&x, label).unwrap();
        // Perturb each final-layer parameter and re-evaluate the loss.
        let h = 1e-6;
        let loss_of = |model: &Model| {
            super::super::loss::cross_entropy(&model.forward(&x).unwrap().data, label)
        };
        let final_idx = m.final_dense_index().unwrap();
        let (out, inp) = match &m.layers[final_idx] {
            Layer::Dense { weight, .. } => (weight.shape[0], weight.shape[1]),
            _ => unreachable!(),
        };
        for flat in 0..(out * (inp + 1)) {
            let mut mp = m.clone();
            let mut mm = m.clone();
            for (model, delta) in [(&mut mp, h), (&mut mm, -h)] {
                if let Layer::Dense { weight, bias } = &mut model.layers[final_idx] {
                    if flat < out * inp {
                        weight.data[flat] += delta;
                    } else {
                        bias.data[flat - out * inp] += delta;
                    }
                }
            }
            let fd = (loss_of(&mp) - loss_of(&mm)) / (2.0 * h);
            let denom = fd.abs().max(1e-6);
            assert!(
                ((g.data[flat] - fd) / denom).abs() < 1e-6,
                "param {flat}: {} vs {fd}",
                g.data[flat]
            );
        }
    }

    #[test]
    fn saturated_cross_entropy_has_vanishing_gradient() {
        // A huge correct-class margin drives p to one-hot and the gradient to zero.
        let m = Model::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, 1], vec![100.0, -100.0]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, 0.0]),
            }],
            ActivationMode::ExactRelu,
            2,
            vec![1],
        )
        .unwrap();
        let g = m
            .grad_params_final(&Tensor::from_vec(vec![1.0]), 0)
            .unwrap();
        assert!(g.norm2() < 1e-10, "norm {}", g.norm2());
    }

    #[test]
    fn equal_scores_two_class_param_gradient() {
        // With both scores equal, p = (1/2, 1/2); for label 0 the residual is
        // (-1/2, +1/2) and each weight gradient is residual times the input.
        let m = Model::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, 0.0]),
            }],
            ActivationMode::ExactRelu,
            2,
            vec![2],
        )
        .unwrap();
        let x = Tensor::from_vec(vec![3.0, -2.0]);
        let g = m.grad_params_final(&x, 0).unwrap();
        // layout: w[0,0], w[0,1], w[1,0], w[1,1], b[0], b[1]
        let want = [-1.5, 1.0, 1.5, -1.0, -0.5, 0.5];
        for (got, want) in g.data.iter().zip(want) {
            assert_close(*got, want, 1e-12);
        }
    }

    #[test]
    fn hvp_requires_smooth_mode() {
        let m = small_softplus_net(3, 5.0).with_mode(ActivationMode::ExactRelu);
        let x = Tensor::from_vec(vec![0.1; 6]);
        let v = Tensor::from_vec(vec![1.0; 6]);
        assert!(matches!(
            m.hessian_input_vp(&x, &v, 0),
            Err(NnError::RequiresSmoothActivation)
        ));
    }

    #[test]
    fn linear_model_has_zero_curvature() {
        let m = Model::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, 0.0]),
            }],
            ActivationMode::Softplus { beta: 10.0 },
            2,
            vec![3],
        )
        .unwrap();
        let x = Tensor::from_vec(vec![0.3, -0.2, 0.9]);
        for v in [[1.0, 0.0, 0.0], [0.2, -4.0, 1.5]] {
            let hv = m
                .hessian_input_vp(&x, &Tensor::from_vec(v.to_vec()), 1)
                .unwrap();
            assert!(hv.norm2() < 1e-14);
        }
    }

    /// Single softplus unit S = g(w.x): the Hessian is g''(w.x) w wᵀ, so with
    /// w=[1,2], x=0, beta=1, v=[1,0]: g''(0)=1/4 and Hv = [0.25, 0.5].
    #[test]
    fn single_unit_hvp_closed_form() {
        let m = Model::new(
            vec![
                Layer::Dense {
                    weight: Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
                    bias: Tensor::from_vec(vec![0.0]),
                },
                Layer::Activation(ActivationKind::Relu),
                Layer::Dense {
                    weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                    bias: Tensor::from_vec(vec![0.0]),
                },
            ],
            ActivationMode::Softplus { beta: 1.0 },
            1,
            vec![2],
        )
        .unwrap();
        let hv = m
            .hessian_input_vp(
                &Tensor::from_vec(vec![0.0, 0.0]),
                &Tensor::from_vec(vec![1.0, 0.0]),
                0,
            )
            .unwrap();
        assert_close(hv.data[0], 0.25, 1e-12);
        assert_close(hv.data[1], 0.5, 1e-12);
    }

    /// Dense Hessian built column-by-column from HVPs must be symmetric and
    /// match finite differences of the gradient.
    #[test]
    fn hvp_matches_dense_finite_difference_hessian() {
        let m = small_softplus_net(9, 2.0);
        let mut rng = chacha(90);
        let x = Tensor {
            shape: vec![6],
            data: normal_vec(&mut rng, 6, 0.7),
        };
        let class = 0;
        let h = 1e-5;
        let mut dense_h = vec![vec![0.0; 6]; 6];
        for j in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[j] += h;
            xm.data[j] -= h;
            let gp = m.grad_input(&xp, class).unwrap();
            let gm = m.grad_input(&xm, class).unwrap();
            for i in 0..6 {
                dense_h[i][j] = (gp.data[i] - gm.data[i]) / (2.0 * h);
            }
        }
        for j in 0..6 {
            let mut v = Tensor::zeros(&[6]);
            v.data[j] = 1.0;
            let hv = m.hessian_input_vp(&x, &v, class).unwrap();
            for i in 0..6 {
                let denom = dense_h[i][j].abs().max(1e-4);
                assert!(
                    ((hv.data[i] - dense_h[i][j]) / denom).abs() < 1e-4,
                    "H[{i}][{j}]: {} vs {}",
                    hv.data[i],
                    dense_h[i][j]
                );
            }
        }
    }

    /// vᵀ(Hu) == uᵀ(Hv) and linearity in v.
    #[test]
    fn hvp_is_symmetric_and_linear() {
        let m = small_softplus_net(13, 4.0);
        let mut rng = chacha(131);
        let x = Tensor {
            shape: vec![6],
            data: normal_vec(&mut rng, 6, 1.0),
        };
        let u = Tensor {
            shape: vec![6],
            data: normal_vec(&mut rng, 6, 1.0),
        };
        let v = Tensor {
            shape: vec![6],
            data: normal_vec(&mut rng, 6, 1.0),
        };
        let hu = m.hessian_input_vp(&x, &u, 2).unwrap();
        let hv = m.hessian_input_vp(&x, &v, 2).unwrap();
        assert_close(v.dot(&hu), u.dot(&hv), 1e-8);
        let w = u.add(&v.scale(2.5));
        let hw = m.hessian_input_vp(&x, &w, 2).unwrap();
        let combo = hu.add(&hv.scale(2.5));
        assert!(hw.linf_dist(&combo) < 1e-9);
    }

    /// As beta grows, softplus forward output approaches the relu output.
    #[test]
    fn softplus_converges_to_relu() {
        for seed in 0..5u64 {
            let relu = small_softplus_net(seed, 1.0).with_mode(ActivationMode::ExactRelu);
            let sharp = relu.with_mode(ActivationMode::Softplus { beta: 1e4 });
            let mut rng = chacha(1000 + seed);
            let x = Tensor {
                shape: vec![6],
                data: normal_vec(&mut rng, 6, 1.0),
            };
            let a = relu.forward(&x).unwrap();
            let b = sharp.forward(&x).unwrap();
            assert!(a.linf_dist(&b) < 1e-3, "gap {}", a.linf_dist(&b));
        }
    }

    #[test]
    fn conv_net_forward_and_hvp_are_consistent() {
        // A conv stage followed by a dense head; checks shape plumbing and the
        // adjoint-based HVP against finite differences of the gradient.
        let mut rng = chacha(21);
        let conv_w = Tensor {
            shape: vec![2, 1, 3, 3],
            data: normal_vec(&mut rng, 18, 0.5),
        };
        let conv_b = Tensor {
            shape: vec![2],
            data: normal_vec(&mut rng, 2, 0.1),
        };
        let m = Model::new(
            vec![
                Layer::Conv2D {
                    weight: conv_w,
                    bias: conv_b,
                    stride: 1,
                    padding: 1,
                },
                Layer::Activation(ActivationKind::Relu),
                Layer::Flatten,
                Layer::Dense {
                    weight: Tensor {
                        shape: vec![2, 32],
                        data: normal_vec(&mut rng, 64, 0.4),
                    },
                    bias: Tensor::from_vec(vec![0.0, 0.0]),
                },
            ],
            ActivationMode::Softplus { beta: 2.0 },
            2,
            vec![1, 4, 4],
        )
        .unwrap();
        let x = Tensor {
            shape: vec![1, 4, 4],
            data: normal_vec(&mut rng, 16, 0.8),
        };
        let v = Tensor {
            shape: vec![1, 4, 4],
            data: normal_vec(&mut rng, 16, 1.0),
        };
        let hv = m.hessian_input_vp(&x, &v, 0).unwrap();
        let h = 1e-5;
        let xp = x.add(&v.scale(h));
        let xm = x.sub(&v.scale(h));
        let fd = m
            .grad_input(&xp, 0)
            .unwrap()
            .sub(&m.grad_input(&xm, 0).unwrap())
            .scale(1.0 / (2.0 * h));
        for i in 0..hv.len() {
            let denom = fd.data[i].abs().max(1e-4);
            assert!(
                ((hv.data[i] - fd.data[i]) / denom).abs() < 1e-4,
                "dim {i}: {} vs {}",
                hv.data[i],
                fd.data[i]
            );
        }
    }
}
