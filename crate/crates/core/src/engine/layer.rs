//! Layer kinds and their shape algebra, plus the convolution kernels
//! shared by the forward, tangent, and adjoint passes.

use crate::error::NnError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
}

/// One network layer. `Dense` weights are `[out, in]`; `Conv2D` weights are
/// `[out_c, in_c, kh, kw]` with symmetric zero padding.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Conv2D {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Flatten,
    Activation(ActivationKind),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2D { .. } => "conv2d",
            Layer::Flatten => "flatten",
            Layer::Activation(_) => "activation",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match self {
            Layer::Dense { weight, .. } => {
                let (out, inp) = (weight.shape[0], weight.shape[1]);
                if input.len() != 1 || input[0] != inp {
                    return Err(NnError::shape("dense input", &[inp], input));
                }
                Ok(vec![out])
            }
            Layer::Conv2D {
                weight,
                stride,
                padding,
                ..
            } => {
                let (oc, ic, kh, kw) = (
                    weight.shape[0],
                    weight.shape[1],
                    weight.shape[2],
                    weight.shape[3],
                );
                if input.len() != 3 || input[0] != ic {
                    return Err(NnError::shape("conv input", &[ic, 0, 0], input));
                }
                let (h, w) = (input[1], input[2]);
                if h + 2 * padding < kh || w + 2 * padding < kw {
                    return Err(NnError::shape("conv kernel exceeds input", &[kh, kw], &[h, w]));
                }
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                Ok(vec![oc, oh, ow])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Activation(_) => Ok(input.to_vec()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2D { weight, bias, .. } => {
                weight.len() + bias.len()
            }
            _ => 0,
        }
    }
}

/// y[o] = sum_i w[o,i] x[i] (+ b[o] when bias given).
pub(crate) fn dense_forward(weight: &Tensor, bias: Option<&Tensor>, x: &Tensor) -> Tensor {
    let (out, inp) = (weight.shape[0], weight.shape[1]);
    let mut y = vec![0.0; out];
    for o in 0..out {
        let row = &weight.data[o * inp..(o + 1) * inp];
        let mut acc = 0.0;
        for i in 0..inp {
            acc += row[i] * x.data[i];
        }
        y[o] = acc + bias.map_or(0.0, |b| b.data[o]);
    }
    Tensor {
        shape: vec![out],
        data: y,
    }
}

/// dx[i] = sum_o w[o,i] dy[o] — the transpose map.
pub(crate) fn dense_input_vjp(weight: &Tensor, dy: &Tensor) -> Tensor {
    let (out, inp) = (weight.shape[0], weight.shape[1]);
    let mut dx = vec![0.0; inp];
    for o in 0..out {
        let g = dy.data[o];
        if g == 0.0 {
            continue;
        }
        let row = &weight.data[o * inp..(o + 1) * inp];
        for i in 0..inp {
            dx[i] += row[i] * g;
        }
    }
    Tensor {
        shape: vec![inp],
        data: dx,
    }
}

pub(crate) fn conv_forward(
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    x: &Tensor,
) -> Tensor {
    let (oc, ic, kh, kw) = (
        weight.shape[0],
        weight.shape[1],
        weight.shape[2],
        weight.shape[3],
    );
    let (h, w) = (x.shape[1], x.shape[2]);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut y = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let base_b = bias.map_or(0.0, |b| b.data[o]);
        for r in 0..oh {
            for q in 0..ow {
                let mut acc = base_b;
                for c in 0..ic {
                    for i in 0..kh {
                        let hh = r * stride + i;
                        if hh < padding || hh - padding >= h {
                            continue;
                        }
                        let xrow = (c * h + (hh - padding)) * w;
                        let wrow = ((o * ic + c) * kh + i) * kw;
                        for j in 0..kw {
                            let ww = q * stride + j;
                            if ww < padding || ww - padding >= w {
                                continue;
                            }
                            acc += weight.data[wrow + j] * x.data[xrow + (ww - padding)];
                        }
                    }
                }
                y[(o * oh + r) * ow + q] = acc;
            }
        }
    }
    Tensor {
        shape: vec![oc, oh, ow],
        data: y,
    }
}

/// Adjoint of the (bias-free) convolution: scatters dy back onto the input grid.
pub(crate) fn conv_input_vjp(
    weight: &Tensor,
    stride: usize,
    padding: usize,
    input_shape: &[usize],
    dy: &Tensor,
) -> Tensor {
    let (oc, ic, kh, kw) = (
        weight.shape[0],
        weight.shape[1],
        weight.shape[2],
        weight.shape[3],
    );
    let (h, w) = (input_shape[1], input_shape[2]);
    let (oh, ow) = (dy.shape[1], dy.shape[2]);
    let mut dx = vec![0.0; ic * h * w];
    for o in 0..oc {
        for r in 0..oh {
            for q in 0..ow {
                let g = dy.data[(o * oh + r) * ow + q];
                if g == 0.0 {
                    continue;
                }
                for c in 0..ic {
                    for i in 0..kh {
                        let hh = r * stride + i;
                        if hh < padding || hh - padding >= h {
                            continue;
                        }
                        let xrow = (c * h + (hh - padding)) * w;
                        let wrow = ((o * ic + c) * kh + i) * kw;
                        for j in 0..kw {
                            let ww = q * stride + j;
                            if ww < padding || ww - padding >= w {
                                continue;
                            }
                            dx[xrow + (ww - padding)] += weight.data[wrow + j] * g;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: dx,
    }
}

/// Parameter gradients of a convolution given upstream dy.
pub(crate) fn conv_param_grads(
    weight: &Tensor,
    stride: usize,
    padding: usize,
    x: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor) {
    let (oc, ic, kh, kw) = (
        weight.shape[0],
        weight.shape[1],
        weight.shape[2],
        weight.shape[3],
    );
    let (h, w) = (x.shape[1], x.shape[2]);
    let (oh, ow) = (dy.shape[1], dy.shape[2]);
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; oc];
    for o in 0..oc {
        for r in 0..oh {
            for q in 0..ow {
                let g = dy.data[(o * oh + r) * ow + q];
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                for c in 0..ic {
                    for i in 0..kh {
                        let hh = r * stride + i;
                        if hh < padding || hh - padding >= h {
                            continue;
                        }
                        let xrow = (c * h + (hh - padding)) * w;
                        let wrow = ((o * ic + c) * kh + i) * kw;
                        for j in 0..kw {
                            let ww = q * stride + j;
                            if ww < padding || ww - padding >= w {
                                continue;
                            }
                            dw[wrow + j] += x.data[xrow + (ww - padding)] * g;
                        }
                    }
                }
            }
        }
    }
    (
        Tensor {
            shape: weight.shape.clone(),
            data: dw,
        },
        Tensor {
            shape: vec![oc],
            data: db,
        },
    )
}
