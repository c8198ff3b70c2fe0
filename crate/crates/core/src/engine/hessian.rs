//! Empirical Hessian of the training loss over the final dense layer's
//! parameters, plus a hand-rolled Cholesky solver for the influence math.
//!
//! For a network ending in its final dense layer the cross-entropy loss is
//! linear in those parameters upstream of the softmax, so the per-example
//! Hessian is exactly (diag(p) - p pᵀ) ⊗ ãããᵀ with ã the penultimate
//! activation extended by the bias constant 1 — no approximation involved.

use crate::dataset::Dataset;
use crate::error::NnError;
use crate::tensor::Tensor;

use super::layer::Layer;
use super::loss::softmax;
use super::model::Model;

/// Dense square matrix, row-major.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Lower-triangular Cholesky factor L with A = L Lᵀ.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self, NnError> {
        let n = a.n;
        let mut l = vec![0.0; n * n];
        let scale = (0..n).fold(1e-300f64, |m, i| m.max(a.get(i, i).abs()));
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= 1e-14 * scale {
                return Err(NnError::SingularHessian);
            }
            let dj = d.sqrt();
            l[j * n + j] = dj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / dj;
            }
        }
        Ok(Cholesky { n, l })
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }
}

/// H = (1/n) Σ ∇²_θ L(z_i) + damping·I over the final dense layer's
/// parameters, in the same flat layout as `grad_params_final` (weights
/// row-major by class, then biases).
pub fn hessian_final_layer(
    model: &Model,
    train_set: &Dataset,
    damping: f64,
) -> Result<Matrix, NnError> {
    if train_set.is_empty() {
        return Err(NnError::config("hessian needs a nonempty training set"));
    }
    let final_idx = model.final_dense_is_last()?;
    let (classes, features) = match &model.layers[final_idx] {
        Layer::Dense { weight, .. } => (weight.shape[0], weight.shape[1]),
        _ => unreachable!(),
    };
    let dim = classes * (features + 1);
    let mut h = Matrix::zeros(dim);
    let inv_n = 1.0 / train_set.len() as f64;
    // Flat index of parameter (class c, augmented feature j); j == features is the bias.
    let idx = |c: usize, j: usize| -> usize {
        if j < features {
            c * features + j
        } else {
            classes * features + c
        }
    };
    let mut aug = vec![0.0; features + 1];
    for (x, _) in train_set.examples() {
        let (scores, cache) = model.forward_cached(x)?;
        let p = softmax(&scores.data);
        let a = &cache.nodes[final_idx];
        aug[..features].copy_from_slice(&a.data);
        aug[features] = 1.0;
        for c in 0..classes {
            for c2 in 0..classes {
                let pc = if c == c2 {
                    p[c] * (1.0 - p[c])
                } else {
                    -p[c] * p[c2]
                } * inv_n;
                if pc == 0.0 {
                    continue;
                }
                for (j, &aj) in aug.iter().enumerate() {
                    if aj == 0.0 {
                        continue;
                    }
                    let row = idx(c, j);
                    let coeff = pc * aj;
                    for (j2, &aj2) in aug.iter().enumerate() {
                        let col = idx(c2, j2);
                        h.data[row * dim + col] += coeff * aj2;
                    }
                }
            }
        }
    }
    // Force exact symmetry (the accumulation is symmetric up to rounding)
    // and add the damping ridge.
    for i in 0..dim {
        for j in (i + 1)..dim {
            let avg = 0.5 * (h.get(i, j) + h.get(j, i));
            h.set(i, j, avg);
            h.set(j, i, avg);
        }
        h.data[i * dim + i] += damping;
    }
    Ok(h)
}

/// Materialized tensor of H x for convenience in tests and influence code.
pub fn matvec_tensor(h: &Matrix, x: &Tensor) -> Tensor {
    Tensor {
        shape: vec![h.n],
        data: h.matvec(&x.data),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{cross_entropy, ActivationMode};
    use crate::rng::{chacha, normal_vec, standard_normal};

    fn logistic_2d(seed: u64, n: usize) -> (Model, Dataset) {
        let mut rng = chacha(seed);
        let model = Model::new(
            vec![Layer::Dense {
                weight: Tensor {
                    shape: vec![2, 2],
                    data: normal_vec(&mut rng, 4, 0.8),
                },
                bias: Tensor {
                    shape: vec![2],
                    data: normal_vec(&mut rng, 2, 0.2),
                },
            }],
            ActivationMode::ExactRelu,
            2,
            vec![2],
        )
        .unwrap();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let cx = if label == 0 { -1.0 } else { 1.0 };
            images.push(Tensor::from_vec(vec![
                cx + standard_normal(&mut rng),
                standard_normal(&mut rng),
            ]));
            labels.push(label);
        }
        (model, Dataset::new(images, labels, 2).unwrap())
    }

    #[test]
    fn damping_shifts_the_spectrum() {
        let (model, data) = logistic_2d(1, 12);
        let h0 = hessian_final_layer(&model, &data, 0.0).unwrap();
        let h1 = hessian_final_layer(&model, &data, 0.5).unwrap();
        for i in 0..h0.n {
            assert!((h1.get(i, i) - h0.get(i, i) - 0.5).abs() < 1e-12);
        }
        // Rayleigh quotient with any vector grows by exactly the damping.
        let v: Vec<f64> = (0..h0.n).map(|i| (i as f64 * 0.7).sin()).collect();
        let vn: f64 = v.iter().map(|a| a * a).sum();
        let q0: f64 = h0.matvec(&v).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / vn;
        let q1: f64 = h1.matvec(&v).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / vn;
        assert!((q1 - q0 - 0.5).abs() < 1e-10);
    }

    #[test]
    fn hessian_is_symmetric_and_matches_finite_differences() {
        let (model, data) = logistic_2d(3, 20);
        let h = hessian_final_layer(&model, &data, 0.0).unwrap();
        assert!(h.max_asymmetry() < 1e-12);

        // Finite-difference Hessian of the mean loss over final-layer params.
        let total_loss = |m: &Model| -> f64 {
            data.examples()
                .map(|(x, y)| cross_entropy(&m.forward(x).unwrap().data, y))
                .sum::<f64>()
                / data.len() as f64
        };
        let perturb = |m: &Model, flat: usize, delta: f64| -> Model {
            let mut m = m.clone();
            if let Layer::Dense { weight, bias } = &mut m.layers[0] {
                if flat < 4 {
                    weight.data[flat] += delta;
                } else {
                    bias.data[flat - 4] += delta;
                }
            }
            m
        };
        let step = 1e-4;
        for i in 0..h.n {
            for j in 0..h.n {
                let pp = total_loss(&perturb(&perturb(&model, i, step), j, step));
                let pm = total_loss(&perturb(&perturb(&model, i, step), j, -step));
                let mp = total_loss(&perturb(&perturb(&model, i, -step), j, step));
                let mm = total_loss(&perturb(&perturb(&model, i, -step), j, -step));
                let fd = (pp - pm - mp + mm) / (4.0 * step * step);
                assert!(
                    (h.get(i, j) - fd).abs() < 1e-5,
                    "H[{i}][{j}] = {} vs fd {}",
                    h.get(i, j),
                    fd
                );
            }
        }
    }

    #[test]
    fn cholesky_solves_random_spd_systems() {
        let mut rng = chacha(17);
        for _ in 0..5 {
            let n = 6;
            // A = B Bᵀ + I is symmetric positive definite.
            let b: Vec<f64> = normal_vec(&mut rng, n * n, 1.0);
            let mut a = Matrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    let mut s = if i == j { 1.0 } else { 0.0 };
                    for k in 0..n {
                        s += b[i * n + k] * b[j * n + k];
                    }
                    a.set(i, j, s);
                }
            }
            let rhs = normal_vec(&mut rng, n, 1.0);
            let x = Cholesky::factor(&a).unwrap().solve(&rhs);
            let back = a.matvec(&x);
            for (r, want) in back.iter().zip(&rhs) {
                assert!((r - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        // Rank-one matrix with no damping cannot be factored.
        let mut a = Matrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                a.set(i, j, 1.0);
            }
        }
        assert!(matches!(
            Cholesky::factor(&a),
            Err(NnError::SingularHessian)
        ));
    }

    #[test]
    fn one_point_quadratic_curvature() {
        // Binary logistic on a single example with x = [1]: the score gap is
        // s0 - s1 = (w0-w1) + (b0-b1) and the loss Hessian in that gap
        // direction has curvature p(1-p); check the top-left weight entry
        // equals p(1-p)·x·x exactly.
        let model = Model::new(
            vec![Layer::Dense {
                weight: Tensor::new(vec![2, 1], vec![0.3, -0.3]).unwrap(),
                bias: Tensor::from_vec(vec![0.0, 0.0]),
            }],
            ActivationMode::ExactRelu,
            2,
            vec![1],
        )
        .unwrap();
        let data = Dataset::new(vec![Tensor::from_vec(vec![1.0])], vec![0], 2).unwrap();
        let h = hessian_final_layer(&model, &data, 0.25).unwrap();
        let p = softmax(&model.forward(&data.images[0]).unwrap().data)[0];
        assert!((h.get(0, 0) - (p * (1.0 - p) + 0.25)).abs() < 1e-12);
    }
}
