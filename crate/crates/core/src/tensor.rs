//! Dense n-dimensional arrays of 64-bit reals, row-major.

use crate::error::NnError;

/// Flat array plus shape metadata. The invariant `product(shape) == data.len()`
/// is checked at construction; values are kept finite by all public paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(NnError::shape("tensor construction", &shape, &[data.len()]));
        }
        let t = Tensor { shape, data };
        t.assert_finite("tensor construction")?;
        Ok(t)
    }

    /// 1-d tensor from a literal; panics on non-finite input (test/preset convenience).
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(data.iter().all(|v| v.is_finite()), "non-finite literal");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; count],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let count = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; count],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn assert_finite(&self, context: &str) -> Result<(), NnError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NnError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor, NnError> {
        let count: usize = shape.iter().product();
        if count != self.len() {
            return Err(NnError::shape("reshape", &shape, &self.shape));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.len(), other.len());
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.len(), other.len());
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.len(), other.len());
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn abs(&self) -> Tensor {
        self.map(f64::abs)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn linf_dist(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Unit-norm copy, or None when the norm is (numerically) zero.
    pub fn unit(&self) -> Option<Tensor> {
        let n = self.norm2();
        if n < 1e-300 {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_shape_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(NnError::NonFinite { .. })
        ));
    }

    #[test]
    fn reshape_preserves_count() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let r = t.reshape(vec![2, 2]).unwrap();
        assert_eq!(r.shape, vec![2, 2]);
        assert!(t.reshape(vec![3]).is_err());
    }

    #[test]
    fn arithmetic_basics() {
        let a = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let b = Tensor::from_vec(vec![0.5, 0.5, 0.5]);
        assert_eq!(a.add(&b).data, vec![1.5, -1.5, 3.5]);
        assert_eq!(a.sub(&b).data, vec![0.5, -2.5, 2.5]);
        assert_eq!(a.hadamard(&b).data, vec![0.5, -1.0, 1.5]);
        assert_eq!(a.dot(&b), 1.0);
        assert_eq!(a.abs().data, vec![1.0, 2.0, 3.0]);
        assert_eq!(a.max_abs(), 3.0);
        assert_eq!(a.linf_dist(&b), 2.5);
        assert!((a.norm2() - 14.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn clamp_and_unit() {
        let a = Tensor::from_vec(vec![-1.0, 0.5, 2.0]);
        assert_eq!(a.clamp(0.0, 1.0).data, vec![0.0, 0.5, 1.0]);
        let u = Tensor::from_vec(vec![3.0, 4.0]).unit().unwrap();
        assert!((u.data[0] - 0.6).abs() < 1e-15);
        assert!((u.data[1] - 0.8).abs() < 1e-15);
        assert!(Tensor::zeros(&[3]).unit().is_none());
    }
}
