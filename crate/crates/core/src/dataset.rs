//! In-memory labeled image collections used by training, influence
//! computation, and experiment campaigns.

use crate::error::NnError;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self, NnError> {
        if images.len() != labels.len() {
            return Err(NnError::LengthMismatch {
                left: images.len(),
                right: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(NnError::LabelOutOfRange { label: bad });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images[0].shape
    }

    /// New dataset holding the chosen indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Keep only examples of the listed classes, relabeled to 0..n by list position.
    pub fn filter_classes(&self, classes: &[usize]) -> Dataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (img, &lab) in self.images.iter().zip(&self.labels) {
            if let Some(pos) = classes.iter().position(|&c| c == lab) {
                images.push(img.clone());
                labels.push(pos);
            }
        }
        Dataset {
            images,
            labels,
            num_classes: classes.len(),
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let images = (0..6)
            .map(|i| Tensor::from_vec(vec![i as f64, 1.0]))
            .collect();
        Dataset::new(images, vec![0, 1, 2, 0, 1, 2], 3).unwrap()
    }

    #[test]
    fn construction_validates() {
        let imgs = vec![Tensor::from_vec(vec![0.0])];
        assert!(matches!(
            Dataset::new(imgs.clone(), vec![0, 1], 2),
            Err(NnError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new(imgs, vec![5], 2),
            Err(NnError::LabelOutOfRange { label: 5 })
        ));
    }

    #[test]
    fn subset_keeps_order() {
        let d = toy();
        let s = d.subset(&[4, 0]);
        assert_eq!(s.labels, vec![1, 0]);
        assert_eq!(s.images[0].data[0], 4.0);
    }

    #[test]
    fn filter_relabels() {
        let d = toy();
        let f = d.filter_classes(&[2, 0]);
        assert_eq!(f.len(), 4);
        // class 2 -> 0, class 0 -> 1
        assert_eq!(f.labels, vec![1, 0, 1, 0]);
        assert_eq!(f.num_classes, 2);
    }
}
