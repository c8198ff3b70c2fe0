//! Deterministic synthetic image task: ten classes of soft blobs at
//! class-specific locations on a noisy 28×28 canvas. Used as the bundled
//! stand-in when no external dataset directory is supplied, so every
//! campaign is runnable offline and byte-reproducible from its seed.

use crate::dataset::Dataset;
use crate::harness::data::Splits;
use crate::rng::{chacha, standard_normal};
use crate::tensor::Tensor;
use rand::Rng;

const SIDE: usize = 28;

/// Class-c blob center: ten points on a ring around the image center.
fn class_center(class: usize) -> (f64, f64) {
    let angle = 2.0 * std::f64::consts::PI * class as f64 / 10.0;
    (14.0 + 7.0 * angle.cos(), 14.0 + 7.0 * angle.sin())
}

fn add_blob(data: &mut [f64], cy: f64, cx: f64, amp: f64, sigma: f64) {
    let s2 = 2.0 * sigma * sigma;
    for r in 0..SIDE {
        for c in 0..SIDE {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            data[r * SIDE + c] += amp * (-d2 / s2).exp();
        }
    }
}

/// One synthetic image of the given class.
pub fn synth_image(class: usize, rng: &mut impl Rng) -> Tensor {
    let mut data = vec![0.0; SIDE * SIDE];
    // Low-amplitude noise floor gives the gradient texture everywhere.
    for v in data.iter_mut() {
        *v = 0.12 * rng.random::<f64>();
    }
    let (cy, cx) = class_center(class);
    let jy = cy + 1.2 * standard_normal(rng);
    let jx = cx + 1.2 * standard_normal(rng);
    let amp = 0.75 + 0.1 * standard_normal(rng);
    add_blob(&mut data, jy, jx, amp, 2.6);
    // A weaker distractor blob at a uniform location keeps the saliency
    // landscape from collapsing onto a single spot.
    let dy = 3.0 + 22.0 * rng.random::<f64>();
    let dx = 3.0 + 22.0 * rng.random::<f64>();
    add_blob(&mut data, dy, dx, 0.3, 2.0);
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor {
        shape: vec![1, SIDE, SIDE],
        data,
    }
}

/// A balanced synthetic dataset of n images (class = index mod 10).
pub fn synth_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = chacha(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        images.push(synth_image(class, &mut rng));
        labels.push(class);
    }
    Dataset {
        images,
        labels,
        num_classes: 10,
    }
}

/// Standard train/test splits drawn from disjoint seed streams.
pub fn synth_splits(seed: u64) -> Splits {
    Splits {
        train: synth_dataset(2000, seed),
        test: synth_dataset(500, seed ^ 0x5f5f_5f5f_5f5f_5f5f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_dataset(20, 7);
        let b = synth_dataset(20, 7);
        for (x, y) in a.images.iter().zip(b.images.iter()) {
            assert_eq!(x.data, y.data);
        }
        for img in &a.images {
            assert_eq!(img.shape, vec![1, SIDE, SIDE]);
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(a.labels[3], 3);
        let c = synth_dataset(20, 8);
        assert_ne!(a.images[0].data, c.images[0].data);
    }

    #[test]
    fn blob_sits_near_class_center() {
        let mut rng = chacha(3);
        for class in 0..10 {
            let img = synth_image(class, &mut rng);
            let (best, _) = img
                .data
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| {
                    if v > acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                });
            let (r, c) = (best / SIDE, best % SIDE);
            let (cy, cx) = class_center(class);
            let dist = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
            assert!(dist < 6.0, "class {class}: peak {dist} pixels from center");
        }
    }

    #[test]
    fn splits_are_disjoint_streams() {
        let s = synth_splits(11);
        assert_eq!(s.train.len(), 2000);
        assert_eq!(s.test.len(), 500);
        assert_ne!(s.train.images[0].data, s.test.images[0].data);
    }
}
