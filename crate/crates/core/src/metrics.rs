//! Similarity measures between two importance maps: rank correlation,
//! top-k overlap, and shift of the map's center of mass.

use crate::error::NnError;
use crate::interpret::SaliencyMap;
use crate::tensor::Tensor;

/// Summary of how much an interpretation moved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub rank_correlation: f64,
    pub topk_intersection: f64,
    pub k: usize,
    pub center_shift: f64,
}

/// Fractional ranks (1-based); ties get the average of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average rank in 1-based terms.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank correlation of two equal-length score vectors.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, NnError> {
    if a.len() != b.len() {
        return Err(NnError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(NnError::DegenerateInput);
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    // Identical or exactly mirrored rankings are ±1 by definition; skip the
    // floating-point round trip so equality checks downstream stay exact.
    let n1 = (a.len() + 1) as f64;
    if ra == rb {
        if ra.iter().all(|&r| r == ra[0]) {
            return Err(NnError::DegenerateInput);
        }
        return Ok(1.0);
    }
    if ra.iter().zip(&rb).all(|(x, y)| x + y == n1) {
        return Ok(-1.0);
    }
    pearson(&ra, &rb)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, NnError> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va < 1e-24 || vb < 1e-24 {
        return Err(NnError::DegenerateInput);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Indices of the k largest values, descending; ties resolved toward the
/// lower index.
pub fn topk_indices(values: &[f64], k: usize) -> Result<Vec<usize>, NnError> {
    if k == 0 || k > values.len() {
        return Err(NnError::InvalidK {
            k,
            len: values.len(),
        });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// |topk(a) ∩ topk(b)| / k.
pub fn topk_intersection(a: &[f64], b: &[f64], k: usize) -> Result<f64, NnError> {
    if a.len() != b.len() {
        return Err(NnError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let ta = topk_indices(a, k)?;
    let tb = topk_indices(b, k)?;
    let set: std::collections::HashSet<usize> = ta.into_iter().collect();
    let hits = tb.iter().filter(|i| set.contains(i)).count();
    Ok(hits as f64 / k as f64)
}

/// Collapses [C,H,W] to [H,W] by summing channels; [H,W] passes through.
pub fn aggregate_channels(t: &Tensor) -> Result<Tensor, NnError> {
    match t.shape.len() {
        2 => Ok(t.clone()),
        3 => {
            let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
            let mut out = vec![0.0; h * w];
            for ch in 0..c {
                for (o, v) in out.iter_mut().zip(&t.data[ch * h * w..(ch + 1) * h * w]) {
                    *o += v;
                }
            }
            Ok(Tensor {
                shape: vec![h, w],
                data: out,
            })
        }
        _ => Err(NnError::shape("channel aggregation", &[0, 0], &t.shape)),
    }
}

/// Importance-weighted mean pixel position, 1-based (row, col), channels
/// summed first.
pub fn center_of_mass(map: &SaliencyMap) -> Result<(f64, f64), NnError> {
    let grid = aggregate_channels(&map.values)?;
    let (h, w) = (grid.shape[0], grid.shape[1]);
    let total = grid.sum();
    if total < 1e-12 {
        return Err(NnError::DegenerateSaliency);
    }
    let mut cr = 0.0;
    let mut cc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = grid.data[i * w + j];
            cr += v * (i + 1) as f64;
            cc += v * (j + 1) as f64;
        }
    }
    Ok((cr / total, cc / total))
}

/// Euclidean distance between the two centers of mass.
pub fn center_shift(before: &SaliencyMap, after: &SaliencyMap) -> Result<f64, NnError> {
    let (r0, c0) = center_of_mass(before)?;
    let (r1, c1) = center_of_mass(after)?;
    Ok(((r1 - r0).powi(2) + (c1 - c0).powi(2)).sqrt())
}

/// All three measures between an original map and a perturbed one.
pub fn report(before: &SaliencyMap, after: &SaliencyMap, k: usize) -> Result<MetricReport, NnError> {
    Ok(MetricReport {
        rank_correlation: spearman(&before.values.data, &after.values.data)?,
        topk_intersection: topk_intersection(&before.values.data, &after.values.data, k)?,
        k,
        center_shift: center_shift(before, after)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpret::SaliencyMethod;
    use crate::rng::chacha;
    use proptest::prelude::*;
    use rand::Rng;

    fn map(shape: Vec<usize>, data: Vec<f64>) -> SaliencyMap {
        SaliencyMap {
            values: Tensor { shape, data },
            method: SaliencyMethod::SimpleGradient,
        }
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn spearman_identity_and_reversal() {
        let a = [0.1, 0.4, 0.2, 0.9];
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        let rev = [0.9, 0.2, 0.4, 0.1];
        assert_eq!(spearman(&a, &rev).unwrap(), -1.0);
    }

    #[test]
    fn spearman_tied_pair_value() {
        // Ranks: [1, 2.5, 2.5, 4] vs [1, 3, 2, 4] → 4.5 / sqrt(4.5 * 5) .
        let rho = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.9486832980505138).abs() < 1e-15);
    }

    #[test]
    fn spearman_rejects_degenerate_and_mismatched() {
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(NnError::DegenerateInput)
        ));
        assert!(matches!(
            spearman(&[1.0], &[1.0]),
            Err(NnError::DegenerateInput)
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(NnError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let mut rng = chacha(3);
        for _ in 0..10 {
            let a: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
            let bt: Vec<f64> = b.iter().map(|v| (3.0 * v).exp()).collect();
            let r1 = spearman(&a, &b).unwrap();
            let r2 = spearman(&a, &bt).unwrap();
            assert!((r1 - r2).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_basics_and_ties() {
        assert_eq!(topk_indices(&[0.1, 0.5, 0.3, 0.5], 2).unwrap(), vec![1, 3]);
        // Ties prefer the lower index.
        assert_eq!(topk_indices(&[0.5, 0.5, 0.5], 2).unwrap(), vec![0, 1]);
        assert!(matches!(
            topk_indices(&[1.0], 0),
            Err(NnError::InvalidK { .. })
        ));
        assert!(matches!(
            topk_indices(&[1.0], 2),
            Err(NnError::InvalidK { .. })
        ));
    }

    #[test]
    fn topk_intersection_examples() {
        let a = [0.4, 0.3, 0.2, 0.1];
        let b = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(topk_intersection(&a, &a, 2).unwrap(), 1.0);
        assert_eq!(topk_intersection(&a, &b, 2).unwrap(), 0.0);
        assert_eq!(topk_intersection(&a, &b, 4).unwrap(), 1.0);
        let c = [0.4, 0.3, 0.1, 0.2];
        assert_eq!(topk_intersection(&a, &c, 2).unwrap(), 1.0);
        assert_eq!(topk_intersection(&a, &[0.1, 0.4, 0.3, 0.2], 2).unwrap(), 0.5);
    }

    proptest! {
        /// Brute-force oracle: repeatedly extract the maximum, preferring
        /// the lowest index, then compare the overlap count.
        #[test]
        fn topk_matches_naive_selection(values in proptest::collection::vec(0.0f64..1.0, 2..30), kk in 1usize..10) {
            let k = kk.min(values.len());
            let naive = {
                let mut left: Vec<usize> = (0..values.len()).collect();
                let mut picked = Vec::new();
                for _ in 0..k {
                    let mut best = 0;
                    for (slot, &idx) in left.iter().enumerate() {
                        if values[idx] > values[left[best]] {
                            best = slot;
                        }
                    }
                    picked.push(left.remove(best));
                }
                picked
            };
            prop_assert_eq!(topk_indices(&values, k).unwrap(), naive);
        }
    }

    #[test]
    fn uniform_center_is_grid_middle() {
        let m = map(vec![3, 3], vec![1.0 / 9.0; 9]);
        let (r, c) = center_of_mass(&m).unwrap();
        assert!((r - 2.0).abs() < 1e-12 && (c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_center_and_shift() {
        let mut a = vec![0.0; 9];
        a[0] = 1.0; // (1,1)
        let mut b = vec![0.0; 9];
        b[8] = 1.0; // (3,3)
        let ma = map(vec![3, 3], a);
        let mb = map(vec![3, 3], b);
        assert_eq!(center_of_mass(&ma).unwrap(), (1.0, 1.0));
        let shift = center_shift(&ma, &mb).unwrap();
        assert!((shift - 8.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn channel_aggregation_sums_channels() {
        let t = Tensor::new(vec![2, 2, 2], vec![0.1, 0.2, 0.3, 0.4, 0.05, 0.1, 0.15, 0.2]).unwrap();
        let g = aggregate_channels(&t).unwrap();
        assert_eq!(g.shape, vec![2, 2]);
        for (got, want) in g.data.iter().zip([0.15, 0.3, 0.45, 0.6]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(aggregate_channels(&Tensor::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn full_report_on_small_maps() {
        let a = map(vec![2, 2], vec![0.4, 0.3, 0.2, 0.1]);
        let b = map(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]);
        let r = report(&a, &b, 2).unwrap();
        assert_eq!(r.rank_correlation, -1.0);
        assert_eq!(r.topk_intersection, 0.0);
        assert_eq!(r.k, 2);
        assert!(r.center_shift > 0.0);
    }
}
