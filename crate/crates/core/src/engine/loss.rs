//! Cross-entropy loss over pre-softmax scores, numerically stabilized.

pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + scores.iter().map(|&s| (s - m).exp()).sum::<f64>().ln()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|&s| (s - lse).exp()).collect()
}

/// -log softmax(scores)[label]
pub fn cross_entropy(scores: &[f64], label: usize) -> f64 {
    log_sum_exp(scores) - scores[label]
}

/// dL/dscores = p - onehot(label)
pub fn dloss_dscores(scores: &[f64], label: usize) -> Vec<f64> {
    let mut p = softmax(scores);
    p[label] -= 1.0;
    p
}

/// Argmax with the lowest index winning ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
