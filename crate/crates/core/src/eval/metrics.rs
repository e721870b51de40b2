//! Rank-order and linear correlation between predictions and ground truth.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {pred} predictions vs {truth} ground-truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.len() < 2 {
        return Err(MetricError::TooShort(pred.len()));
    }
    if let Some(i) = pred
        .iter()
        .zip(truth)
        .position(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    // one square root is exact more often; fall back if the product leaves
    // the normal range
    let joint = (sxx * syy).sqrt();
    let denom = if joint.is_normal() {
        joint
    } else {
        sxx.sqrt() * syy.sqrt()
    };
    Some((sxy / denom).clamp(-1.0, 1.0))
}

/// Pearson linear correlation. `Ok(None)` when either input is constant.
pub fn plcc(pred: &[f64], truth: &[f64]) -> Result<Option<f64>, MetricError> {
    check(pred, truth)?;
    Ok(pearson_unchecked(pred, truth))
}

/// Spearman rank-order correlation: Pearson over fractional ranks.
/// `Ok(None)` when either rank vector is constant.
pub fn srocc(pred: &[f64], truth: &[f64]) -> Result<Option<f64>, MetricError> {
    check(pred, truth)?;
    Ok(pearson_unchecked(
        &fractional_ranks(pred),
        &fractional_ranks(truth),
    ))
}
