//! Exact penalized change-point search (PELT) with an L2 segment cost.

use super::outliers::quantile;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChangePointError {
    #[error("need at least 4 points, got {0}")]
    InsufficientData(usize),
    #[error("penalty must be positive and finite, got {0}")]
    InvalidPenalty(f64),
    #[error("minimum segment length must be at least 1")]
    InvalidMinSize,
    #[error("series contains non-finite values")]
    NonFinite,
}

/// Sum of squared deviations from the segment mean, from prefix sums over
/// mean-centered values.
struct L2Cost {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl L2Cost {
    fn new(y: &[f64]) -> Self {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let mut s1 = Vec::with_capacity(y.len() + 1);
        let mut s2 = Vec::with_capacity(y.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for v in y {
            let c = v - mean;
            s1.push(s1.last().unwrap() + c);
            s2.push(s2.last().unwrap() + c * c);
        }
        Self { s1, s2 }
    }

    /// Cost of `y[start..end]`.
    fn cost(&self, start: usize, end: usize) -> f64 {
        let len = (end - start) as f64;
        let sum = self.s1[end] - self.s1[start];
        let sq = self.s2[end] - self.s2[start];
        (sq - sum * sum / len).max(0.0)
    }
}

/// `10 * var(diff(trend)) * ln(n)`, floored at a tiny positive value.
pub fn default_penalty(trend: &[f64]) -> f64 {
    let n = trend.len();
    if n < 3 {
        return f64::MIN_POSITIVE;
    }
    let diffs: Vec<f64> = trend.windows(2).map(|w| w[1] - w[0]).collect();
    let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    (10.0 * var * (n as f64).ln()).max(f64::MIN_POSITIVE)
}

/// `2 * span * sigma^2 * ln(n)`, with `sigma` the MAD-based scale of the
/// STL remainder and `span` the trend smoother span.
///
/// A trend smoothed over `span` points turns each level shift into a ramp,
/// so the penalty is scaled by the span rather than by per-point noise.
pub fn remainder_penalty(remainder: &[f64], trend_span: usize) -> f64 {
    let n = remainder.len();
    if n < 2 {
        return f64::MIN_POSITIVE;
    }
    let mut sorted = remainder.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = quantile(&sorted, 0.5);
    let mut dev: Vec<f64> = remainder.iter().map(|r| (r - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let sigma = 1.4826 * quantile(&dev, 0.5);
    (2.0 * trend_span as f64 * sigma * sigma * (n as f64).ln()).max(f64::MIN_POSITIVE)
}

/// Breakpoints minimizing total segment cost plus `penalty` per break.
/// Each returned index is the first position of a new segment.
pub fn detect_change_points(trend: &[f64], penalty: f64) -> Result<Vec<usize>, ChangePointError> {
    detect_change_points_min_size(trend, penalty, 1)
}

/// As [`detect_change_points`], with every segment at least `min_size` long.
pub fn detect_change_points_min_size(
    y: &[f64],
    penalty: f64,
    min_size: usize,
) -> Result<Vec<usize>, ChangePointError> {
    let n = y.len();
    if n < 4 {
        return Err(ChangePointError::InsufficientData(n));
    }
    if !(penalty > 0.0) || !penalty.is_finite() {
        return Err(ChangePointError::InvalidPenalty(penalty));
    }
    if min_size == 0 {
        return Err(ChangePointError::InvalidMinSize);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ChangePointError::NonFinite);
    }
    let cost = L2Cost::new(y);
    let mut best = vec![f64::INFINITY; n + 1];
    let mut prev = vec![0usize; n + 1];
    best[0] = -penalty;
    let mut candidates: Vec<usize> = vec![0];
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for t in 1..=n {
        scored.clear();
        for &s in &candidates {
            if t - s >= min_size && best[s].is_finite() {
                scored.push((s, best[s] + cost.cost(s, t) + penalty));
            }
        }
        if let Some(&(s, v)) = scored
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        {
            best[t] = v;
            prev[t] = s;
        }
        let bound = best[t] + penalty;
        candidates.retain(|&s| {
            scored
                .iter()
                .find(|(c, _)| *c == s)
                .is_none_or(|(_, v)| *v <= bound)
        });
        candidates.push(t);
    }
    let mut breaks = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = prev[t];
        if s > 0 {
            breaks.push(s);
        }
        t = s;
    }
    breaks.reverse();
    Ok(breaks)
}
