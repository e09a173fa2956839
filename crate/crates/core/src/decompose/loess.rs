//! Locally weighted regression with tricube weights.
//!
//! The neighborhood of a target `x0` is the `span` nearest points; the
//! bandwidth `h` is the distance to the farthest of them, so that point gets
//! weight zero. Weights are `(1 - (d/h)^3)^3`, multiplied by optional
//! robustness weights. A degree-1 fit whose weighted x-spread is negligible
//! falls back to the weighted mean.

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LoessError {
    #[error("span must be odd and positive, got {0}")]
    InvalidSpan(usize),
    #[error("span {span} exceeds the number of points {n}")]
    SpanTooLarge { span: usize, n: usize },
    #[error("degree must be 0 or 1, got {0}")]
    InvalidDegree(u8),
    #[error("x values must be finite and sorted ascending")]
    Unsorted,
    #[error("{weights} robustness weights for {n} points")]
    WeightLength { weights: usize, n: usize },
    #[error("window around x = {x} has {points} point(s) with positive weight, degree {degree} needs {}", degree + 1)]
    Rank { x: f64, points: usize, degree: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Fit at `x0` using the points in `left..=right`.
///
/// Returns `None` when every weight in the window is zero. The second value
/// is the number of points with positive weight.
pub(crate) fn fit_at(
    xs: &[f64],
    ys: &[f64],
    rw: Option<&[f64]>,
    x0: f64,
    left: usize,
    right: usize,
    h: f64,
    degree: u8,
    range: f64,
) -> (Option<f64>, usize) {
    let h9 = 0.999 * h;
    let h1 = 0.001 * h;
    let mut w = vec![0.0; right - left + 1];
    let mut total = 0.0;
    let mut positive = 0;
    for (k, j) in (left..=right).enumerate() {
        let r = (xs[j] - x0).abs();
        if r <= h9 {
            let mut wj = if r <= h1 {
                1.0
            } else {
                (1.0 - (r / h).powi(3)).powi(3)
            };
            if let Some(rw) = rw {
                wj *= rw[j];
            }
            if wj > 0.0 {
                positive += 1;
            }
            w[k] = wj;
            total += wj;
        }
    }
    if total <= 0.0 {
        return (None, positive);
    }
    for wk in &mut w {
        *wk /= total;
    }
    if h > 0.0 && degree > 0 {
        let center: f64 = w.iter().zip(left..=right).map(|(wk, j)| wk * xs[j]).sum();
        let spread: f64 = w
            .iter()
            .zip(left..=right)
            .map(|(wk, j)| wk * (xs[j] - center).powi(2))
            .sum();
        if spread.sqrt() > 0.001 * range {
            let slope = (x0 - center) / spread;
            for (wk, j) in w.iter_mut().zip(left..=right) {
                *wk *= slope * (xs[j] - center) + 1.0;
            }
        }
    }
    let fit = w.iter().zip(left..=right).map(|(wk, j)| wk * ys[j]).sum();
    (Some(fit), positive)
}

/// Smooths `points` (sorted by x) and returns the fitted value at every x.
pub fn loess_smooth(
    points: &[Point],
    span: usize,
    degree: u8,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>, LoessError> {
    let n = points.len();
    if span == 0 || span.is_multiple_of(2) {
        return Err(LoessError::InvalidSpan(span));
    }
    if span > n {
        return Err(LoessError::SpanTooLarge { span, n });
    }
    if degree > 1 {
        return Err(LoessError::InvalidDegree(degree));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(LoessError::WeightLength {
                weights: w.len(),
                n,
            });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    if xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(LoessError::Unsorted);
    }
    let range = xs[n - 1] - xs[0];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x0 = xs[i];
        let (mut left, mut right) = (i, i);
        while right - left + 1 < span {
            if left == 0 {
                right += 1;
            } else if right == n - 1 || x0 - xs[left - 1] <= xs[right + 1] - x0 {
                left -= 1;
            } else {
                right += 1;
            }
        }
        let h = (x0 - xs[left]).max(xs[right] - x0);
        let (fit, positive) = fit_at(&xs, &ys, weights, x0, left, right, h, degree, range);
        match fit {
            Some(v) if positive > degree as usize => out.push(v),
            _ => {
                return Err(LoessError::Rank {
                    x: x0,
                    points: positive,
                    degree,
                })
            }
        }
    }
    Ok(out)
}

/// Bandwidth at position `x0` over window `left..=right` of `n` equally
/// spaced points, widened when the span exceeds the data.
fn bandwidth(x0: f64, left: usize, right: usize, span: usize, n: usize) -> f64 {
    let mut h = (x0 - left as f64).max(right as f64 - x0);
    if span > n {
        h += ((span - n) / 2) as f64;
    }
    h
}

/// Fit at integer-indexed position `x0` (may lie outside `0..n`).
pub(crate) fn fit_position(
    ys: &[f64],
    positions: &[f64],
    rw: Option<&[f64]>,
    span: usize,
    degree: u8,
    x0: f64,
    left: usize,
    right: usize,
) -> Option<f64> {
    let n = ys.len();
    let h = bandwidth(x0, left, right, span, n);
    fit_at(
        positions,
        ys,
        rw,
        x0,
        left,
        right,
        h,
        degree,
        (n - 1) as f64,
    )
    .0
}

/// Smoother used inside STL: equally spaced positions `0..n`, window of
/// `span` points sliding with the target, every position evaluated.
pub(crate) fn smooth_positions(
    ys: &[f64],
    span: usize,
    degree: u8,
    rw: Option<&[f64]>,
) -> Vec<f64> {
    let n = ys.len();
    if n < 2 {
        return ys.to_vec();
    }
    let positions: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut out = vec![0.0; n];
    if span >= n {
        for (i, o) in out.iter_mut().enumerate() {
            *o =
                fit_position(ys, &positions, rw, span, degree, i as f64, 0, n - 1).unwrap_or(ys[i]);
        }
        return out;
    }
    let half = span.div_ceil(2);
    let (mut left, mut right) = (0usize, span - 1);
    for i in 0..n {
        if i + 1 > half && right != n - 1 {
            left += 1;
            right += 1;
        }
        out[i] =
            fit_position(ys, &positions, rw, span, degree, i as f64, left, right).unwrap_or(ys[i]);
    }
    out
}
