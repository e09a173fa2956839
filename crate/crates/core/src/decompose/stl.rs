//! Seasonal-trend decomposition by LOESS.
//!
//! Inner loop per pass: detrend, smooth each cycle-subseries (extended one
//! period on both ends), low-pass the result with moving averages of length
//! `period`, `period`, 3 followed by LOESS, subtract to get the seasonal
//! component, then LOESS-smooth the deseasonalized series for the trend.
//! Outer passes recompute bisquare robustness weights from the remainder.

use serde::{Deserialize, Serialize};

use super::loess::{fit_position, smooth_positions};
use super::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StlParams {
    pub seasonal_span: usize,
    /// Defaults to the smallest odd integer >= 1.5 p / (1 - 1.5 / n_s).
    pub trend_span: Option<usize>,
    /// Defaults to the smallest odd integer >= period.
    pub low_pass_span: Option<usize>,
    pub seasonal_degree: u8,
    pub trend_degree: u8,
    pub low_pass_degree: u8,
    pub inner_iterations: usize,
    pub robust_iterations: usize,
    /// Maximum share of gap-filled points accepted in a series.
    pub fill_fraction_max: f64,
}

impl Default for StlParams {
    fn default() -> Self {
        Self {
            seasonal_span: 25,
            trend_span: None,
            low_pass_span: None,
            seasonal_degree: 1,
            trend_degree: 1,
            low_pass_degree: 1,
            inner_iterations: 2,
            robust_iterations: 1,
            fill_fraction_max: 0.2,
        }
    }
}

fn odd_at_least(x: f64) -> usize {
    let n = x.ceil().max(3.0) as usize;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

impl StlParams {
    fn resolved(&self, period: usize) -> (usize, usize, usize) {
        let ns = odd_at_least(self.seasonal_span as f64);
        let nt = self
            .trend_span
            .map(|t| odd_at_least(t as f64))
            .unwrap_or_else(|| odd_at_least(1.5 * period as f64 / (1.0 - 1.5 / ns as f64)));
        let nl = self
            .low_pass_span
            .map(|l| odd_at_least(l as f64))
            .unwrap_or_else(|| odd_at_least(period as f64));
        (ns, nt, nl)
    }

    /// Seasonal, trend and low-pass spans used for `period`.
    pub fn spans(&self, period: usize) -> (usize, usize, usize) {
        self.resolved(period)
    }
}

/// `y = trend + seasonal + remainder`, element-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub remainder: Vec<f64>,
    pub period: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StlError {
    #[error("series of length {n} is shorter than two periods ({period} each)")]
    TooShort { n: usize, period: usize },
    #[error("period must be at least 2, got {0}")]
    InvalidPeriod(usize),
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("{filled} of {n} points are gap-filled, above the accepted share {max}")]
    TooManyFills { filled: usize, n: usize, max: f64 },
}

/// Decomposes an hourly (or otherwise regular) series.
pub fn stl_decompose(
    series: &TimeSeries,
    period: usize,
    params: &StlParams,
) -> Result<Decomposition, StlError> {
    let filled = series.filled.iter().filter(|f| **f).count();
    let n = series.values.len();
    if n > 0 && filled as f64 / n as f64 > params.fill_fraction_max {
        return Err(StlError::TooManyFills {
            filled,
            n,
            max: params.fill_fraction_max,
        });
    }
    stl_values(&series.values, period, params)
}

/// Decomposes raw values with no gap bookkeeping.
pub fn stl_values(y: &[f64], period: usize, params: &StlParams) -> Result<Decomposition, StlError> {
    let n = y.len();
    if period < 2 {
        return Err(StlError::InvalidPeriod(period));
    }
    if n < 2 * period {
        return Err(StlError::TooShort { n, period });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(StlError::NonFinite);
    }
    let (ns, nt, nl) = params.resolved(period);

    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut rw = vec![1.0; n];
    let mut use_rw = false;
    for pass in 0..=params.robust_iterations {
        for _ in 0..params.inner_iterations.max(1) {
            let weights = use_rw.then_some(rw.as_slice());
            let detrended: Vec<f64> = y.iter().zip(&trend).map(|(a, b)| a - b).collect();
            let cycle = cycle_subseries(&detrended, period, ns, params.seasonal_degree, weights);
            let low = low_pass(&cycle, period);
            let low = smooth_positions(&low, nl, params.low_pass_degree, None);
            for i in 0..n {
                seasonal[i] = cycle[period + i] - low[i];
            }
            let deseasoned: Vec<f64> = y.iter().zip(&seasonal).map(|(a, b)| a - b).collect();
            trend = smooth_positions(&deseasoned, nt, params.trend_degree, weights);
        }
        if pass < params.robust_iterations {
            let fit: Vec<f64> = trend.iter().zip(&seasonal).map(|(a, b)| a + b).collect();
            rw = robustness_weights(y, &fit);
            use_rw = true;
        }
    }

    // Identify the components: the seasonal part carries no level.
    for _ in 0..2 {
        let shift = seasonal.iter().sum::<f64>() / n as f64;
        for (s, t) in seasonal.iter_mut().zip(trend.iter_mut()) {
            *s -= shift;
            *t += shift;
        }
    }
    let remainder = (0..n).map(|i| y[i] - trend[i] - seasonal[i]).collect();
    Ok(Decomposition {
        trend,
        seasonal,
        remainder,
        period,
    })
}

/// Smooths each cycle-subseries and extrapolates it one step on both ends.
/// The output has length `n + 2 * period`, aligned so index `period + i`
/// corresponds to input index `i`.
fn cycle_subseries(
    y: &[f64],
    period: usize,
    span: usize,
    degree: u8,
    rw: Option<&[f64]>,
) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n + 2 * period];
    for j in 0..period {
        let sub: Vec<f64> = y.iter().skip(j).step_by(period).copied().collect();
        let sub_rw: Option<Vec<f64>> =
            rw.map(|w| w.iter().skip(j).step_by(period).copied().collect());
        let k = sub.len();
        let fitted = smooth_positions(&sub, span, degree, sub_rw.as_deref());
        let positions: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let before = fit_position(
            &sub,
            &positions,
            sub_rw.as_deref(),
            span,
            degree,
            -1.0,
            0,
            span.min(k) - 1,
        )
        .unwrap_or(fitted[0]);
        let after = fit_position(
            &sub,
            &positions,
            sub_rw.as_deref(),
            span,
            degree,
            k as f64,
            k.saturating_sub(span),
            k - 1,
        )
        .unwrap_or(fitted[k - 1]);
        out[j] = before;
        for (m, v) in fitted.iter().enumerate() {
            out[(m + 1) * period + j] = *v;
        }
        out[(k + 1) * period + j] = after;
    }
    out
}

fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    let n = x.len() + 1 - len;
    let mut out = Vec::with_capacity(n);
    let mut sum: f64 = x[..len].iter().sum();
    out.push(sum / len as f64);
    for i in 1..n {
        sum += x[i + len - 1] - x[i - 1];
        out.push(sum / len as f64);
    }
    out
}

fn low_pass(x: &[f64], period: usize) -> Vec<f64> {
    let a = moving_average(x, period);
    let b = moving_average(&a, period);
    moving_average(&b, 3)
}

/// Bisquare weights on residuals scaled by six median absolute residuals.
fn robustness_weights(y: &[f64], fit: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = y.iter().zip(fit).map(|(a, b)| (a - b).abs()).collect();
    let mut sorted = r.clone();
    sorted.sort_by(f64::total_cmp);
    let n = r.len();
    let m1 = n / 2;
    let m2 = n - n / 2 - 1;
    let cmad = 3.0 * (sorted[m1] + sorted[m2]);
    let (c9, c1) = (0.999 * cmad, 0.001 * cmad);
    r.iter()
        .map(|&ri| {
            if ri <= c1 {
                1.0
            } else if ri <= c9 {
                (1.0 - (ri / cmad).powi(2)).powi(2)
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn default_spans_for_hourly_data() {
        assert_eq!(StlParams::default().spans(24), (25, 39, 25));
        assert_eq!(StlParams::default().spans(7), (25, 13, 7));
    }

    #[test]
    fn constant_series() {
        let y = vec![42.0; 24 * 14];
        let d = stl_values(&y, 24, &StlParams::default()).unwrap();
        for i in 0..y.len() {
            assert!((d.trend[i] - 42.0).abs() < 1e-9);
            assert!(d.seasonal[i].abs() < 1e-9);
            assert!(d.remainder[i].abs() < 1e-9);
        }
    }

    #[test]
    fn sine_recovery() {
        let n = 24 * 14;
        let truth: Vec<f64> = (0..n)
            .map(|t| 10.0 * (2.0 * PI * t as f64 / 24.0).sin())
            .collect();
        let y: Vec<f64> = truth.iter().map(|s| s + 100.0).collect();
        let d = stl_values(&y, 24, &StlParams::default()).unwrap();
        for t in 24..n - 24 {
            assert!(
                (d.trend[t] - 100.0).abs() <= 0.5,
                "trend at {t}: {}",
                d.trend[t]
            );
            assert!((d.seasonal[t] - truth[t]).abs() <= 0.5, "season at {t}");
        }
    }

    #[test]
    fn too_short_and_fills() {
        assert_eq!(
            stl_values(&[1.0; 47], 24, &StlParams::default()),
            Err(StlError::TooShort { n: 47, period: 24 })
        );
        let series = TimeSeries {
            start: chrono::DateTime::UNIX_EPOCH,
            step_s: 3600.0,
            values: vec![1.0; 100],
            filled: (0..100).map(|i| i % 4 == 0).collect(),
        };
        assert!(matches!(
            stl_decompose(&series, 24, &StlParams::default()),
            Err(StlError::TooManyFills { filled: 25, .. })
        ));
    }

    #[test]
    fn moving_average_lengths() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(
            moving_average(&x, 3),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        );
        assert_eq!(low_pass(&vec![1.0; 24 * 4], 24).len(), 24 * 2);
    }

    #[test]
    fn robustness_downweights_outliers() {
        let y = [0.0, 0.1, -0.1, 0.05, 50.0, 0.0];
        let w = robustness_weights(&y, &[0.0; 6]);
        assert_eq!(w[4], 0.0);
        assert!(w[0] > 0.99);
    }
}
