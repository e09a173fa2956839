//! Hourly series, STL decomposition, change points, outliers and the
//! long-term trend summary.

pub mod loess;
pub mod outliers;
pub mod pelt;
pub mod series;
pub mod stl;

use serde::{Deserialize, Serialize};

pub use loess::{loess_smooth, LoessError, Point};
pub use outliers::{
    detect_outliers, outlier_report, quantile, OutlierConfig, OutlierError, OutlierPopulation,
    OutlierReport,
};
pub use pelt::{
    default_penalty, detect_change_points, detect_change_points_min_size, remainder_penalty,
    ChangePointError,
};
pub use series::{hourly_series, SeriesError, TimeSeries};
pub use stl::{stl_decompose, stl_values, Decomposition, StlError, StlParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub min: f64,
    pub max: f64,
    pub rel_change: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrendSummaryError {
    #[error("empty trend")]
    Empty,
    #[error("trend minimum {0} is not positive")]
    NonPositiveMin(f64),
}

/// `(max - min) / min` over the trend.
pub fn trend_summary(trend: &[f64]) -> Result<TrendSummary, TrendSummaryError> {
    let min = trend
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(TrendSummaryError::Empty)?;
    let max = trend
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(TrendSummaryError::Empty)?;
    if !(min > 0.0) {
        return Err(TrendSummaryError::NonPositiveMin(min));
    }
    Ok(TrendSummary {
        min,
        max,
        rel_change: (max - min) / min,
    })
}

/// How the change-point penalty is derived when none is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyRule {
    /// [`remainder_penalty`] on the STL remainder.
    #[default]
    RemainderScale,
    /// [`default_penalty`] on the trend itself.
    TrendDiffVariance,
}

/// How change points are searched on the STL trend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangePointConfig {
    /// Fixed penalty; overrides `rule`.
    pub penalty: Option<f64>,
    pub rule: PenaltyRule,
    /// Minimum segment length in samples; `None` uses twice the trend span.
    pub min_size: Option<usize>,
}
