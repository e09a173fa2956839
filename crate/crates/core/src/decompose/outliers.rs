use serde::{Deserialize, Serialize};

use super::series::TimeSeries;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OutlierError {
    #[error("need at least 8 values for quartiles, got {0}")]
    InsufficientData(usize),
    #[error("series contains non-finite values")]
    NonFinite,
}

/// Which values define the mean and quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierPopulation {
    #[default]
    HourlyMeans,
    /// Individual expected-warm billed durations.
    RawInvocations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierConfig {
    /// Multiple of the IQR a value must deviate from the mean to be flagged.
    pub k: f64,
    pub population: OutlierPopulation,
    /// With a zero IQR on non-constant data, flag every non-zero deviation
    /// instead of flagging nothing.
    pub flag_any_deviation_on_zero_iqr: bool,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            k: 4.0,
            population: OutlierPopulation::HourlyMeans,
            flag_any_deviation_on_zero_iqr: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub indices: Vec<usize>,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub threshold: f64,
    pub zero_iqr: bool,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Flags hours whose value deviates from the overall mean by more than
/// `k` interquartile ranges.
pub fn detect_outliers(hourly: &TimeSeries, k: f64) -> Result<Vec<usize>, OutlierError> {
    let config = OutlierConfig {
        k,
        ..OutlierConfig::default()
    };
    Ok(outlier_report(&hourly.values, None, &config)?.indices)
}

/// Full report. `population` overrides the values that define mean and
/// quartiles; `values` are always the ones tested.
pub fn outlier_report(
    values: &[f64],
    population: Option<&[f64]>,
    config: &OutlierConfig,
) -> Result<OutlierReport, OutlierError> {
    if values.len() < 8 {
        return Err(OutlierError::InsufficientData(values.len()));
    }
    let pop = population.unwrap_or(values);
    if pop.len() < 8 {
        return Err(OutlierError::InsufficientData(pop.len()));
    }
    if values.iter().chain(pop).any(|v| !v.is_finite()) {
        return Err(OutlierError::NonFinite);
    }
    let mean = pop.iter().sum::<f64>() / pop.len() as f64;
    let mut sorted = pop.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let threshold = config.k * iqr;
    let zero_iqr = iqr == 0.0;
    let constant = values.iter().all(|v| *v == values[0]);
    let indices = if zero_iqr && !constant {
        log::warn!("interquartile range is zero on non-constant data; outlier rule degenerates");
        if config.flag_any_deviation_on_zero_iqr {
            flag(values, mean, 0.0)
        } else {
            Vec::new()
        }
    } else {
        flag(values, mean, threshold)
    };
    Ok(OutlierReport {
        indices,
        mean,
        q1,
        q3,
        iqr,
        threshold,
        zero_iqr,
    })
}

fn flag(values: &[f64], mean: f64, threshold: f64) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| (*v - mean).abs() > threshold)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries {
            start: chrono::DateTime::UNIX_EPOCH,
            step_s: 3600.0,
            filled: vec![false; values.len()],
            values,
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.25), 1.75);
        assert_eq!(quantile(&s, 0.75), 3.25);
        assert_eq!(quantile(&s, 0.5), 2.5);
    }

    #[test]
    fn constant_flags_nothing() {
        assert!(detect_outliers(&series(vec![100.0; 48]), 4.0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn hand_built_series() {
        // 39 values alternating 95/105 plus one spike. With 20 of each and the
        // spike above, sorted positions: 95 x20, 105 x19 (the spike sits last).
        let mut v: Vec<f64> = (0..39)
            .map(|i| if i % 2 == 0 { 95.0 } else { 105.0 })
            .collect();
        v.push(145.0);
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        // h = 39 * 0.25 = 9.75 -> 95; h = 29.25 -> 105. IQR = 10.
        assert_eq!(quantile(&sorted, 0.25), 95.0);
        assert_eq!(quantile(&sorted, 0.75), 105.0);
        let mean = v.iter().sum::<f64>() / 40.0;
        // mean = (20*95 + 19*105 + 145) / 40 = 101.0
        assert_eq!(mean, 101.0);
        let report = outlier_report(&v, None, &OutlierConfig::default()).unwrap();
        assert_eq!(report.iqr, 10.0);
        assert_eq!(report.indices, vec![39]);
    }

    #[test]
    fn zero_iqr() {
        let mut v = vec![100.0; 20];
        v[3] = 101.0;
        let cfg = OutlierConfig::default();
        let r = outlier_report(&v, None, &cfg).unwrap();
        assert!(r.zero_iqr && r.indices.is_empty());
        let cfg = OutlierConfig {
            flag_any_deviation_on_zero_iqr: true,
            ..cfg
        };
        // Every value deviates from the mean 100.05.
        assert_eq!(outlier_report(&v, None, &cfg).unwrap().indices.len(), 20);
    }

    #[test]
    fn raw_population() {
        let hourly = vec![100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 160.0];
        // 99.00, 99.02, ..., 101.00: mean 100, Q1 99.5, Q3 100.5.
        let raw: Vec<f64> = (0..=100).map(|i| 99.0 + i as f64 * 0.02).collect();
        let r = outlier_report(&hourly, Some(&raw), &OutlierConfig::default()).unwrap();
        assert!((r.iqr - 1.0).abs() < 1e-9);
        assert!((r.mean - 100.0).abs() < 1e-9);
        assert_eq!(r.indices, vec![7]);
    }

    #[test]
    fn too_short() {
        assert_eq!(
            detect_outliers(&series(vec![1.0; 7]), 4.0),
            Err(OutlierError::InsufficientData(7))
        );
    }
}
