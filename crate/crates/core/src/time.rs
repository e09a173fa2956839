//! Calendar helpers and the clock abstraction used by campaigns.

use std::sync::Mutex;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Datelike, Duration, Offset, TimeZone, Timelike, Utc};
use chrono_tz::Tz;

/// Hours in a week; hour-of-week index 0 is Monday 00:00 local time.
pub const HOURS_PER_WEEK: usize = 168;

#[derive(Debug, thiserror::Error)]
#[error("unknown time zone `{0}`")]
pub struct UnknownTimeZone(pub String);

pub fn parse_tz(name: &str) -> Result<Tz, UnknownTimeZone> {
    name.parse::<Tz>()
        .map_err(|_| UnknownTimeZone(name.to_string()))
}

/// Integer hour of day (0..24) in `tz`.
pub fn hour_of_day(t: DateTime<Utc>, tz: Tz) -> usize {
    t.with_timezone(&tz).hour() as usize
}

/// Integer hour of week (0..168) in `tz`, Monday 00:00 = 0.
pub fn hour_of_week(t: DateTime<Utc>, tz: Tz) -> usize {
    let local = t.with_timezone(&tz);
    local.weekday().num_days_from_monday() as usize * 24 + local.hour() as usize
}

/// Fractional hour of week in `[0, 168)`.
pub fn fractional_hour_of_week(t: DateTime<Utc>, tz: Tz) -> f64 {
    let local = t.with_timezone(&tz);
    let within_hour =
        local.minute() as f64 * 60.0 + local.second() as f64 + local.nanosecond() as f64 * 1e-9;
    hour_of_week(t, tz) as f64 + within_hour / 3600.0
}

/// Start of the local hour containing `t`, expressed in UTC.
pub fn floor_to_local_hour(t: DateTime<Utc>, tz: Tz) -> DateTime<Utc> {
    let offset = tz.offset_from_utc_datetime(&t.naive_utc()).fix();
    let shifted = t.timestamp() + offset.local_minus_utc() as i64;
    let floored = shifted.div_euclid(3600) * 3600 - offset.local_minus_utc() as i64;
    DateTime::from_timestamp(floored, 0).expect("hour floor stays in range")
}

/// Converts fractional milliseconds to a chrono duration at microsecond resolution.
pub fn millis_f64(ms: f64) -> Duration {
    Duration::microseconds((ms * 1000.0).round() as i64)
}

pub fn seconds_f64(s: f64) -> Duration {
    Duration::microseconds((s * 1e6).round() as i64)
}

/// Source of time for campaign execution.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    /// Blocks (or advances virtual time) until `t`. No-op when `t` is in the past.
    fn sleep_until(&self, t: DateTime<Utc>);
    fn is_virtual(&self) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&self, t: DateTime<Utc>) {
        if let Ok(d) = (t - Utc::now()).to_std() {
            std::thread::sleep(d);
        }
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

/// Virtual time that only moves when asked to.
///
/// With an acceleration factor, advancing virtual time also sleeps for the
/// corresponding real interval divided by the factor.
#[derive(Debug)]
pub struct VirtualClock {
    now: Mutex<DateTime<Utc>>,
    acceleration: Option<f64>,
}

impl VirtualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            now: Mutex::new(start),
            acceleration: None,
        }
    }

    /// `factor` virtual seconds pass per real second. Non-finite or
    /// non-positive factors mean "as fast as possible".
    pub fn with_acceleration(mut self, factor: f64) -> Self {
        self.acceleration = (factor.is_finite() && factor > 0.0).then_some(factor);
        self
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, t: DateTime<Utc>) {
        let mut now = self.now.lock().unwrap();
        if t <= *now {
            return;
        }
        if let Some(factor) = self.acceleration {
            if let Ok(d) = (t - *now).to_std() {
                std::thread::sleep(StdDuration::from_secs_f64(d.as_secs_f64() / factor));
            }
        }
        *now = t;
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utc(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    #[test]
    fn hour_of_week_is_local() {
        let cet = parse_tz("CET").unwrap();
        // Sunday 23:00 UTC is Monday 00:00 CET in winter.
        assert_eq!(hour_of_week(utc("2023-01-08T23:00:00Z"), cet), 0);
        assert_eq!(hour_of_week(utc("2023-01-08T22:59:59Z"), cet), 167);
        assert_eq!(hour_of_day(utc("2023-01-10T08:30:00Z"), cet), 9);
    }

    #[test]
    fn fractional_hour() {
        let cet = parse_tz("CET").unwrap();
        let h = fractional_hour_of_week(utc("2023-01-08T23:30:00Z"), cet);
        assert!((h - 0.5).abs() < 1e-12);
    }

    #[test]
    fn floor_hour_respects_offset() {
        let tz = parse_tz("Asia/Kolkata").unwrap();
        // 05:30 offset, so local hours begin at :30 UTC.
        let f = floor_to_local_hour(utc("2023-01-10T10:10:00Z"), tz);
        assert_eq!(f, utc("2023-01-10T09:30:00Z"));
    }

    #[test]
    fn unknown_zone() {
        assert!(parse_tz("Mars/Olympus").is_err());
    }

    #[test]
    fn virtual_clock_is_monotone() {
        let c = VirtualClock::new(utc("2023-01-01T00:00:00Z"));
        c.sleep_until(utc("2023-01-01T01:00:00Z"));
        c.sleep_until(utc("2023-01-01T00:30:00Z"));
        assert_eq!(c.now(), utc("2023-01-01T01:00:00Z"));
    }
}
