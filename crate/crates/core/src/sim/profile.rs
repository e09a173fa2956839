use chrono::{DateTime, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::time::{fractional_hour_of_week, HOURS_PER_WEEK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Step,
    Linear,
}

/// One value per hour of the week, Monday 00:00 local time first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyProfile {
    pub values: Vec<f64>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl WeeklyProfile {
    pub fn constant(value: f64) -> Self {
        Self {
            values: vec![value; HOURS_PER_WEEK],
            interpolation: Interpolation::Step,
        }
    }

    /// Repeats a 24-hour shape over every day of the week.
    pub fn daily(hours: &[f64; 24], interpolation: Interpolation) -> Self {
        Self {
            values: (0..HOURS_PER_WEEK).map(|h| hours[h % 24]).collect(),
            interpolation,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.values.len() != HOURS_PER_WEEK {
            return Err(format!(
                "weekly profile needs {HOURS_PER_WEEK} values, got {}",
                self.values.len()
            ));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(format!("weekly profile value at hour {i} is not finite"));
        }
        Ok(())
    }

    pub fn value_at(&self, t: DateTime<Utc>, tz: Tz) -> f64 {
        let h = fractional_hour_of_week(t, tz);
        let i = (h.floor() as usize).min(HOURS_PER_WEEK - 1);
        match self.interpolation {
            Interpolation::Step => self.values[i],
            Interpolation::Linear => {
                let frac = h - i as f64;
                let next = self.values[(i + 1) % HOURS_PER_WEEK];
                self.values[i] * (1.0 - frac) + next * frac
            }
        }
    }
}

pub fn profile_value(profile: &WeeklyProfile, t: DateTime<Utc>, tz: Tz) -> f64 {
    profile.value_at(t, tz)
}
