//! Measure, simulate and analyze short- and long-term performance
//! variability of FaaS platforms.

pub mod cli;
pub mod decompose;
pub mod record;
pub mod report;
pub mod scheduler;
pub mod sim;
pub mod stats;
pub mod target;
pub mod time;
