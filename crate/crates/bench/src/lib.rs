//! Shared inputs for the criterion benches.

use chrono::{Duration, TimeZone, Utc};
use smarthangar_core::pipeline::UniformSeries;
use smarthangar_core::store::{ObservationSeries, Placement, Sample, SeriesKey, Variable};

/// A year of hourly indoor temperature with a daily cycle and one hole per week.
pub fn hourly_temperature_year() -> ObservationSeries {
    let start = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    let points = (0..8760i64)
        .filter(|h| h % 168 != 100)
        .map(|h| Sample {
            timestamp: start + Duration::hours(h),
            value: 10.0 + 8.0 * (h as f64 * std::f64::consts::TAU / 24.0).sin(),
        })
        .collect();
    ObservationSeries::new(SeriesKey::of(Variable::Temperature, Placement::Indoor), points).unwrap()
}

pub fn uniform(values: usize, f: impl Fn(usize) -> f64) -> UniformSeries {
    let start = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    UniformSeries::new(start, Duration::minutes(36), (0..values).map(|i| Some(f(i))).collect())
}
