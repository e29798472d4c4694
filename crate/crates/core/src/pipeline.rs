//! Alignment of raw series onto a uniform grid, trailing moving-average
//! smoothing and the grid search that picks the smoothing window.

use std::fmt::Display;
use std::io::Write;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::ObservationSeries;
use crate::time::Timestamp;

pub const MIN_WINDOW_HOURS: u32 = 1;
pub const MAX_WINDOW_HOURS: u32 = 168;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("series is empty")]
    EmptySeries,
    #[error("step must be a positive whole number of seconds")]
    BadStep,
    #[error("moving-average window {0} h outside [1, 168] h")]
    BadWindow(u32),
    #[error("grid search candidates must be a non-empty subset of 1..=168 h")]
    BadCandidates,
    #[error("every candidate window failed")]
    AllCandidatesFailed,
}

/// Values on the grid `start + k·step`; `None` marks a gap the resampler
/// refused to bridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformSeries {
    #[serde(with = "crate::time::rfc3339")]
    pub start: Timestamp,
    pub step_seconds: i64,
    pub values: Vec<Option<f64>>,
}

/// Grid geometry shared by series that must line up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub start: Timestamp,
    pub step: Duration,
    pub len: usize,
}

impl Grid {
    pub fn time_at(&self, index: usize) -> Timestamp {
        self.start + Duration::seconds(self.step.num_seconds() * index as i64)
    }

    /// Grid covering `[start, end)`.
    pub fn covering(start: Timestamp, end: Timestamp, step: Duration) -> Result<Self, PipelineError> {
        let step_s = step.num_seconds();
        if step_s <= 0 || step != Duration::seconds(step_s) {
            return Err(PipelineError::BadStep);
        }
        let span = (end - start).num_seconds();
        let len = if span <= 0 { 0 } else { ((span + step_s - 1) / step_s) as usize };
        Ok(Self { start, step, len })
    }
}

impl UniformSeries {
    pub fn new(start: Timestamp, step: Duration, values: Vec<Option<f64>>) -> Self {
        Self {
            start,
            step_seconds: step.num_seconds(),
            values,
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self::new(grid.start, grid.step, vec![Some(value); grid.len])
    }

    pub fn step(&self) -> Duration {
        Duration::seconds(self.step_seconds)
    }

    pub fn step_hours(&self) -> f64 {
        self.step_seconds as f64 / 3600.0
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> Grid {
        Grid {
            start: self.start,
            step: self.step(),
            len: self.values.len(),
        }
    }

    pub fn time_at(&self, index: usize) -> Timestamp {
        self.grid().time_at(index)
    }

    pub fn same_grid(&self, other: &UniformSeries) -> bool {
        self.start == other.start
            && self.step_seconds == other.step_seconds
            && self.values.len() == other.values.len()
    }

    /// Present values only.
    pub fn present(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn mean(&self) -> Option<f64> {
        let (sum, n) = self.present().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn max(&self) -> Option<f64> {
        self.present().reduce(f64::max)
    }

    pub fn min(&self) -> Option<f64> {
        self.present().reduce(f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> UniformSeries {
        UniformSeries {
            start: self.start,
            step_seconds: self.step_seconds,
            values: self.values.iter().map(|v| v.map(&f)).collect(),
        }
    }

    /// The present points as an observation series for `key`.
    pub fn to_observations(&self, key: crate::store::SeriesKey) -> ObservationSeries {
        ObservationSeries {
            key,
            points: self
                .values
                .iter()
                .enumerate()
                .filter_map(|(i, v)| {
                    v.map(|value| crate::store::Sample {
                        timestamp: self.time_at(i),
                        value,
                    })
                })
                .collect(),
        }
    }
}

/// Resamples onto a grid anchored at the first observation and ending at the last.
pub fn resample(
    series: &ObservationSeries,
    step: Duration,
    max_gap: Duration,
) -> Result<UniformSeries, PipelineError> {
    let first = series.points.first().ok_or(PipelineError::EmptySeries)?;
    let last = series.points.last().ok_or(PipelineError::EmptySeries)?;
    let step_s = step.num_seconds();
    if step_s <= 0 {
        return Err(PipelineError::BadStep);
    }
    let len = ((last.timestamp - first.timestamp).num_seconds() / step_s) as usize + 1;
    let grid = Grid {
        start: first.timestamp,
        step,
        len,
    };
    resample_onto(series, grid, max_gap)
}

/// Linear interpolation onto an externally chosen grid. Grid points outside
/// the observed span, or bracketed by observations more than `max_gap` apart,
/// are missing.
pub fn resample_onto(
    series: &ObservationSeries,
    grid: Grid,
    max_gap: Duration,
) -> Result<UniformSeries, PipelineError> {
    if grid.step.num_seconds() <= 0 {
        return Err(PipelineError::BadStep);
    }
    let pts = &series.points;
    let mut values = Vec::with_capacity(grid.len);
    // Index of the first observation strictly after the current grid time.
    let mut next = 0usize;
    for k in 0..grid.len {
        let g = grid.time_at(k);
        while next < pts.len() && pts[next].timestamp <= g {
            next += 1;
        }
        let value = if next == 0 {
            None
        } else {
            let before = &pts[next - 1];
            if before.timestamp == g {
                Some(before.value)
            } else if next == pts.len() {
                None
            } else {
                let after = &pts[next];
                let span = after.timestamp - before.timestamp;
                if span > max_gap {
                    None
                } else {
                    let frac = (g - before.timestamp).num_milliseconds() as f64
                        / span.num_milliseconds() as f64;
                    Some(before.value + (after.value - before.value) * frac)
                }
            }
        };
        values.push(value);
    }
    Ok(UniformSeries::new(grid.start, grid.step, values))
}

/// Number of grid steps a window of `hours` spans (rounded up).
pub fn window_steps(hours: u32, step_seconds: i64) -> usize {
    let window_s = hours as i64 * 3600;
    ((window_s + step_seconds - 1) / step_seconds).max(1) as usize
}

/// Trailing mean over the most recent `window_hours`; missing values are
/// skipped and the output is missing only when the whole window is.
pub fn moving_average(series: &UniformSeries, window_hours: u32) -> Result<UniformSeries, PipelineError> {
    if !(MIN_WINDOW_HOURS..=MAX_WINDOW_HOURS).contains(&window_hours) {
        return Err(PipelineError::BadWindow(window_hours));
    }
    if series.step_seconds <= 0 {
        return Err(PipelineError::BadStep);
    }
    let w = window_steps(window_hours, series.step_seconds);
    let vals = &series.values;
    let out = (0..vals.len())
        .map(|i| {
            let from = (i + 1).saturating_sub(w);
            let mut mean = 0.0;
            let mut n = 0usize;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in vals[from..=i].iter().flatten() {
                n += 1;
                mean += (v - mean) / n as f64;
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
            (n > 0).then(|| mean.clamp(lo, hi))
        })
        .collect();
    Ok(UniformSeries {
        start: series.start,
        step_seconds: series.step_seconds,
        values: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window_hours: u32,
    /// `None` when the objective failed for this window.
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_window: u32,
    pub best_score: f64,
    /// One row per candidate, in ascending window order.
    pub table: Vec<WindowScore>,
}

impl GridSearchResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "window_hours,score")?;
        for row in &self.table {
            match row.score {
                Some(s) => writeln!(out, "{},{}", row.window_hours, s)?,
                None => writeln!(out, "{},", row.window_hours)?,
            }
        }
        Ok(())
    }
}

/// Minimises `objective` over the candidate windows; ties go to the smaller
/// window. Failing or non-finite candidates are recorded and skipped.
/// Candidates are evaluated on scoped threads; the result does not depend
/// on evaluation order.
pub fn grid_search_window<F, E>(candidates: &[u32], objective: F) -> Result<GridSearchResult, PipelineError>
where
    F: Fn(u32) -> Result<f64, E> + Sync,
    E: Display,
{
    let mut windows: Vec<u32> = candidates.to_vec();
    windows.sort_unstable();
    windows.dedup();
    if windows.is_empty()
        || windows
            .iter()
            .any(|w| !(MIN_WINDOW_HOURS..=MAX_WINDOW_HOURS).contains(w))
    {
        return Err(PipelineError::BadCandidates);
    }

    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(windows.len());
    let chunk = windows.len().div_ceil(threads);
    let evaluate = |w: u32| -> WindowScore {
        match objective(w) {
            Ok(s) if s.is_finite() => WindowScore {
                window_hours: w,
                score: Some(s),
                failure: None,
            },
            Ok(s) => WindowScore {
                window_hours: w,
                score: None,
                failure: Some(format!("non-finite score {s}")),
            },
            Err(e) => WindowScore {
                window_hours: w,
                score: None,
                failure: Some(e.to_string()),
            },
        }
    };
    let table: Vec<WindowScore> = std::thread::scope(|scope| {
        let handles: Vec<_> = windows
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(|&w| evaluate(w)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("objective panicked"))
            .collect()
    });

    let best = table
        .iter()
        .filter_map(|row| row.score.map(|s| (row.window_hours, s)))
        .fold(None, |best: Option<(u32, f64)>, (w, s)| match best {
            Some((_, bs)) if bs <= s => best,
            _ => Some((w, s)),
        })
        .ok_or(PipelineError::AllCandidatesFailed)?;
    Ok(GridSearchResult {
        best_window: best.0,
        best_score: best.1,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Placement, Sample, SeriesKey, Variable};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn t0() -> Timestamp {
        Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
    }

    fn obs(points: &[(i64, f64)]) -> ObservationSeries {
        ObservationSeries {
            key: SeriesKey::of(Variable::Temperature, Placement::Indoor),
            points: points
                .iter()
                .map(|&(s, value)| Sample {
                    timestamp: t0() + Duration::seconds(s),
                    value,
                })
                .collect(),
        }
    }

    fn uniform(values: &[f64]) -> UniformSeries {
        UniformSeries::new(t0(), Duration::hours(1), values.iter().map(|v| Some(*v)).collect())
    }

    #[test]
    fn midpoint_of_a_line() {
        let s = obs(&[(0, 0.0), (7200, 10.0)]);
        let u = resample(&s, Duration::hours(1), Duration::hours(6)).unwrap();
        assert_eq!(u.values, vec![Some(0.0), Some(5.0), Some(10.0)]);
    }

    #[test]
    fn single_point_and_empty() {
        let u = resample(&obs(&[(0, 3.5)]), Duration::hours(1), Duration::hours(6)).unwrap();
        assert_eq!(u.values, vec![Some(3.5)]);
        assert_eq!(
            resample(&obs(&[]), Duration::hours(1), Duration::hours(6)),
            Err(PipelineError::EmptySeries)
        );
    }

    /// Independent gap oracle: a grid point is present iff it coincides with
    /// an observation or its nearest neighbours on both sides are within max_gap.
    fn gap_oracle(points: &[(i64, f64)], step: i64, max_gap: i64) -> Vec<bool> {
        let last = points.last().unwrap().0;
        (0..=last / step)
            .map(|k| {
                let g = k * step;
                if points.iter().any(|p| p.0 == g) {
                    return true;
                }
                let before = points.iter().filter(|p| p.0 < g).map(|p| p.0).max();
                let after = points.iter().filter(|p| p.0 > g).map(|p| p.0).min();
                matches!((before, after), (Some(b), Some(a)) if a - b <= max_gap)
            })
            .collect()
    }

    #[test]
    fn long_gaps_are_missing() {
        let pts = [(0, 1.0), (50 * 3600, 2.0)];
        let u = resample(&obs(&pts), Duration::hours(1), Duration::hours(24)).unwrap();
        let present: Vec<bool> = u.values.iter().map(Option::is_some).collect();
        assert_eq!(present, gap_oracle(&pts, 3600, 24 * 3600));
        assert_eq!(u.len(), 51);
        assert!(u.values[1..50].iter().all(Option::is_none));
    }

    #[test]
    fn window_of_one_step_is_identity() {
        let u = UniformSeries::new(
            t0(),
            Duration::hours(1),
            vec![Some(1.0), None, Some(-3.25), Some(7.0)],
        );
        assert_eq!(moving_average(&u, 1).unwrap(), u);
    }

    #[test]
    fn trailing_mean_hand_values() {
        let u = uniform(&[1.0, 2.0, 3.0, 4.0]);
        let ma = moving_average(&u, 2).unwrap();
        assert_eq!(ma.values, vec![Some(1.0), Some(1.5), Some(2.5), Some(3.5)]);
    }

    #[test]
    fn sub_hour_step_converts_window_to_steps() {
        let u = UniformSeries::new(t0(), Duration::minutes(30), vec![Some(0.0), Some(2.0), Some(4.0)]);
        let ma = moving_average(&u, 1).unwrap();
        assert_eq!(ma.values, vec![Some(0.0), Some(1.0), Some(3.0)]);
    }

    #[test]
    fn missing_only_when_whole_window_missing() {
        let u = UniformSeries::new(t0(), Duration::hours(1), vec![Some(2.0), None, None, Some(4.0)]);
        let ma = moving_average(&u, 2).unwrap();
        assert_eq!(ma.values, vec![Some(2.0), Some(2.0), None, Some(4.0)]);
    }

    #[test]
    fn window_bounds() {
        let u = uniform(&[1.0]);
        assert_eq!(moving_average(&u, 0), Err(PipelineError::BadWindow(0)));
        assert_eq!(moving_average(&u, 169), Err(PipelineError::BadWindow(169)));
        assert!(moving_average(&u, 168).is_ok());
    }

    #[test]
    fn grid_search_convex_and_ties() {
        let all: Vec<u32> = (1..=168).collect();
        let r = grid_search_window(&all, |w| Ok::<_, String>(((w as f64) - 24.0).powi(2))).unwrap();
        assert_eq!(r.best_window, 24);
        assert_eq!(r.table.len(), 168);
        let r = grid_search_window(&all, |_| Ok::<_, String>(1.0)).unwrap();
        assert_eq!(r.best_window, 1);
    }

    #[test]
    fn grid_search_skips_failures() {
        let all: Vec<u32> = (1..=168).collect();
        let objective = |w: u32| {
            if w.is_multiple_of(2) {
                Err(format!("window {w} failed"))
            } else {
                Ok(((w as f64) - 24.0).powi(2))
            }
        };
        let r = grid_search_window(&all, objective).unwrap();
        // Exhaustive scan oracle over the odd windows.
        let oracle = all
            .iter()
            .filter(|w| *w % 2 == 1)
            .min_by(|a, b| {
                let sa = ((**a as f64) - 24.0).powi(2);
                let sb = ((**b as f64) - 24.0).powi(2);
                sa.partial_cmp(&sb).unwrap().then(a.cmp(b))
            })
            .copied()
            .unwrap();
        assert_eq!(r.best_window, oracle);
        assert_eq!(r.best_window, 23);
        assert_eq!(r.table.iter().filter(|row| row.failure.is_some()).count(), 84);
        assert_eq!(
            grid_search_window(&[2, 4], objective),
            Err(PipelineError::AllCandidatesFailed)
        );
        assert_eq!(
            grid_search_window(&[], objective),
            Err(PipelineError::BadCandidates)
        );
        assert_eq!(
            grid_search_window(&[0, 5], objective),
            Err(PipelineError::BadCandidates)
        );
    }

    #[test]
    fn score_table_csv() {
        let r = grid_search_window(&[1, 2], |w| {
            if w == 2 {
                Err("boom")
            } else {
                Ok(0.5)
            }
        })
        .unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "window_hours,score\n1,0.5\n2,\n");
    }

    proptest! {
        #[test]
        fn ma_preserves_envelope(values in prop::collection::vec(prop::option::weighted(0.8, -50.0f64..50.0), 1..120), window in 1u32..=168) {
            let u = UniformSeries::new(t0(), Duration::hours(1), values.clone());
            let ma = moving_average(&u, window).unwrap();
            prop_assert_eq!(ma.len(), u.len());
            if let (Some(lo), Some(hi)) = (u.min(), u.max()) {
                for v in ma.present() {
                    prop_assert!(lo <= v && v <= hi);
                }
            }
        }

        #[test]
        fn ma_is_identity_on_constants(c in -100.0f64..100.0, n in 1usize..200, window in 1u32..=168) {
            let u = uniform(&vec![c; n]);
            let ma = moving_average(&u, window).unwrap();
            prop_assert!(ma.values.iter().all(|v| *v == Some(c)));
        }

        #[test]
        fn resample_is_idempotent_on_grid_aligned_input(
            offsets in prop::collection::btree_set(0i64..200, 1..40),
            values in prop::collection::vec(-20.0f64..20.0, 40),
        ) {
            let pts: Vec<(i64, f64)> = offsets.iter().zip(values).map(|(h, v)| (h * 3600, v)).collect();
            let once = resample(&obs(&pts), Duration::hours(1), Duration::hours(6)).unwrap();
            let key = SeriesKey::of(Variable::Temperature, Placement::Indoor);
            let twice = resample(&once.to_observations(key), Duration::hours(1), Duration::hours(6)).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
