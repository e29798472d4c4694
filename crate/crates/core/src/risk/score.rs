//! Pointwise surrogate risk score and its series form.

use chrono::Duration;

use super::{RiskError, RiskModel};
use crate::features::freeze_thaw_indices;
use crate::pipeline::UniformSeries;

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskInputs {
    /// °C
    pub temperature: f64,
    /// °C
    pub dew_point: f64,
    /// %
    pub relative_humidity: f64,
    /// Indoor SO2, µg/m³
    pub so2: f64,
    /// A freeze-thaw crossing happened within the last 24 h.
    pub thawed: bool,
}

/// Risk in [0, 1]: condensation, humidity and thaw hazards blended by the
/// model weights, then scaled by the SO2 pollution factor.
pub fn risk_score(inputs: &RiskInputs, model: &RiskModel) -> Result<f64, RiskError> {
    model.validate()?;
    Ok(score_unchecked(inputs, model))
}

fn score_unchecked(i: &RiskInputs, m: &RiskModel) -> f64 {
    let condensation = clamp01((m.condensation_span - (i.temperature - i.dew_point)) / m.condensation_span);
    let humidity = clamp01((i.relative_humidity - m.rh_knee) / (100.0 - m.rh_knee));
    let thaw = if i.thawed { 1.0 } else { 0.0 };
    let base = m.w_condensation * condensation + m.w_humidity * humidity + m.w_freeze_thaw * thaw;
    let pollution = (1.0 - m.pollution_gain) + m.pollution_gain * (i.so2 / m.so2_reference).min(1.0);
    clamp01(base * pollution)
}

/// `flags[i]` is set when a freeze-thaw crossing occurred at some `j <= i`
/// with `t_i - t_j < memory`.
pub fn thaw_flags(temperature: &UniformSeries, memory: Duration) -> Vec<bool> {
    let mut flags = vec![false; temperature.len()];
    let span = if temperature.step_seconds > 0 {
        ((memory.num_seconds() + temperature.step_seconds - 1) / temperature.step_seconds) as usize
    } else {
        0
    };
    for j in freeze_thaw_indices(temperature) {
        for flag in flags.iter_mut().skip(j).take(span) {
            *flag = true;
        }
    }
    flags
}

/// Aligned inputs of [`score_series`]. `thawed` comes from [`thaw_flags`].
#[derive(Debug, Clone)]
pub struct ScoringInputs<'a> {
    pub temperature: &'a UniformSeries,
    pub dew_point: &'a UniformSeries,
    pub relative_humidity: &'a UniformSeries,
    pub so2: &'a UniformSeries,
    pub thawed: &'a [bool],
}

/// Pointwise score; a missing input gives a missing score.
pub fn score_series(inputs: &ScoringInputs<'_>, model: &RiskModel) -> Result<UniformSeries, RiskError> {
    model.validate()?;
    let t = inputs.temperature;
    let aligned = t.same_grid(inputs.dew_point)
        && t.same_grid(inputs.relative_humidity)
        && t.same_grid(inputs.so2)
        && inputs.thawed.len() == t.len();
    if !aligned {
        return Err(RiskError::GridMismatch);
    }
    let values = (0..t.len())
        .map(|i| {
            match (
                t.values[i],
                inputs.dew_point.values[i],
                inputs.relative_humidity.values[i],
                inputs.so2.values[i],
            ) {
                (Some(temperature), Some(dew_point), Some(rh), Some(so2)) => Some(score_unchecked(
                    &RiskInputs {
                        temperature,
                        dew_point,
                        relative_humidity: rh,
                        so2,
                        thawed: inputs.thawed[i],
                    },
                    model,
                )),
                _ => None,
            }
        })
        .collect();
    Ok(UniformSeries {
        start: t.start,
        step_seconds: t.step_seconds,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn inputs(t: f64, dp: f64, rh: f64, so2: f64, thawed: bool) -> RiskInputs {
        RiskInputs {
            temperature: t,
            dew_point: dp,
            relative_humidity: rh,
            so2,
            thawed,
        }
    }

    #[test]
    fn saturated_thawed_polluted_is_one() {
        let m = RiskModel::default();
        assert_eq!(risk_score(&inputs(5.0, 5.0, 100.0, 50.0, true), &m).unwrap(), 1.0);
    }

    #[test]
    fn benign_is_zero() {
        let m = RiskModel::default();
        assert_eq!(risk_score(&inputs(20.0, 10.0, 30.0, 40.0, false), &m).unwrap(), 0.0);
    }

    #[test]
    fn clean_air_scales_by_one_minus_gain() {
        let m = RiskModel::default();
        let s = risk_score(&inputs(5.0, 5.0, 100.0, 0.0, true), &m).unwrap();
        assert!((s - 0.7).abs() < 1e-12);
    }

    #[test]
    fn invalid_model_is_rejected() {
        let m = RiskModel {
            pollution_gain: 1.5,
            ..RiskModel::default()
        };
        assert!(matches!(
            risk_score(&inputs(5.0, 5.0, 100.0, 0.0, true), &m),
            Err(RiskError::BadModel(_))
        ));
    }

    fn hourly(values: Vec<Option<f64>>) -> UniformSeries {
        UniformSeries::new(
            Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
            Duration::hours(1),
            values,
        )
    }

    #[test]
    fn single_thaw_elevates_exactly_the_next_24_hours() {
        let mut temps = vec![Some(-3.0); 10];
        temps.extend(vec![Some(4.0); 60]);
        let t = hourly(temps);
        let flags = thaw_flags(&t, Duration::hours(24));
        // Windowed-flag oracle: the crossing lands at index 10.
        let oracle: Vec<bool> = (0..70).map(|i| (10..34).contains(&i)).collect();
        assert_eq!(flags, oracle);

        let n = t.len();
        let dp = t.map(|v| v - 10.0);
        let rh = hourly(vec![Some(40.0); n]);
        let so2 = hourly(vec![Some(5.0); n]);
        let scores = score_series(
            &ScoringInputs {
                temperature: &t,
                dew_point: &dp,
                relative_humidity: &rh,
                so2: &so2,
                thawed: &flags,
            },
            &RiskModel::default(),
        )
        .unwrap();
        for (i, s) in scores.values.iter().enumerate() {
            assert_eq!(s.unwrap() > 0.0, oracle[i], "index {i}");
        }
    }

    #[test]
    fn benign_constant_series_scores_zero_and_gaps_propagate() {
        let t = hourly(vec![Some(20.0), None, Some(20.0)]);
        let dp = hourly(vec![Some(5.0); 3]);
        let rh = hourly(vec![Some(40.0); 3]);
        let so2 = hourly(vec![Some(5.0); 3]);
        let flags = vec![false; 3];
        let s = score_series(
            &ScoringInputs {
                temperature: &t,
                dew_point: &dp,
                relative_humidity: &rh,
                so2: &so2,
                thawed: &flags,
            },
            &RiskModel::default(),
        )
        .unwrap();
        assert_eq!(s.values, vec![Some(0.0), None, Some(0.0)]);
        let short = hourly(vec![Some(1.0); 2]);
        assert_eq!(
            score_series(
                &ScoringInputs {
                    temperature: &t,
                    dew_point: &short,
                    relative_humidity: &rh,
                    so2: &so2,
                    thawed: &flags,
                },
                &RiskModel::default()
            ),
            Err(RiskError::GridMismatch)
        );
    }

    proptest! {
        #[test]
        fn score_is_monotone(
            t in -10.0f64..30.0,
            gap in 0.0f64..6.0,
            rh in 0.0f64..100.0,
            so2 in 0.0f64..100.0,
            thawed: bool,
            d_rh in 0.0f64..30.0,
            d_so2 in 0.0f64..30.0,
            d_gap in 0.0f64..3.0,
        ) {
            let m = RiskModel::default();
            let base = risk_score(&inputs(t, t - gap, rh, so2, thawed), &m).unwrap();
            let wetter = risk_score(&inputs(t, t - gap, (rh + d_rh).min(100.0), so2, thawed), &m).unwrap();
            let dirtier = risk_score(&inputs(t, t - gap, rh, so2 + d_so2, thawed), &m).unwrap();
            let closer = risk_score(&inputs(t, t - (gap - d_gap).max(0.0), rh, so2, thawed), &m).unwrap();
            prop_assert!(wetter >= base);
            prop_assert!(dirtier >= base);
            prop_assert!(closer >= base);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn score_never_exceeds_one(
            t in -40.0f64..50.0, dp in -60.0f64..55.0, rh in 0.0f64..100.0, so2 in 0.0f64..1e4, thawed: bool,
        ) {
            let s = risk_score(&inputs(t, dp, rh, so2, thawed), &RiskModel::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn dry_series_is_identically_zero(
            temps in prop::collection::vec(1.0f64..30.0, 1..60),
            rh in 0.0f64..70.0,
            extra_gap in 2.0f64..15.0,
        ) {
            let t = hourly(temps.iter().map(|v| Some(*v)).collect());
            let dp = t.map(|v| v - extra_gap - 1e-9);
            let n = t.len();
            let rh_s = hourly(vec![Some(rh); n]);
            let so2 = hourly(vec![Some(80.0); n]);
            let flags = vec![false; n];
            let s = score_series(&ScoringInputs {
                temperature: &t, dew_point: &dp, relative_humidity: &rh_s, so2: &so2, thawed: &flags,
            }, &RiskModel::default()).unwrap();
            prop_assert!(s.values.iter().all(|v| *v == Some(0.0)));
        }
    }
}
