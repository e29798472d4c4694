//! Derived quantities: dew point, time of wetness, freeze-thaw crossings and
//! indoor pollutant concentrations from a single-zone mass balance.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Species;
use crate::pipeline::UniformSeries;
use crate::store::{HangarProfile, Material};

/// Magnus coefficients (Alduchov–Eskridge).
pub const MAGNUS_A: f64 = 17.625;
pub const MAGNUS_B: f64 = 243.04;

pub const TOW_RH_THRESHOLD: f64 = 80.0;
pub const TOW_T_THRESHOLD: f64 = 0.0;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("input out of range: {0}")]
    OutOfRange(String),
    #[error("series are not on the same grid")]
    GridMismatch,
    #[error("bad infiltration parameters: {0}")]
    BadParams(String),
}

/// Magnus dew point in °C. Valid for RH in (0, 100] % and T in [-45, 60] °C.
pub fn dew_point(temperature: f64, relative_humidity: f64) -> Result<f64, FeatureError> {
    if !(relative_humidity > 0.0 && relative_humidity <= 100.0) {
        return Err(FeatureError::OutOfRange(format!(
            "relative humidity {relative_humidity} % not in (0, 100]"
        )));
    }
    if !(-45.0..=60.0).contains(&temperature) {
        return Err(FeatureError::OutOfRange(format!(
            "temperature {temperature} °C not in [-45, 60]"
        )));
    }
    if relative_humidity == 100.0 {
        return Ok(temperature);
    }
    let gamma = (relative_humidity / 100.0).ln() + MAGNUS_A * temperature / (MAGNUS_B + temperature);
    let dp = MAGNUS_B * gamma / (MAGNUS_A - gamma);
    Ok(dp.min(temperature))
}

/// Pointwise dew point; points outside the formula's validity are missing.
pub fn dew_point_series(
    temperature: &UniformSeries,
    humidity: &UniformSeries,
) -> Result<UniformSeries, FeatureError> {
    if !temperature.same_grid(humidity) {
        return Err(FeatureError::GridMismatch);
    }
    let values = temperature
        .values
        .iter()
        .zip(&humidity.values)
        .map(|(t, rh)| match (t, rh) {
            (Some(t), Some(rh)) => dew_point(*t, *rh).ok(),
            _ => None,
        })
        .collect();
    Ok(UniformSeries {
        values,
        ..temperature.clone()
    })
}

/// Hours with RH > 80 % and T > 0 °C (both strict). Missing points count as dry.
pub fn time_of_wetness(
    temperature: &UniformSeries,
    humidity: &UniformSeries,
) -> Result<f64, FeatureError> {
    if !temperature.same_grid(humidity) {
        return Err(FeatureError::GridMismatch);
    }
    let wet = temperature
        .values
        .iter()
        .zip(&humidity.values)
        .filter(|(t, rh)| match (t, rh) {
            (Some(t), Some(rh)) => *rh > TOW_RH_THRESHOLD && *t > TOW_T_THRESHOLD,
            _ => false,
        })
        .count();
    Ok((wet as i64 * temperature.step_seconds) as f64 / 3600.0)
}

/// Indices `i` where the temperature crosses from ≤ 0 °C at `i-1` to > 0 °C at `i`.
pub fn freeze_thaw_indices(temperature: &UniformSeries) -> Vec<usize> {
    temperature
        .values
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| match (w[0], w[1]) {
            (Some(prev), Some(cur)) if prev <= 0.0 && cur > 0.0 => Some(i + 1),
            _ => None,
        })
        .collect()
}

pub fn freeze_thaw_events(temperature: &UniformSeries) -> usize {
    freeze_thaw_indices(temperature).len()
}

/// Surface classes that remove pollutants by deposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Wood,
    Steel,
    Concrete,
    /// Exhibited aircraft, counted only when an equivalent area is configured.
    Artifact,
}

impl From<Material> for Surface {
    fn from(m: Material) -> Self {
        match m {
            Material::Wood => Surface::Wood,
            Material::Steel => Surface::Steel,
            Material::Concrete => Surface::Concrete,
        }
    }
}

impl fmt::Display for Surface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Surface::Wood => "wood",
            Surface::Steel => "steel",
            Surface::Concrete => "concrete",
            Surface::Artifact => "artifact",
        })
    }
}

/// Deposition velocities in m/h, keyed by species then surface. Absent
/// entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DepositionTable(pub BTreeMap<Species, BTreeMap<Surface, f64>>);

impl Default for DepositionTable {
    fn default() -> Self {
        let mut table = BTreeMap::new();
        table.insert(
            Species::So2,
            BTreeMap::from([
                (Surface::Wood, 1.8),
                (Surface::Concrete, 1.4),
                (Surface::Steel, 0.4),
            ]),
        );
        let all = |v: f64| {
            BTreeMap::from([(Surface::Wood, v), (Surface::Steel, v), (Surface::Concrete, v)])
        };
        table.insert(Species::Pm25, all(0.2));
        table.insert(Species::Pm10, all(0.7));
        DepositionTable(table)
    }
}

impl DepositionTable {
    pub fn velocity(&self, species: Species, surface: Surface) -> f64 {
        self.0
            .get(&species)
            .and_then(|m| m.get(&surface))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        for (species, row) in &self.0 {
            for (surface, v) in row {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(FeatureError::BadParams(format!(
                        "deposition velocity {species}/{surface} = {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AirExchange {
    /// 1/h
    Constant(f64),
    /// 1/h on the same grid as the outdoor series; gaps carried forward.
    Series(UniformSeries),
}

/// Inputs of the well-mixed balance `dC/dt = n (C_out − C) − (Σ v_d A / V) C`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfiltrationParams {
    pub air_exchange: AirExchange,
    /// Deposition velocity (m/h) and exposed area (m²) per surface.
    pub surfaces: Vec<(f64, f64)>,
    /// m³
    pub volume: f64,
}

impl InfiltrationParams {
    /// Parameters for one species in a hangar. `artifact_area` adds exhibited
    /// surfaces under the `artifact` velocity entry.
    pub fn for_hangar(
        profile: &HangarProfile,
        table: &DepositionTable,
        species: Species,
        air_exchange: AirExchange,
        artifact_area: f64,
    ) -> Self {
        let mut surfaces: Vec<(f64, f64)> = profile
            .surfaces()
            .iter()
            .map(|(m, area)| (table.velocity(species, (*m).into()), *area))
            .collect();
        if artifact_area > 0.0 {
            surfaces.push((table.velocity(species, Surface::Artifact), artifact_area));
        }
        Self {
            air_exchange,
            surfaces,
            volume: profile.volume,
        }
    }

    /// Σ v_d·A / V in 1/h.
    pub fn sink_rate(&self) -> f64 {
        self.surfaces.iter().map(|(v, a)| v * a).sum::<f64>() / self.volume
    }

    fn validate(&self) -> Result<(), FeatureError> {
        if !(self.volume.is_finite() && self.volume > 0.0) {
            return Err(FeatureError::BadParams(format!("volume {}", self.volume)));
        }
        for (v, a) in &self.surfaces {
            if !(v.is_finite() && *v >= 0.0 && a.is_finite() && *a >= 0.0) {
                return Err(FeatureError::BadParams(format!(
                    "surface velocity {v} m/h, area {a} m²"
                )));
            }
        }
        match &self.air_exchange {
            AirExchange::Constant(n) if !(n.is_finite() && *n >= 0.0) => {
                Err(FeatureError::BadParams(format!("air exchange rate {n}")))
            }
            AirExchange::Series(s) if s.present().any(|n| !(n.is_finite() && n >= 0.0)) => {
                Err(FeatureError::BadParams("negative air exchange rate in series".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Gaps carried forward; leading gaps take the first present value.
fn filled(values: &[Option<f64>], what: &str) -> Result<Vec<f64>, FeatureError> {
    let first = values
        .iter()
        .flatten()
        .next()
        .copied()
        .ok_or_else(|| FeatureError::BadParams(format!("{what} has no values")))?;
    let mut last = first;
    Ok(values
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect())
}

/// Integrates the indoor concentration with the exact exponential update,
/// holding the outdoor level and exchange rate constant within each step.
/// `initial` is the indoor level at the first grid point.
pub fn indoor_concentration(
    outdoor: &UniformSeries,
    params: &InfiltrationParams,
    initial: f64,
) -> Result<UniformSeries, FeatureError> {
    params.validate()?;
    if !(initial.is_finite() && initial >= 0.0) {
        return Err(FeatureError::BadParams(format!("initial concentration {initial}")));
    }
    if outdoor.is_empty() {
        return Ok(outdoor.clone());
    }
    if outdoor.present().any(|c| c < 0.0) {
        return Err(FeatureError::BadParams("negative outdoor concentration".into()));
    }
    let c_out = filled(&outdoor.values, "outdoor series")?;
    let n: Vec<f64> = match &params.air_exchange {
        AirExchange::Constant(n) => vec![*n; c_out.len()],
        AirExchange::Series(s) => {
            if !s.same_grid(outdoor) {
                return Err(FeatureError::GridMismatch);
            }
            filled(&s.values, "air exchange series")?
        }
    };
    let sink = params.sink_rate();
    let dt = outdoor.step_hours();

    let mut values = Vec::with_capacity(c_out.len());
    let mut c_in = initial;
    values.push(Some(c_in));
    for k in 0..c_out.len() - 1 {
        let lambda = n[k] + sink;
        if lambda > 0.0 {
            let steady = n[k] * c_out[k] / lambda;
            c_in = steady + (c_in - steady) * (-lambda * dt).exp();
        }
        c_in = c_in.max(0.0);
        values.push(Some(c_in));
    }
    Ok(UniformSeries {
        start: outdoor.start,
        step_seconds: outdoor.step_seconds,
        values,
    })
}

/// Pointwise (low, high) envelope of the indoor concentration at the minimum
/// and maximum air exchange rate.
pub fn indoor_band(
    outdoor: &UniformSeries,
    params: &InfiltrationParams,
    n_min: f64,
    n_max: f64,
    initial: f64,
) -> Result<(UniformSeries, UniformSeries), FeatureError> {
    if !(n_min >= 0.0 && n_min <= n_max && n_max.is_finite()) {
        return Err(FeatureError::BadParams(format!(
            "air exchange band [{n_min}, {n_max}]"
        )));
    }
    let run = |n: f64| {
        let p = InfiltrationParams {
            air_exchange: AirExchange::Constant(n),
            ..params.clone()
        };
        indoor_concentration(outdoor, &p, initial)
    };
    let at_min = run(n_min)?;
    let at_max = run(n_max)?;
    let pick = |f: fn(f64, f64) -> f64| UniformSeries {
        values: at_min
            .values
            .iter()
            .zip(&at_max.values)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => Some(f(*a, *b)),
                _ => None,
            })
            .collect(),
        ..at_min.clone()
    };
    Ok((pick(f64::min), pick(f64::max)))
}

/// Band for one species: the indoor series at the lower and upper exchange rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutantBand {
    pub low: UniformSeries,
    pub high: UniformSeries,
}

/// Derived features over one evaluated period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    /// Hours over the evaluated period.
    pub time_of_wetness: f64,
    pub indoor_pollutants: BTreeMap<Species, UniformSeries>,
    pub indoor_pollutant_band: BTreeMap<Species, PollutantBand>,
    pub freeze_thaw_events: usize,
}
