//! Persistence of observation series, the hangar profile and opaque artifacts
//! (trained trees, evaluation snapshots).
//!
//! [`Store`] is the contract; [`MemoryStore`] and [`FileStore`] implement it.

mod csv_io;
mod file;
mod memory;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Bound;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Species;
use crate::time::Timestamp;

pub use csv_io::{export_series_csv, import_series_csv, SeriesBatch, SERIES_HEADER};
pub use file::FileStore;
pub use memory::MemoryStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variable {
    #[serde(rename = "temperature")]
    Temperature,
    #[serde(rename = "relative_humidity")]
    RelativeHumidity,
    #[serde(rename = "dew_point")]
    DewPoint,
    #[serde(rename = "wind_speed")]
    WindSpeed,
    #[serde(rename = "air_exchange_rate")]
    AirExchangeRate,
    #[serde(rename = "SO2")]
    So2,
    #[serde(rename = "NO2")]
    No2,
    #[serde(rename = "CO")]
    Co,
    #[serde(rename = "O3")]
    O3,
    #[serde(rename = "PM10")]
    Pm10,
    #[serde(rename = "PM2.5")]
    Pm25,
}

impl Variable {
    pub const ALL: [Variable; 11] = [
        Variable::Temperature,
        Variable::RelativeHumidity,
        Variable::DewPoint,
        Variable::WindSpeed,
        Variable::AirExchangeRate,
        Variable::So2,
        Variable::No2,
        Variable::Co,
        Variable::O3,
        Variable::Pm10,
        Variable::Pm25,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Temperature => "temperature",
            Variable::RelativeHumidity => "relative_humidity",
            Variable::DewPoint => "dew_point",
            Variable::WindSpeed => "wind_speed",
            Variable::AirExchangeRate => "air_exchange_rate",
            Variable::So2 => "SO2",
            Variable::No2 => "NO2",
            Variable::Co => "CO",
            Variable::O3 => "O3",
            Variable::Pm10 => "PM10",
            Variable::Pm25 => "PM2.5",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::Temperature | Variable::DewPoint => "°C",
            Variable::RelativeHumidity => "%",
            Variable::WindSpeed => "m/s",
            Variable::AirExchangeRate => "1/h",
            _ => "µg/m³",
        }
    }

    pub fn species(self) -> Option<Species> {
        match self {
            Variable::So2 => Some(Species::So2),
            Variable::No2 => Some(Species::No2),
            Variable::Co => Some(Species::Co),
            Variable::O3 => Some(Species::O3),
            Variable::Pm10 => Some(Species::Pm10),
            Variable::Pm25 => Some(Species::Pm25),
            _ => None,
        }
    }

    fn check_value(self, value: f64) -> Result<(), String> {
        if !value.is_finite() {
            return Err(format!("{} value is not finite", self.as_str()));
        }
        match self {
            Variable::RelativeHumidity if !(0.0..=100.0).contains(&value) => {
                Err(format!("relative_humidity {value} outside [0, 100]"))
            }
            Variable::Temperature | Variable::DewPoint | Variable::RelativeHumidity => Ok(()),
            _ if value < 0.0 => Err(format!("{} must be non-negative, got {value}", self.as_str())),
            _ => Ok(()),
        }
    }
}

impl From<Species> for Variable {
    fn from(s: Species) -> Self {
        match s {
            Species::So2 => Variable::So2,
            Species::No2 => Variable::No2,
            Species::Co => Variable::Co,
            Species::O3 => Variable::O3,
            Species::Pm10 => Variable::Pm10,
            Species::Pm25 => Variable::Pm25,
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variable::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variable `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Indoor,
    Outdoor,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::Indoor => "indoor",
            Placement::Outdoor => "outdoor",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "indoor" => Ok(Placement::Indoor),
            "outdoor" => Ok(Placement::Outdoor),
            _ => Err(format!("unknown placement `{s}`")),
        }
    }
}

/// A (variable, placement) pair admitted by the hangar input table. The unit
/// is a function of the variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawKey", into = "RawKey")]
pub struct SeriesKey {
    variable: Variable,
    placement: Placement,
}

#[derive(Serialize, Deserialize)]
struct RawKey {
    variable: Variable,
    placement: Placement,
}

impl TryFrom<RawKey> for SeriesKey {
    type Error = StoreError;
    fn try_from(raw: RawKey) -> Result<Self, Self::Error> {
        SeriesKey::new(raw.variable, raw.placement)
    }
}

impl From<SeriesKey> for RawKey {
    fn from(k: SeriesKey) -> Self {
        RawKey {
            variable: k.variable,
            placement: k.placement,
        }
    }
}

impl SeriesKey {
    pub fn new(variable: Variable, placement: Placement) -> Result<Self, StoreError> {
        use Placement::*;
        use Variable::*;
        let admitted = match variable {
            Temperature | RelativeHumidity | DewPoint => true,
            WindSpeed => placement == Outdoor,
            AirExchangeRate => placement == Indoor,
            So2 | Pm10 | Pm25 => true,
            No2 | Co | O3 => placement == Outdoor,
        };
        if admitted {
            Ok(Self {
                variable,
                placement,
            })
        } else {
            Err(StoreError::InvalidKey {
                variable,
                placement,
            })
        }
    }

    /// Panics on a combination outside the admitted set; for literals only.
    pub fn of(variable: Variable, placement: Placement) -> Self {
        Self::new(variable, placement).expect("admitted series key")
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn unit(&self) -> &'static str {
        self.variable.unit()
    }

    pub fn check_value(&self, value: f64) -> Result<(), String> {
        self.variable.check_value(value)
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.placement, self.variable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(with = "crate::time::rfc3339")]
    pub timestamp: Timestamp,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub key: SeriesKey,
    pub points: Vec<Sample>,
}

impl ObservationSeries {
    /// Builds a series after sorting; rejects duplicate timestamps and values
    /// that break the key's invariants.
    pub fn new(key: SeriesKey, mut points: Vec<Sample>) -> Result<Self, StoreError> {
        points.sort_by_key(|p| p.timestamp);
        for w in points.windows(2) {
            if w[0].timestamp == w[1].timestamp {
                return Err(StoreError::InvariantViolation(format!(
                    "duplicate timestamp {}",
                    crate::time::format_rfc3339(&w[0].timestamp)
                )));
            }
        }
        for p in &points {
            key.check_value(p.value).map_err(StoreError::InvariantViolation)?;
        }
        Ok(Self { key, points })
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Wood,
    Steel,
    Concrete,
}

impl Material {
    pub const ALL: [Material; 3] = [Material::Wood, Material::Steel, Material::Concrete];

    pub fn as_str(self) -> &'static str {
        match self {
            Material::Wood => "wood",
            Material::Steel => "steel",
            Material::Concrete => "concrete",
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Static description of the building envelope and installed equipment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HangarProfile {
    pub near_sea: bool,
    pub ac_installed: bool,
    pub heating_installed: bool,
    pub filters_installed: bool,
    pub insulation_installed: bool,
    pub barriers_installed: bool,
    pub carpets_installed: bool,
    pub walls_material: Material,
    /// m²
    pub walls_area: f64,
    pub roof_material: Material,
    /// m²
    pub roof_area: f64,
    pub floor_material: Material,
    /// m²
    pub floor_area: f64,
    /// m²
    pub exhibition_area: f64,
    /// m³
    pub volume: f64,
}

/// A profile field that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {reason}")]
pub struct ProfileError {
    pub field: &'static str,
    pub reason: String,
}

impl HangarProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let positive = [
            ("walls_area", self.walls_area),
            ("roof_area", self.roof_area),
            ("floor_area", self.floor_area),
            ("exhibition_area", self.exhibition_area),
            ("volume", self.volume),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ProfileError {
                    field,
                    reason: format!("must be a positive number, got {value}"),
                });
            }
        }
        if self.exhibition_area > self.floor_area {
            return Err(ProfileError {
                field: "exhibition_area",
                reason: format!(
                    "exhibition area {} exceeds floor area {}",
                    self.exhibition_area, self.floor_area
                ),
            });
        }
        Ok(())
    }

    /// The envelope surfaces exposed to the hangar air, as (material, m²).
    pub fn surfaces(&self) -> [(Material, f64); 3] {
        [
            (self.walls_material, self.walls_area),
            (self.roof_material, self.roof_area),
            (self.floor_material, self.floor_area),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub key: SeriesKey,
    #[serde(with = "crate::time::rfc3339")]
    pub timestamp: Timestamp,
    pub previous: f64,
    pub replacement: f64,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid series key {placement}/{variable}")]
    InvalidKey {
        variable: Variable,
        placement: Placement,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(#[from] ProfileError),
    #[error("unknown series {0}")]
    UnknownSeries(SeriesKey),
    #[error("range start is after its end")]
    BadRange,
    #[error("no hangar profile stored")]
    NoProfile,
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
}

/// Time bounds of a series query.
pub type Bounds = (Bound<Timestamp>, Bound<Timestamp>);

pub fn closed(start: Timestamp, end: Timestamp) -> Bounds {
    (Bound::Included(start), Bound::Included(end))
}

pub trait Store: Send + Sync {
    /// Idempotent upsert keyed by timestamp. Returns how many points were newly
    /// stored or replaced; identical re-puts return 0.
    fn put_samples(&self, key: SeriesKey, points: &[Sample]) -> Result<usize, StoreError>;

    fn get_series(&self, key: SeriesKey, bounds: Bounds) -> Result<ObservationSeries, StoreError>;

    fn keys(&self) -> Result<Vec<SeriesKey>, StoreError>;

    /// Last writer wins; returns the new, strictly increasing version id.
    fn upsert_profile(&self, profile: &HangarProfile) -> Result<u64, StoreError>;

    fn get_profile(&self) -> Result<(u64, HangarProfile), StoreError>;

    fn put_artifact(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError>;

    fn get_artifact(&self, name: &str) -> Result<Option<Vec<u8>>, StoreError>;

    fn audit_log(&self) -> Result<Vec<AuditEntry>, StoreError>;
}

fn check_bounds(bounds: &Bounds) -> Result<(), StoreError> {
    let start = match bounds.0 {
        Bound::Included(t) | Bound::Excluded(t) => Some(t),
        Bound::Unbounded => None,
    };
    let end = match bounds.1 {
        Bound::Included(t) | Bound::Excluded(t) => Some(t),
        Bound::Unbounded => None,
    };
    match (start, end) {
        (Some(s), Some(e)) if s > e => Err(StoreError::BadRange),
        _ => Ok(()),
    }
}

fn validate_points(key: SeriesKey, points: &[Sample]) -> Result<(), StoreError> {
    for p in points {
        key.check_value(p.value).map_err(|reason| {
            StoreError::InvariantViolation(format!(
                "{key} at {}: {reason}",
                crate::time::format_rfc3339(&p.timestamp)
            ))
        })?;
    }
    Ok(())
}

/// In-memory state shared by both backends.
#[derive(Debug, Default)]
pub(crate) struct StoreState {
    series: BTreeMap<SeriesKey, BTreeMap<Timestamp, f64>>,
    profile: Option<(u64, HangarProfile)>,
    audit: Vec<AuditEntry>,
}

impl StoreState {
    fn apply_samples(&mut self, key: SeriesKey, points: &[Sample]) -> usize {
        let series = self.series.entry(key).or_default();
        let mut changed = 0;
        for p in points {
            match series.insert(p.timestamp, p.value) {
                None => changed += 1,
                Some(prev) if prev.to_bits() == p.value.to_bits() => {}
                Some(prev) => {
                    changed += 1;
                    self.audit.push(AuditEntry {
                        key,
                        timestamp: p.timestamp,
                        previous: prev,
                        replacement: p.value,
                    });
                }
            }
        }
        changed
    }

    fn query(&self, key: SeriesKey, bounds: Bounds) -> Result<ObservationSeries, StoreError> {
        let series = self.series.get(&key).ok_or(StoreError::UnknownSeries(key))?;
        let points = series
            .range(bounds)
            .map(|(t, v)| Sample {
                timestamp: *t,
                value: *v,
            })
            .collect();
        Ok(ObservationSeries { key, points })
    }

    fn apply_profile(&mut self, version: u64, profile: HangarProfile) {
        self.profile = Some((version, profile));
    }

    fn next_version(&self) -> u64 {
        self.profile.as_ref().map_or(1, |(v, _)| v + 1)
    }
}
