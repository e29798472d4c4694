//! `ServiceConfig`: the TOML file shared by the CLI and the HTTP service.
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::DepositionTable;
use crate::ingest::FeedSource;
use crate::pipeline::{MAX_WINDOW_HOURS, MIN_WINDOW_HOURS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("bad config: {0}")]
    Invalid(String),
    #[error("config references missing file {0}")]
    MissingFile(String),
}

/// A fixed moving-average window or a grid search over 1..=168 h.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowChoice {
    Fixed(u32),
    GridSearch,
}

impl Serialize for WindowChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            WindowChoice::Fixed(w) => s.serialize_u32(*w),
            WindowChoice::GridSearch => s.serialize_str("grid-search"),
        }
    }
}

impl<'de> Deserialize<'de> for WindowChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Hours(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Hours(w) => Ok(WindowChoice::Fixed(w)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for WindowChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid-search" | "search" => Ok(WindowChoice::GridSearch),
            _ => s
                .parse::<u32>()
                .map(WindowChoice::Fixed)
                .map_err(|_| format!("window must be whole hours or `search`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub step_minutes: u32,
    pub max_gap_hours: u32,
    pub ma_window: WindowChoice,
    /// CSV of labelled condensation events scored by the window grid search.
    pub validation: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            step_minutes: 60,
            max_gap_hours: 6,
            ma_window: WindowChoice::Fixed(24),
            validation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfiltrationConfig {
    /// 1/h, used when no indoor air-exchange series is stored.
    pub air_exchange: f64,
    pub air_exchange_min: f64,
    pub air_exchange_max: f64,
    /// m² of exhibited surfaces added to the deposition area.
    pub artifact_area: f64,
    pub deposition_velocity: DepositionTable,
}

impl Default for InfiltrationConfig {
    fn default() -> Self {
        InfiltrationConfig {
            air_exchange: 0.5,
            air_exchange_min: 0.1,
            air_exchange_max: 1.0,
            artifact_area: 0.0,
            deposition_velocity: DepositionTable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    /// Flat `key = value` risk model; the built-in model is used when absent.
    pub model: Option<PathBuf>,
    /// `tau,p,s,category` lookup table; the shipped table is used when absent.
    pub table: Option<PathBuf>,
    pub thaw_memory_hours: u32,
    /// Measured chloride deposition, mg/(m²·d); otherwise `near_sea` decides.
    pub chloride: Option<f64>,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig { model: None, table: None, thaw_memory_hours: 24, chloride: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionConfig {
    /// Rules file; the shipped rules are used when absent.
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Poll the configured feeds on their cadence.
    pub poll_feeds: bool,
    /// Re-evaluate the trailing period every this many minutes.
    pub evaluate_every_minutes: Option<u64>,
    /// Length of the trailing period for scheduled evaluation.
    pub evaluate_period_hours: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub listen: String,
    /// Directory of the file-backed store; in-memory when absent.
    pub storage: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub infiltration: InfiltrationConfig,
    pub risk: RiskConfig,
    pub decision: DecisionConfig,
    pub schedule: ScheduleConfig,
    pub feeds: Vec<FeedSource>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            storage: None,
            pipeline: PipelineConfig::default(),
            infiltration: InfiltrationConfig::default(),
            risk: RiskConfig::default(),
            decision: DecisionConfig::default(),
            schedule: ScheduleConfig::default(),
            feeds: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ServiceConfig =
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, resolves relative paths and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.check_files()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.storage);
        fix(&mut self.pipeline.validation);
        fix(&mut self.risk.model);
        fix(&mut self.risk.table);
        fix(&mut self.decision.rules);
    }

    pub fn check_files(&self) -> Result<(), ConfigError> {
        let files = [&self.pipeline.validation, &self.risk.model, &self.risk.table, &self.decision.rules];
        for path in files.into_iter().flatten() {
            if !path.is_file() {
                return Err(ConfigError::MissingFile(path.display().to_string()));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let p = &self.pipeline;
        if p.step_minutes == 0 {
            return bad("pipeline.step_minutes must be > 0".into());
        }
        if p.max_gap_hours == 0 {
            return bad("pipeline.max_gap_hours must be > 0".into());
        }
        if let WindowChoice::Fixed(w) = p.ma_window {
            if !(MIN_WINDOW_HOURS..=MAX_WINDOW_HOURS).contains(&w) {
                return bad(format!("pipeline.ma_window {w} outside 1..=168"));
            }
        }
        let i = &self.infiltration;
        let rates = [i.air_exchange, i.air_exchange_min, i.air_exchange_max, i.artifact_area];
        if rates.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("infiltration rates and areas must be finite and >= 0".into());
        }
        if i.air_exchange_min > i.air_exchange_max {
            return bad("infiltration.air_exchange_min exceeds air_exchange_max".into());
        }
        i.deposition_velocity
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(c) = self.risk.chloride {
            if !(c.is_finite() && c >= 0.0) {
                return bad(format!("risk.chloride {c}"));
            }
        }
        if self.risk.thaw_memory_hours == 0 {
            return bad("risk.thaw_memory_hours must be > 0".into());
        }
        for feed in &self.feeds {
            if feed.cadence_minutes == 0 {
                return bad(format!("feed `{}` cadence must be > 0", feed.name));
            }
        }
        if self.schedule.evaluate_every_minutes == Some(0) {
            return bad("schedule.evaluate_every_minutes must be > 0".into());
        }
        Ok(())
    }
}
