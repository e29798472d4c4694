//! Feed acquisition behind a [`Transport`] so tests can substitute canned
//! transcripts for the network.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Placement, Sample, SeriesKey, Variable};
use crate::time::{Timestamp, TimeRange};

use super::metar::{parse_metar, MetarReport, ReferenceMonth};
use super::pollution::{parse_pollution_csv, PollutantRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedKind {
    Metar,
    Pollution,
}

fn default_cadence() -> u64 {
    30
}

/// One configured endpoint. `url` is `http(s)://...`, `file://...` or a plain path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedSource {
    pub name: String,
    pub kind: FeedKind,
    pub url: String,
    /// Bearer token sent with HTTP requests.
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_cadence")]
    pub cadence_minutes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservationPoint {
    pub key: SeriesKey,
    #[serde(flatten)]
    pub sample: Sample,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn fetch(&self, source: &FeedSource) -> Result<String, TransportError>;
}

/// Reads local files and performs blocking HTTP GETs.
#[derive(Debug, Default, Clone, Copy)]
pub struct DefaultTransport;

impl Transport for DefaultTransport {
    fn fetch(&self, source: &FeedSource) -> Result<String, TransportError> {
        let url = source.url.as_str();
        if url.starts_with("http://") || url.starts_with("https://") {
            let client = reqwest::blocking::Client::new();
            let mut request = client.get(url);
            if let Some(token) = &source.token {
                request = request.bearer_auth(token);
            }
            let response = request
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(|e| TransportError(e.to_string()))?;
            response.text().map_err(|e| TransportError(e.to_string()))
        } else {
            let path = url.strip_prefix("file://").unwrap_or(url);
            std::fs::read_to_string(path).map_err(|e| TransportError(format!("{path}: {e}")))
        }
    }
}

/// Transcript keyed by source name; unknown names are unreachable.
#[derive(Debug, Default, Clone)]
pub struct CannedTransport {
    responses: HashMap<String, Result<String, String>>,
}

impl CannedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_body(mut self, source: &str, body: impl Into<String>) -> Self {
        self.responses.insert(source.to_string(), Ok(body.into()));
        self
    }

    pub fn with_failure(mut self, source: &str, reason: impl Into<String>) -> Self {
        self.responses.insert(source.to_string(), Err(reason.into()));
        self
    }
}

impl Transport for CannedTransport {
    fn fetch(&self, source: &FeedSource) -> Result<String, TransportError> {
        match self.responses.get(&source.name) {
            Some(Ok(body)) => Ok(body.clone()),
            Some(Err(reason)) => Err(TransportError(reason.clone())),
            None => Err(TransportError("no route to source".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedError {
    #[error("feed `{feed}` unreachable: {reason}")]
    Unreachable { feed: String, reason: String },
    #[error("feed `{feed}` line {line}: {message}")]
    DecodeError {
        feed: String,
        line: usize,
        message: String,
    },
}

fn point(variable: Variable, timestamp: Timestamp, value: f64) -> ObservationPoint {
    ObservationPoint {
        key: SeriesKey::of(variable, Placement::Outdoor),
        sample: Sample { timestamp, value },
    }
}

/// Outdoor temperature, dew point and wind speed points of one report.
pub fn metar_points(report: &MetarReport) -> [ObservationPoint; 3] {
    [
        point(Variable::Temperature, report.observed_at, report.temperature),
        point(Variable::DewPoint, report.observed_at, report.dew_point),
        point(Variable::WindSpeed, report.observed_at, report.wind_speed),
    ]
}

pub fn pollutant_point(record: &PollutantRecord) -> ObservationPoint {
    point(record.species.into(), record.observed_at, record.concentration)
}

/// Fetches a feed and returns the observations inside `window`, in feed order.
pub fn fetch_feed(
    transport: &dyn Transport,
    source: &FeedSource,
    window: TimeRange,
    reference: ReferenceMonth,
) -> Result<Vec<ObservationPoint>, FeedError> {
    let body = transport.fetch(source).map_err(|e| FeedError::Unreachable {
        feed: source.name.clone(),
        reason: e.0,
    })?;
    let mut points = Vec::new();
    match source.kind {
        FeedKind::Metar => {
            for (idx, line) in body.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let report = parse_metar(line, reference).map_err(|e| FeedError::DecodeError {
                    feed: source.name.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                if window.contains(&report.observed_at) {
                    points.extend(metar_points(&report));
                }
            }
        }
        FeedKind::Pollution => {
            let batch = parse_pollution_csv(body.as_bytes(), true).map_err(|e| {
                let line = match &e {
                    super::PollutionError::BadRow(row) => row.line,
                    super::PollutionError::BadHeader(_) => 1,
                };
                FeedError::DecodeError {
                    feed: source.name.clone(),
                    line,
                    message: e.to_string(),
                }
            })?;
            points.extend(
                batch
                    .records
                    .iter()
                    .filter(|r| window.contains(&r.observed_at))
                    .map(pollutant_point),
            );
        }
    }
    Ok(points)
}
