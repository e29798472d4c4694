//! Pollutant concentration feed in the canonical CSV interchange format.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{parse_rfc3339, Timestamp};

pub const POLLUTION_HEADER: [&str; 4] = [
    "station_id",
    "timestamp_utc",
    "species",
    "concentration_ug_m3",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Species {
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

impl Species {
    pub const ALL: [Species; 6] = [
        Species::So2,
        Species::No2,
        Species::Co,
        Species::O3,
        Species::Pm10,
        Species::Pm25,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Species::So2 => "SO2",
            Species::No2 => "NO2",
            Species::Co => "CO",
            Species::O3 => "O3",
            Species::Pm10 => "PM10",
            Species::Pm25 => "PM2.5",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Species {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Species::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| format!("unknown species `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutantRecord {
    pub station_id: String,
    #[serde(with = "crate::time::rfc3339")]
    pub observed_at: Timestamp,
    pub species: Species,
    /// µg/m³
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the input; the header is line 1.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PollutionError {
    #[error("bad header: expected `{}`, got `{0}`", POLLUTION_HEADER.join(","))]
    BadHeader(String),
    #[error("bad row at line {}: {}", .0.line, .0.reason)]
    BadRow(RowError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PollutionBatch {
    pub records: Vec<PollutantRecord>,
    pub errors: Vec<RowError>,
}

fn decode_row(row: &csv::StringRecord) -> Result<PollutantRecord, String> {
    if row.len() != POLLUTION_HEADER.len() {
        return Err(format!("expected 4 fields, got {}", row.len()));
    }
    let station_id = row[0].trim();
    if station_id.is_empty() {
        return Err("empty station_id".into());
    }
    let observed_at =
        parse_rfc3339(&row[1]).ok_or_else(|| format!("bad timestamp `{}`", &row[1]))?;
    let species: Species = row[2].trim().parse()?;
    let concentration: f64 = row[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad concentration `{}`", &row[3]))?;
    if !concentration.is_finite() {
        return Err("non-finite concentration".into());
    }
    if concentration < 0.0 {
        return Err("negative concentration".into());
    }
    Ok(PollutantRecord {
        station_id: station_id.to_string(),
        observed_at,
        species,
        concentration,
    })
}

/// Decodes a pollutant CSV stream. Bad rows are collected in
/// [`PollutionBatch::errors`] unless `strict`, in which case the first one aborts.
pub fn parse_pollution_csv<R: Read>(input: R, strict: bool) -> Result<PollutionBatch, PollutionError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(PollutionError::BadHeader(e.to_string())),
        None => return Err(PollutionError::BadHeader(String::new())),
    };
    let header_fields: Vec<&str> = header.iter().map(str::trim).collect();
    if header_fields != POLLUTION_HEADER {
        return Err(PollutionError::BadHeader(header_fields.join(",")));
    }

    let mut batch = PollutionBatch::default();
    for row in rows {
        let (line, decoded) = match row {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line() as usize);
                (line, decode_row(&r))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                (line, Err(e.to_string()))
            }
        };
        match decoded {
            Ok(rec) => batch.records.push(rec),
            Err(reason) => {
                let err = RowError { line, reason };
                if strict {
                    return Err(PollutionError::BadRow(err));
                }
                batch.errors.push(err);
            }
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "station_id,timestamp_utc,species,concentration_ug_m3\n";

    #[test]
    fn decodes_valid_row() {
        let text = format!("{HEADER}AHOL,2023-01-05T12:00:00Z,SO2,7.1\n");
        let batch = parse_pollution_csv(text.as_bytes(), false).unwrap();
        assert_eq!(batch.records.len(), 1);
        assert_eq!(batch.records[0].species, Species::So2);
        assert_eq!(batch.records[0].concentration, 7.1);
        assert!(batch.errors.is_empty());
    }

    #[test]
    fn negative_concentration_is_a_bad_row() {
        let text = format!(
            "{HEADER}AHOL,2023-01-05T12:00:00Z,SO2,-1\nAHOL,2023-01-05T13:00:00Z,PM2.5,4\n"
        );
        let batch = parse_pollution_csv(text.as_bytes(), false).unwrap();
        assert_eq!(batch.records.len(), 1);
        assert_eq!(batch.records[0].species, Species::Pm25);
        assert_eq!(
            batch.errors,
            vec![RowError {
                line: 2,
                reason: "negative concentration".into()
            }]
        );
        let strict = parse_pollution_csv(text.as_bytes(), true).unwrap_err();
        assert!(matches!(strict, PollutionError::BadRow(RowError { line: 2, .. })));
    }

    #[test]
    fn empty_body_is_empty_list() {
        let batch = parse_pollution_csv(HEADER.as_bytes(), true).unwrap();
        assert!(batch.records.is_empty());
    }

    #[test]
    fn header_must_match_exactly() {
        let err = parse_pollution_csv("station,ts,species,value\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, PollutionError::BadHeader(_)));
        assert!(matches!(
            parse_pollution_csv("".as_bytes(), false),
            Err(PollutionError::BadHeader(_))
        ));
    }

    #[test]
    fn collects_every_kind_of_bad_row() {
        let text = format!(
            "{HEADER}AHOL,yesterday,SO2,1\nAHOL,2023-01-05T12:00:00Z,NOX,1\nAHOL,2023-01-05T12:00:00Z,O3\n,2023-01-05T12:00:00Z,O3,1\nAHOL,2023-01-05T12:00:00Z,CO,abc\n"
        );
        let batch = parse_pollution_csv(text.as_bytes(), false).unwrap();
        assert!(batch.records.is_empty());
        let lines: Vec<usize> = batch.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 3, 4, 5, 6]);
    }
}
