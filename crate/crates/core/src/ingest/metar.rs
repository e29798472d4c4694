//! Decoder for the METAR subset the hangar model consumes.
//!
//! Recognised groups: optional archive prefix (`YYYYMMDDHHMM`), optional
//! `METAR` keyword, station, `DDHHMMZ`, `AUTO`/`COR`, wind (incl. `VRB`,
//! gusts and a trailing `dddVddd` variability group), present weather,
//! temperature/dew point and `Q`/`A` pressure. Everything else (visibility,
//! clouds, RVR) is kept in `raw` and skipped; `RMK` and trend groups end
//! decoding.

use std::fmt;
use std::sync::OnceLock;

use chrono::{NaiveDate, TimeZone, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

/// Exact knot to metre-per-second factor used for every `KT` wind group.
pub const KNOT_TO_MPS: f64 = 0.514444;
const INHG_TO_HPA: f64 = 33.8639;
/// Allowed excess of dew point over temperature caused by whole-degree rounding.
const DEW_POINT_SLACK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindDirection {
    Degrees(u16),
    Variable,
}

impl fmt::Display for WindDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindDirection::Degrees(d) => write!(f, "{d}"),
            WindDirection::Variable => f.write_str("variable"),
        }
    }
}

/// Month used to resolve the day-of-month time group, which carries no month.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceMonth {
    pub year: i32,
    pub month: u32,
}

impl ReferenceMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, 1).map(|_| Self { year, month })
    }

    pub fn of(ts: &Timestamp) -> Self {
        use chrono::Datelike;
        Self {
            year: ts.year(),
            month: ts.month(),
        }
    }
}

impl std::str::FromStr for ReferenceMonth {
    type Err = String;

    /// Accepts `YYYY-MM`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("expected YYYY-MM, got `{s}`"))?;
        let year = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        Self::new(year, month).ok_or_else(|| format!("no such month `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetarReport {
    pub station: String,
    #[serde(with = "crate::time::rfc3339")]
    pub observed_at: Timestamp,
    pub wind_direction: WindDirection,
    /// m/s
    pub wind_speed: f64,
    /// m/s
    pub wind_gust: Option<f64>,
    /// °C
    pub temperature: f64,
    /// °C
    pub dew_point: f64,
    /// hPa
    pub pressure: Option<f64>,
    pub weather_codes: Vec<String>,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetarGroup {
    ReportType,
    Station,
    Time,
    Wind,
    TemperatureDewPoint,
}

impl fmt::Display for MetarGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetarGroup::ReportType => "report type",
            MetarGroup::Station => "station",
            MetarGroup::Time => "time",
            MetarGroup::Wind => "wind",
            MetarGroup::TemperatureDewPoint => "temperature/dew-point",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetarError {
    #[error("malformed report: {group} group")]
    MalformedReport { group: MetarGroup },
    #[error("unknown wind unit `{0}`")]
    UnknownUnit(String),
}

impl MetarError {
    fn malformed(group: MetarGroup) -> Self {
        MetarError::MalformedReport { group }
    }
}

struct Patterns {
    archive: Regex,
    station: Regex,
    time: Regex,
    wind: Regex,
    variability: Regex,
    weather: Regex,
    temperature: Regex,
    temperature_prefix: Regex,
    pressure: Regex,
}

fn patterns() -> &'static Patterns {
    static PATTERNS: OnceLock<Patterns> = OnceLock::new();
    PATTERNS.get_or_init(|| Patterns {
        archive: Regex::new(r"^(\d{4})(\d{2})(\d{2})(\d{2})(\d{2})$").unwrap(),
        station: Regex::new(r"^[A-Z][A-Z0-9]{3}$").unwrap(),
        time: Regex::new(r"^(\d{2})(\d{2})(\d{2})Z$").unwrap(),
        wind: Regex::new(r"^(\d{3}|VRB)(\d{2,3})(?:G(\d{2,3}))?([A-Z]+)$").unwrap(),
        variability: Regex::new(r"^\d{3}V\d{3}$").unwrap(),
        weather: Regex::new(
            r"^(\+|-|VC)?(MI|PR|BC|DR|BL|SH|TS|FZ)?((?:DZ|RA|SN|SG|IC|PL|GR|GS|UP|BR|FG|FU|VA|DU|SA|HZ|PY|PO|SQ|FC|SS|DS)*)$",
        )
        .unwrap(),
        temperature: Regex::new(r"^(M?)(\d{2})/(M?)(\d{2})$").unwrap(),
        temperature_prefix: Regex::new(r"^M?\d{2}/").unwrap(),
        pressure: Regex::new(r"^([QA])(\d{4})$").unwrap(),
    })
}

fn is_terminator(token: &str) -> bool {
    matches!(token, "RMK" | "NOSIG" | "BECMG" | "TEMPO")
}

fn is_weather_token(token: &str) -> bool {
    match patterns().weather.captures(token) {
        Some(c) => c.get(2).is_some() || !c[3].is_empty(),
        None => false,
    }
}

fn signed(minus: &str, digits: &str) -> f64 {
    let v: f64 = digits.parse().unwrap_or(0.0);
    if minus == "M" {
        -v
    } else {
        v
    }
}

/// Decodes one report line. `reference` resolves the day-of-month time group
/// unless the line carries its own archive prefix.
pub fn parse_metar(text: &str, reference: ReferenceMonth) -> Result<MetarReport, MetarError> {
    let p = patterns();
    let raw = text.trim().to_string();
    let mut tokens = raw.split_whitespace().peekable();
    let mut reference = reference;

    if let Some(tok) = tokens.peek() {
        if let Some(c) = p.archive.captures(tok) {
            let year: i32 = c[1].parse().unwrap();
            let month: u32 = c[2].parse().unwrap();
            reference =
                ReferenceMonth::new(year, month).ok_or(MetarError::malformed(MetarGroup::Time))?;
            tokens.next();
        }
    }
    match tokens.peek().copied() {
        Some("METAR") => {
            tokens.next();
        }
        Some("SPECI") => return Err(MetarError::malformed(MetarGroup::ReportType)),
        _ => {}
    }

    let station = tokens
        .next()
        .filter(|t| p.station.is_match(t))
        .ok_or(MetarError::malformed(MetarGroup::Station))?
        .to_string();

    let time = tokens
        .next()
        .and_then(|t| p.time.captures(t))
        .ok_or(MetarError::malformed(MetarGroup::Time))?;
    let day: u32 = time[1].parse().unwrap();
    let hour: u32 = time[2].parse().unwrap();
    let minute: u32 = time[3].parse().unwrap();
    let observed_at = NaiveDate::from_ymd_opt(reference.year, reference.month, day)
        .and_then(|d| d.and_hms_opt(hour, minute, 0))
        .map(|naive| Utc.from_utc_datetime(&naive))
        .ok_or(MetarError::malformed(MetarGroup::Time))?;

    while matches!(tokens.peek().copied(), Some("AUTO") | Some("COR")) {
        tokens.next();
    }

    let wind_token = tokens.next().ok_or(MetarError::malformed(MetarGroup::Wind))?;
    let wind = p
        .wind
        .captures(wind_token)
        .ok_or(MetarError::malformed(MetarGroup::Wind))?;
    let factor = match &wind[4] {
        "KT" => KNOT_TO_MPS,
        "MPS" => 1.0,
        other => return Err(MetarError::UnknownUnit(other.to_string())),
    };
    let wind_direction = match &wind[1] {
        "VRB" => WindDirection::Variable,
        digits => {
            let deg: u16 = digits.parse().unwrap();
            if deg > 360 {
                return Err(MetarError::malformed(MetarGroup::Wind));
            }
            WindDirection::Degrees(deg % 360)
        }
    };
    let wind_speed = wind[2].parse::<f64>().unwrap() * factor;
    let wind_gust = wind
        .get(3)
        .map(|g| g.as_str().parse::<f64>().unwrap() * factor);

    let mut weather_codes = Vec::new();
    let mut temps: Option<(f64, f64)> = None;
    let mut pressure = None;
    for token in tokens {
        if is_terminator(token) {
            break;
        }
        if p.variability.is_match(token) {
            continue;
        }
        if let Some(c) = p.temperature.captures(token) {
            temps = Some((signed(&c[1], &c[2]), signed(&c[3], &c[4])));
        } else if p.temperature_prefix.is_match(token) {
            return Err(MetarError::malformed(MetarGroup::TemperatureDewPoint));
        } else if let Some(c) = p.pressure.captures(token) {
            let value: f64 = c[2].parse().unwrap();
            pressure = Some(if &c[1] == "Q" {
                value
            } else {
                value / 100.0 * INHG_TO_HPA
            });
        } else if temps.is_none() && is_weather_token(token) {
            weather_codes.push(token.to_string());
        }
    }

    let (temperature, dew_point) =
        temps.ok_or(MetarError::malformed(MetarGroup::TemperatureDewPoint))?;
    if dew_point > temperature + DEW_POINT_SLACK {
        return Err(MetarError::malformed(MetarGroup::TemperatureDewPoint));
    }

    Ok(MetarReport {
        station,
        observed_at,
        wind_direction,
        wind_speed,
        wind_gust,
        temperature,
        dew_point,
        pressure,
        weather_codes,
        raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jan_2023() -> ReferenceMonth {
        ReferenceMonth::new(2023, 1).unwrap()
    }

    #[test]
    fn decodes_basic_report() {
        let r = parse_metar("LKKB 121430Z 27008KT 9999 15/08 Q1018", jan_2023()).unwrap();
        assert_eq!(r.station, "LKKB");
        assert_eq!(r.temperature, 15.0);
        assert_eq!(r.dew_point, 8.0);
        assert_eq!(r.wind_direction, WindDirection::Degrees(270));
        assert!((r.wind_speed - 4.115552).abs() < 1e-9);
        assert_eq!(r.pressure, Some(1018.0));
        assert_eq!(
            r.observed_at,
            Utc.with_ymd_and_hms(2023, 1, 12, 14, 30, 0).unwrap()
        );
    }

    #[test]
    fn decodes_negative_temperatures_and_calm_wind() {
        let r = parse_metar("LKKB 010000Z 00000KT M02/M05 Q1020", jan_2023()).unwrap();
        assert_eq!(r.temperature, -2.0);
        assert_eq!(r.dew_point, -5.0);
        assert_eq!(r.wind_speed, 0.0);
        assert_eq!(r.wind_direction, WindDirection::Degrees(0));
    }

    #[test]
    fn truncated_temperature_group_is_malformed() {
        let err = parse_metar("LKKB 121430Z 27008KT 15/", jan_2023()).unwrap_err();
        assert_eq!(
            err,
            MetarError::MalformedReport {
                group: MetarGroup::TemperatureDewPoint
            }
        );
        assert_eq!(err.to_string(), "malformed report: temperature/dew-point group");
    }

    #[test]
    fn variable_wind_is_not_north() {
        let r = parse_metar("LKPR 051200Z VRB02KT CAVOK 21/12 Q1015", jan_2023()).unwrap();
        assert_eq!(r.wind_direction, WindDirection::Variable);
    }

    #[test]
    fn gusts_mps_and_weather_codes() {
        let r = parse_metar(
            "METAR LKKB 030600Z 24012G25MPS 210V280 4000 -SHRA BR BKN012 06/05 Q0998 RMK AO2",
            jan_2023(),
        )
        .unwrap();
        assert_eq!(r.wind_speed, 12.0);
        assert_eq!(r.wind_gust, Some(25.0));
        assert_eq!(r.weather_codes, vec!["-SHRA".to_string(), "BR".to_string()]);
        assert_eq!(r.pressure, Some(998.0));
    }

    #[test]
    fn altimeter_in_inches_converts() {
        let r = parse_metar("KJFK 121451Z 31015KT 10SM FEW250 03/M08 A3012", jan_2023()).unwrap();
        assert!((r.pressure.unwrap() - 30.12 * INHG_TO_HPA).abs() < 1e-9);
    }

    #[test]
    fn unknown_wind_unit() {
        let err = parse_metar("LKKB 121430Z 27015KMH 15/08", jan_2023()).unwrap_err();
        assert_eq!(err, MetarError::UnknownUnit("KMH".into()));
    }

    #[test]
    fn archive_prefix_overrides_reference() {
        let r = parse_metar("202307151200 METAR LKKB 151200Z 09005KT 25/14 Q1012", jan_2023())
            .unwrap();
        assert_eq!(
            r.observed_at,
            Utc.with_ymd_and_hms(2023, 7, 15, 12, 0, 0).unwrap()
        );
    }

    #[test]
    fn missing_groups_name_the_group() {
        let cases = [
            ("", MetarGroup::Station),
            ("lkkb 121430Z 27008KT 15/08", MetarGroup::Station),
            ("LKKB 1214Z 27008KT 15/08", MetarGroup::Time),
            ("LKKB 311430Z 27008KT 15/08", MetarGroup::Time),
            ("LKKB 121430Z 9999 15/08", MetarGroup::Wind),
            ("LKKB 121430Z 27008KT 9999 Q1018", MetarGroup::TemperatureDewPoint),
            ("LKKB 121430Z 27008KT 05/09", MetarGroup::TemperatureDewPoint),
            ("SPECI LKKB 121430Z 27008KT 05/03", MetarGroup::ReportType),
        ];
        let feb = ReferenceMonth::new(2023, 2).unwrap();
        for (text, group) in cases {
            assert_eq!(
                parse_metar(text, feb),
                Err(MetarError::MalformedReport { group }),
                "{text}"
            );
        }
    }

    #[test]
    fn remarks_are_kept_raw_and_skipped() {
        let text = "LKKB 121430Z 27008KT 15/08 Q1018 RMK 12/34 SLP123";
        let r = parse_metar(text, jan_2023()).unwrap();
        assert_eq!(r.temperature, 15.0);
        assert_eq!(r.raw, text);
    }
}
