//! Deterministic synthetic fixtures: the Kbely use-case year, a benign year
//! and the labelled condensation set used by the window grid search.
//!
//! The files under `fixtures/` in the repository are exactly what these
//! generators emit; a test keeps them in sync.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::engine::{condensation_flags, ValidationData};
use crate::risk::RiskModel;
use crate::store::{HangarProfile, Material};
use crate::time::{format_rfc3339, TimeRange, Timestamp};

/// The use-case hangar: uninsulated, unheated, carpeted, inland.
pub fn kbely_profile() -> HangarProfile {
    HangarProfile {
        near_sea: false,
        ac_installed: false,
        heating_installed: false,
        filters_installed: false,
        insulation_installed: false,
        barriers_installed: false,
        carpets_installed: true,
        walls_material: Material::Wood,
        walls_area: 1004.8,
        roof_material: Material::Steel,
        roof_area: 985.6,
        floor_material: Material::Concrete,
        floor_area: 985.6,
        exhibition_area: 985.6,
        volume: 7884.8,
    }
}

/// A fully equipped hangar with nothing left to install.
pub fn benign_profile() -> HangarProfile {
    HangarProfile {
        near_sea: false,
        ac_installed: true,
        heating_installed: true,
        filters_installed: true,
        insulation_installed: true,
        barriers_installed: true,
        carpets_installed: false,
        walls_material: Material::Concrete,
        walls_area: 1200.0,
        roof_material: Material::Steel,
        roof_area: 1000.0,
        floor_material: Material::Concrete,
        floor_area: 1000.0,
        exhibition_area: 800.0,
        volume: 9000.0,
    }
}

/// Grid step of the Kbely configuration, in minutes. 101 wet grid points
/// of 36 min each make 60.6 h.
pub const KBELY_STEP_MINUTES: i64 = 36;
pub const KBELY_WET_POINTS: usize = 101;
pub const KBELY_TOW_HOURS: f64 = 60.6;

/// A generated fixture directory.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub range: TimeRange,
    /// Relative path and contents.
    pub files: Vec<(&'static str, String)>,
}

impl Fixture {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| *n == name).map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, contents) in &self.files {
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

fn year_start() -> Timestamp {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

fn year_range() -> TimeRange {
    TimeRange::new(year_start(), Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap())
}

fn seasonal(day: f64) -> f64 {
    -(2.0 * PI * (day - 15.0) / 365.0).cos()
}

fn diurnal(hour_of_day: f64) -> f64 {
    (2.0 * PI * (hour_of_day - 9.0) / 24.0).sin()
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn series_row(out: &mut String, variable: &str, placement: &str, ts: Timestamp, value: f64) {
    let _ = writeln!(out, "{variable},{placement},{},{:.2}", format_rfc3339(&ts), round2(value));
}

/// METAR temperature group token, e.g. `M03`.
fn metar_temp(v: f64) -> String {
    let r = v.round() as i64;
    if r < 0 {
        format!("M{:02}", -r)
    } else {
        format!("{r:02}")
    }
}

struct OutdoorClimate {
    mean: f64,
    seasonal_amp: f64,
    daily_amp: f64,
    spread_min: f64,
    spread_max: f64,
}

fn metar_year(rng: &mut StdRng, station: &str, climate: &OutdoorClimate) -> String {
    let mut out = String::new();
    let start = year_start();
    for h in (0..=8760).step_by(3) {
        let ts = start + Duration::hours(h);
        let day = h as f64 / 24.0;
        let t = climate.mean
            + climate.seasonal_amp * seasonal(day)
            + climate.daily_amp * diurnal((h % 24) as f64)
            + rng.gen_range(-1.0..1.0);
        let spread = rng.gen_range(climate.spread_min..climate.spread_max);
        let (tt, dd) = (metar_temp(t), metar_temp(t - spread));
        let dir = rng.gen_range(0..36) * 10;
        let speed = rng.gen_range(0..16);
        let wind = if speed == 0 {
            "00000KT".to_string()
        } else if speed < 3 {
            format!("VRB{speed:02}KT")
        } else {
            format!("{dir:03}{speed:02}KT")
        };
        let qnh = 1013 + rng.gen_range(-15..16);
        let weather = if spread < 1.5 { " BR" } else { "" };
        let _ = writeln!(
            out,
            "{} {station} {}Z {wind} 9999{weather} {tt}/{dd} Q{qnh}",
            ts.format("%Y%m%d%H%M"),
            ts.format("%d%H%M"),
        );
    }
    out
}

struct Pollution {
    so2: f64,
    pm10: f64,
    pm25: f64,
}

fn pollution_year(rng: &mut StdRng, station: &str, level: &Pollution) -> String {
    let mut out = String::from("station_id,timestamp_utc,species,concentration_ug_m3\n");
    let start = year_start();
    for h in (0..=8760).step_by(3) {
        let ts = format_rfc3339(&(start + Duration::hours(h)));
        let summer = seasonal(h as f64 / 24.0);
        let rows = [
            ("SO2", level.so2 * (1.0 - 0.4 * summer) + rng.gen_range(-0.5..0.5)),
            ("PM10", level.pm10 * (1.0 - 0.2 * summer) + rng.gen_range(-2.0..2.0)),
            ("PM2.5", level.pm25 * (1.0 - 0.2 * summer) + rng.gen_range(-1.0..1.0)),
        ];
        for (species, v) in rows {
            let _ = writeln!(out, "{station},{ts},{species},{:.2}", round2(v.max(0.1)));
        }
    }
    out
}

fn profile_json(profile: &HangarProfile) -> String {
    let mut text = serde_json::to_string_pretty(profile).unwrap_or_default();
    text.push('\n');
    text
}

const KBELY_CONFIG: &str = r#"# Kbely use case: one synthetic year on a 36-minute grid.
listen = "127.0.0.1:8080"
storage = "store"

[pipeline]
step_minutes = 36
max_gap_hours = 6
ma_window = 24
validation = "../validation/condensation.csv"

[infiltration]
air_exchange = 0.5
air_exchange_min = 0.1
air_exchange_max = 1.0
artifact_area = 0.0

[risk]
thaw_memory_hours = 24
"#;

const BENIGN_CONFIG: &str = r#"# Benign year: a fully equipped hangar with a mild, dry climate.
listen = "127.0.0.1:8080"
storage = "store"

[pipeline]
step_minutes = 60
max_gap_hours = 6
ma_window = 24

[infiltration]
air_exchange = 0.3
air_exchange_min = 0.1
air_exchange_max = 0.6
"#;

/// Grid indices (on the 36-minute grid) of the wet episodes: 33 episodes of
/// three points and one of two, in the warm half of the year.
pub fn kbely_wet_episodes() -> Vec<(usize, usize)> {
    let per_day = (24 * 60 / KBELY_STEP_MINUTES) as usize;
    (0..34)
        .map(|k| {
            let start = (130 + 4 * k) * per_day + per_day / 2;
            let len = if k == 33 { 2 } else { 3 };
            (start, len)
        })
        .collect()
}

fn kbely_indoor(rng: &mut StdRng) -> String {
    let start = year_start();
    let step = Duration::minutes(KBELY_STEP_MINUTES);
    let grid = |i: usize| start + step * i as i32;
    let episodes = kbely_wet_episodes();
    let blocked = |ts: Timestamp| {
        episodes
            .iter()
            .any(|(s, len)| ts >= grid(s - 1) && ts <= grid(s + len))
    };
    let baseline_rh = |ts: Timestamp, noise: f64| {
        let hours = (ts - start).num_seconds() as f64 / 3600.0;
        let day = hours / 24.0;
        (60.0 + 8.0 * (2.0 * PI * day / 365.0 + 1.0).sin() - 4.0 * diurnal(hours % 24.0) + noise)
            .clamp(35.0, 75.0)
    };

    let mut rows: Vec<(Timestamp, &str, f64)> = Vec::new();
    for h in 0..=8760i64 {
        let ts = start + Duration::hours(h);
        let day = h as f64 / 24.0;
        let t = 9.0 + 11.0 * seasonal(day) + 3.0 * diurnal((h % 24) as f64) + rng.gen_range(-0.3..0.3);
        rows.push((ts, "temperature", t));
        let noise = rng.gen_range(-1.0..1.0);
        if !blocked(ts) {
            rows.push((ts, "relative_humidity", baseline_rh(ts, noise)));
        }
    }
    for (s, len) in &episodes {
        rows.push((grid(s - 1), "relative_humidity", baseline_rh(grid(s - 1), 0.0)));
        for i in *s..s + len {
            rows.push((grid(i), "relative_humidity", 90.0));
        }
        rows.push((grid(s + len), "relative_humidity", baseline_rh(grid(s + len), 0.0)));
    }
    rows.sort_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)));

    let mut out = String::from("variable,placement,timestamp_utc,value\n");
    for (ts, variable, value) in rows {
        series_row(&mut out, variable, "indoor", ts, value);
    }
    out
}

/// The use-case year: annual indoor TOW of exactly 60.6 h, frequent winter
/// freeze-thaw crossings, low SO2 and moderate dust.
pub fn kbely_fixture() -> Fixture {
    let mut rng = StdRng::seed_from_u64(0x4b42_454c);
    let indoor = kbely_indoor(&mut rng);
    let climate = OutdoorClimate {
        mean: 9.0,
        seasonal_amp: 12.0,
        daily_amp: 5.0,
        spread_min: 1.0,
        spread_max: 8.0,
    };
    let metar = metar_year(&mut rng, "LKKB", &climate);
    let pollution = pollution_year(&mut rng, "AKBE", &Pollution { so2: 5.0, pm10: 25.0, pm25: 15.0 });
    Fixture {
        name: "kbely",
        range: year_range(),
        files: vec![
            ("config.toml", KBELY_CONFIG.to_string()),
            ("profile.json", profile_json(&kbely_profile())),
            ("metar.txt", metar),
            ("pollution.csv", pollution),
            ("indoor.csv", indoor),
        ],
    }
}

/// A dry, mild year in an equipped hangar: no wetness, no thaws, zero risk.
pub fn benign_fixture() -> Fixture {
    let mut rng = StdRng::seed_from_u64(0x0be9_1a11);
    let start = year_start();
    let mut temps = String::new();
    let mut hums = String::new();
    for h in 0..=8760i64 {
        let ts = start + Duration::hours(h);
        let day = h as f64 / 24.0;
        let t = 19.0 + 1.5 * seasonal(day) + 1.0 * diurnal((h % 24) as f64) + rng.gen_range(-0.2..0.2);
        let rh = 45.0 + 5.0 * (2.0 * PI * day / 365.0).sin() + rng.gen_range(-2.0..2.0);
        series_row(&mut temps, "temperature", "indoor", ts, t);
        series_row(&mut hums, "relative_humidity", "indoor", ts, rh);
    }
    let indoor = format!("variable,placement,timestamp_utc,value\n{temps}{hums}");
    let climate = OutdoorClimate {
        mean: 14.0,
        seasonal_amp: 4.0,
        daily_amp: 3.0,
        spread_min: 6.0,
        spread_max: 12.0,
    };
    let metar = metar_year(&mut rng, "LKKB", &climate);
    let pollution = pollution_year(&mut rng, "AKBE", &Pollution { so2: 3.0, pm10: 10.0, pm25: 6.0 });
    Fixture {
        name: "benign",
        range: year_range(),
        files: vec![
            ("config.toml", BENIGN_CONFIG.to_string()),
            ("profile.json", profile_json(&benign_profile())),
            ("metar.txt", metar),
            ("pollution.csv", pollution),
            ("indoor.csv", indoor),
        ],
    }
}

/// Moving-average window the validation labels were produced with.
pub const VALIDATION_WINDOW_HOURS: u32 = 24;

/// Sixty days of noisy hourly indoor readings whose condensation labels are
/// the default scorer's verdict on the same data smoothed over 24 h.
pub fn validation_fixture() -> Fixture {
    let mut rng = StdRng::seed_from_u64(0x7661_6c69);
    let start = year_start() + Duration::days(120);
    let hours = 60 * 24;
    let mut data = ValidationData::new(start, Duration::hours(1));
    for h in 0..hours {
        let t = 12.0 + 4.0 * (2.0 * PI * h as f64 / 24.0).sin() + rng.gen_range(-1.5..1.5);
        let rh = 82.0 + 16.0 * (2.0 * PI * h as f64 / 96.0).sin() + rng.gen_range(-8.0..8.0);
        let so2 = 30.0 + rng.gen_range(-10.0..10.0);
        data.push(round2(t), round2(rh.clamp(5.0, 100.0)), round2(so2), false);
    }
    let labels = condensation_flags(&data, VALIDATION_WINDOW_HOURS, &RiskModel::default())
        .expect("validation data is well formed");
    data.condensation = labels.into_iter().map(|l| l.unwrap_or(false)).collect();
    Fixture {
        name: "validation",
        range: TimeRange::new(start, start + Duration::hours(hours as i64)),
        files: vec![("condensation.csv", data.to_csv())],
    }
}

/// Every shipped generated fixture.
pub fn all_fixtures() -> Vec<Fixture> {
    vec![kbely_fixture(), benign_fixture(), validation_fixture()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::time_of_wetness;
    use crate::pipeline::{resample_onto, Grid};
    use crate::store::{import_series_csv, ObservationSeries, Placement, SeriesKey, Variable};

    #[test]
    fn kbely_indoor_wetness_is_exactly_engineered() {
        let fixture = kbely_fixture();
        let batch = import_series_csv(fixture.file("indoor.csv").unwrap().as_bytes()).unwrap();
        assert!(batch.errors.is_empty());
        let grid = Grid::covering(
            fixture.range.start,
            fixture.range.end,
            Duration::minutes(KBELY_STEP_MINUTES),
        )
        .unwrap();
        let get = |v: Variable| {
            let key = SeriesKey::of(v, Placement::Indoor);
            let s = ObservationSeries::new(key, batch.series[&key].clone()).unwrap();
            resample_onto(&s, grid, Duration::hours(6)).unwrap()
        };
        let (t, rh) = (get(Variable::Temperature), get(Variable::RelativeHumidity));
        let wet = t
            .values
            .iter()
            .zip(&rh.values)
            .filter(|(t, rh)| matches!((t, rh), (Some(t), Some(rh)) if *rh > 80.0 && *t > 0.0))
            .count();
        assert_eq!(wet, KBELY_WET_POINTS);
        assert_eq!(time_of_wetness(&t, &rh).unwrap(), KBELY_TOW_HOURS);
    }

    #[test]
    fn generators_are_deterministic() {
        let a = kbely_fixture();
        let b = kbely_fixture();
        assert_eq!(a.files, b.files);
        assert_eq!(validation_fixture().files, validation_fixture().files);
    }

    #[test]
    fn metar_lines_parse() {
        use crate::ingest::{parse_metar, ReferenceMonth};
        let fixture = benign_fixture();
        let reference = ReferenceMonth::new(2023, 1).unwrap();
        for line in fixture.file("metar.txt").unwrap().lines() {
            parse_metar(line, reference).unwrap_or_else(|e| panic!("{line}: {e}"));
        }
    }
}
