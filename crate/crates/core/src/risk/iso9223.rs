//! ISO 9223 environment classification: time-of-wetness (τ), sulfur dioxide
//! (P) and salinity (S) classes combined through a lookup table shipped as a
//! data file.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RiskError;

pub const HOURS_PER_YEAR: f64 = 8760.0;

const DEFAULT_TABLE: &str = include_str!("../../data/iso9223_default.csv");

/// Upper edges (inclusive) of τ1..τ4, in h/yr.
const TOW_EDGES: [f64; 4] = [10.0, 250.0, 2500.0, 5500.0];
/// Upper edges (inclusive) of P0..P3, in µg/m³.
const SO2_EDGES: [f64; 4] = [12.0, 40.0, 90.0, 250.0];
/// Upper edges (inclusive) of S0..S3 chloride deposition, in mg/(m²·d).
const CHLORIDE_EDGES: [f64; 4] = [3.0, 60.0, 300.0, 1500.0];

macro_rules! class_enum {
    ($name:ident, [$($variant:ident = $n:literal),+]) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $n)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $n),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|c| c.as_str() == s)
                    .ok_or_else(|| format!("unknown {} `{s}`", stringify!($name)))
            }
        }
    };
}

class_enum!(TowClass, [T1 = "t1", T2 = "t2", T3 = "t3", T4 = "t4", T5 = "t5"]);
class_enum!(So2Class, [P0 = "P0", P1 = "P1", P2 = "P2", P3 = "P3"]);
class_enum!(SalinityClass, [S0 = "S0", S1 = "S1", S2 = "S2", S3 = "S3"]);
class_enum!(CorrosivityCategory, [C1 = "C1", C2 = "C2", C3 = "C3", C4 = "C4", C5 = "C5"]);

impl CorrosivityCategory {
    pub fn label(self) -> &'static str {
        match self {
            CorrosivityCategory::C1 => "very low",
            CorrosivityCategory::C2 => "low",
            CorrosivityCategory::C3 => "medium",
            CorrosivityCategory::C4 => "high",
            CorrosivityCategory::C5 => "very high",
        }
    }
}

fn bucket(value: f64, edges: &[f64; 4]) -> usize {
    edges.iter().position(|e| value <= *e).unwrap_or(edges.len())
}

impl TowClass {
    pub fn classify(hours_per_year: f64) -> Self {
        Self::ALL[bucket(hours_per_year, &TOW_EDGES)]
    }
}

impl So2Class {
    pub fn classify(so2: f64) -> Result<Self, RiskError> {
        Self::ALL.get(bucket(so2, &SO2_EDGES)).copied().ok_or_else(|| {
            RiskError::OutOfClassification(format!("SO2 {so2} µg/m³ exceeds 250"))
        })
    }
}

impl SalinityClass {
    pub fn classify(chloride: f64) -> Result<Self, RiskError> {
        Self::ALL
            .get(bucket(chloride, &CHLORIDE_EDGES))
            .copied()
            .ok_or_else(|| {
                RiskError::OutOfClassification(format!("chloride {chloride} mg/(m²·d) exceeds 1500"))
            })
    }
}

/// Where the salinity class comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SalinityInput {
    /// Measured chloride deposition, mg/(m²·d).
    Chloride(f64),
    NearSea(bool),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrosivityResult {
    pub tow_class: TowClass,
    pub so2_class: So2Class,
    pub salinity_class: SalinityClass,
    pub category: CorrosivityCategory,
    pub label: String,
}

/// Complete (τ, P, S) → C mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrosivityTable {
    pub version: String,
    cells: BTreeMap<(TowClass, So2Class, SalinityClass), CorrosivityCategory>,
}

impl Default for CorrosivityTable {
    fn default() -> Self {
        Self::parse(DEFAULT_TABLE).expect("shipped corrosivity table is valid")
    }
}

impl CorrosivityTable {
    /// Parses `tau,p,s,category` rows. `#` lines are comments; a
    /// `# version = ...` comment names the table. Every cell must appear once.
    pub fn parse(text: &str) -> Result<Self, RiskError> {
        let bad = |m: String| RiskError::BadTable(m);
        let mut version = String::from("unversioned");
        let mut cells = BTreeMap::new();
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    if k.trim() == "version" {
                        version = v.trim().to_string();
                    }
                }
                continue;
            }
            if !header_seen {
                if line.replace(' ', "") != "tau,p,s,category" {
                    return Err(bad(format!("line {}: expected header `tau,p,s,category`", n + 1)));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(bad(format!("line {}: expected 4 fields", n + 1)));
            }
            let at = |e: String| bad(format!("line {}: {e}", n + 1));
            let key = (
                fields[0].parse::<TowClass>().map_err(at)?,
                fields[1].parse::<So2Class>().map_err(at)?,
                fields[2].parse::<SalinityClass>().map_err(at)?,
            );
            let category: CorrosivityCategory = fields[3].parse().map_err(at)?;
            if cells.insert(key, category).is_some() {
                return Err(bad(format!("line {}: duplicate cell", n + 1)));
            }
        }
        let expected = TowClass::ALL.len() * So2Class::ALL.len() * SalinityClass::ALL.len();
        if cells.len() != expected {
            return Err(bad(format!("{} of {expected} cells present", cells.len())));
        }
        Ok(Self { version, cells })
    }

    pub fn lookup(&self, tow: TowClass, so2: So2Class, salinity: SalinityClass) -> CorrosivityCategory {
        self.cells[&(tow, so2, salinity)]
    }

    pub fn cells(&self) -> impl Iterator<Item = ((TowClass, So2Class, SalinityClass), CorrosivityCategory)> + '_ {
        self.cells.iter().map(|(k, v)| (*k, *v))
    }
}

/// Scales a measured time of wetness to hours per year.
pub fn annualize(hours: f64, period_hours: f64) -> f64 {
    if period_hours <= 0.0 {
        return 0.0;
    }
    hours * HOURS_PER_YEAR / period_hours
}

pub fn iso9223_category(
    table: &CorrosivityTable,
    tow_hours_per_year: f64,
    so2_annual_mean: f64,
    salinity: SalinityInput,
) -> Result<CorrosivityResult, RiskError> {
    if !(tow_hours_per_year.is_finite() && tow_hours_per_year >= 0.0) {
        return Err(RiskError::BadInput(format!("time of wetness {tow_hours_per_year}")));
    }
    if !(so2_annual_mean.is_finite() && so2_annual_mean >= 0.0) {
        return Err(RiskError::BadInput(format!("SO2 {so2_annual_mean}")));
    }
    let tow_class = TowClass::classify(tow_hours_per_year);
    let so2_class = So2Class::classify(so2_annual_mean)?;
    let salinity_class = match salinity {
        SalinityInput::Chloride(c) if c.is_finite() && c >= 0.0 => SalinityClass::classify(c)?,
        SalinityInput::Chloride(c) => return Err(RiskError::BadInput(format!("chloride {c}"))),
        SalinityInput::NearSea(true) => SalinityClass::S1,
        SalinityInput::NearSea(false) => SalinityClass::S0,
    };
    let category = table.lookup(tow_class, so2_class, salinity_class);
    Ok(CorrosivityResult {
        tow_class,
        so2_class,
        salinity_class,
        category,
        label: category.label().to_string(),
    })
}
