use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DecisionError;
use crate::risk::CorrosivityCategory;
use crate::store::{HangarProfile, Material};

pub const FEATURE_COUNT: usize = 27;

/// How a feature is encoded and split on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// `false` = 0, `true` = 1.
    Flag,
    /// wood = 0, steel = 1, concrete = 2.
    Material,
    /// C1 = 0 .. C5 = 4.
    Category,
    Numeric,
}

impl FeatureKind {
    pub fn is_categorical(self) -> bool {
        !matches!(self, FeatureKind::Numeric)
    }

    pub fn levels(self) -> usize {
        match self {
            FeatureKind::Flag => 2,
            FeatureKind::Material => 3,
            FeatureKind::Category => 5,
            FeatureKind::Numeric => 0,
        }
    }

    pub fn format_value(self, code: f64) -> String {
        match self {
            FeatureKind::Flag => (code != 0.0).to_string(),
            FeatureKind::Material => material_from_code(code)
                .map(|m| m.as_str().to_string())
                .unwrap_or_else(|| code.to_string()),
            FeatureKind::Category => category_from_code(code)
                .map(|c| c.as_str().to_string())
                .unwrap_or_else(|| code.to_string()),
            FeatureKind::Numeric => code.to_string(),
        }
    }

    pub fn parse_value(self, text: &str) -> Result<f64, String> {
        let text = text.trim();
        match self {
            FeatureKind::Flag => match text {
                "true" => Ok(1.0),
                "false" => Ok(0.0),
                _ => Err(format!("expected true or false, got `{text}`")),
            },
            FeatureKind::Material => Material::ALL
                .iter()
                .position(|m| m.as_str() == text)
                .map(|i| i as f64)
                .ok_or_else(|| format!("unknown material `{text}`")),
            FeatureKind::Category => text
                .parse::<CorrosivityCategory>()
                .map(category_code),
            FeatureKind::Numeric => text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("expected a finite number, got `{text}`")),
        }
    }
}

macro_rules! features {
    ($($variant:ident = $name:literal : $kind:ident),+ $(,)?) => {
        /// One column of the decision tree's input vector.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Feature {
            $($variant),+
        }

        impl Feature {
            pub const ALL: [Feature; FEATURE_COUNT] = [$(Feature::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(Feature::$variant => $name),+
                }
            }

            pub fn kind(self) -> FeatureKind {
                match self {
                    $(Feature::$variant => FeatureKind::$kind),+
                }
            }
        }
    };
}

features! {
    NearSea = "near_sea": Flag,
    AcInstalled = "ac_installed": Flag,
    HeatingInstalled = "heating_installed": Flag,
    FiltersInstalled = "filters_installed": Flag,
    InsulationInstalled = "insulation_installed": Flag,
    BarriersInstalled = "barriers_installed": Flag,
    CarpetsInstalled = "carpets_installed": Flag,
    WallsMaterial = "walls_material": Material,
    WallsArea = "walls_area": Numeric,
    RoofMaterial = "roof_material": Material,
    RoofArea = "roof_area": Numeric,
    FloorMaterial = "floor_material": Material,
    FloorArea = "floor_area": Numeric,
    ExhibitionArea = "exhibition_area": Numeric,
    Volume = "volume": Numeric,
    TimeOfWetness = "time_of_wetness": Numeric,
    IsoCategory = "iso_category": Category,
    MeanRisk = "mean_risk": Numeric,
    MaxRisk = "max_risk": Numeric,
    FreezeThawEvents = "freeze_thaw_events": Numeric,
    IndoorSo2Annual = "indoor_so2_annual": Numeric,
    IndoorPm10Annual = "indoor_pm10_annual": Numeric,
    IndoorPm25Annual = "indoor_pm25_annual": Numeric,
    OccupancyKnown = "occupancy_known": Flag,
    Occupancy = "occupancy": Numeric,
    AreaVolumeRatio = "area_volume_ratio": Numeric,
    IndoorDrierThanOutdoor = "indoor_drier_than_outdoor": Flag,
}

impl Feature {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

fn material_code(m: Material) -> f64 {
    Material::ALL.iter().position(|x| *x == m).unwrap_or(0) as f64
}

fn material_from_code(code: f64) -> Option<Material> {
    Material::ALL.get(code as usize).copied().filter(|_| code >= 0.0 && code.fract() == 0.0)
}

fn category_code(c: CorrosivityCategory) -> f64 {
    CorrosivityCategory::ALL.iter().position(|x| *x == c).unwrap_or(0) as f64
}

fn category_from_code(code: f64) -> Option<CorrosivityCategory> {
    CorrosivityCategory::ALL
        .get(code as usize)
        .copied()
        .filter(|_| code >= 0.0 && code.fract() == 0.0)
}

/// The flattened input vector: the hangar profile plus the calculated features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionInput {
    pub profile: HangarProfile,
    /// h/yr.
    pub time_of_wetness: f64,
    pub iso_category: CorrosivityCategory,
    pub mean_risk: f64,
    pub max_risk: f64,
    /// Upward 0 °C crossings per year.
    pub freeze_thaw_events: f64,
    pub indoor_so2_annual: f64,
    pub indoor_pm10_annual: f64,
    #[serde(rename = "indoor_pm2_5_annual")]
    pub indoor_pm25_annual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupancy: Option<f64>,
    /// exhibition_area / volume, 1/m.
    pub area_volume_ratio: f64,
    /// Mean indoor dew point below mean outdoor dew point over the evaluated period.
    #[serde(default)]
    pub indoor_drier_than_outdoor: bool,
}

impl DecisionInput {
    /// An input where nothing calls for action, built around `profile`.
    pub fn quiet(profile: HangarProfile) -> Self {
        let area_volume_ratio = profile.exhibition_area / profile.volume;
        DecisionInput {
            profile,
            time_of_wetness: 0.0,
            iso_category: CorrosivityCategory::C1,
            mean_risk: 0.0,
            max_risk: 0.0,
            freeze_thaw_events: 0.0,
            indoor_so2_annual: 0.0,
            indoor_pm10_annual: 0.0,
            indoor_pm25_annual: 0.0,
            occupancy: None,
            area_volume_ratio,
            indoor_drier_than_outdoor: false,
        }
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        self.profile
            .validate()
            .map_err(|e| DecisionError::BadInput(format!("{}: {}", e.field, e.reason)))?;
        for feature in Feature::ALL {
            if feature.kind() == FeatureKind::Numeric {
                let v = self.get(feature);
                if !v.is_finite() || v < 0.0 {
                    return Err(DecisionError::BadInput(format!(
                        "{feature} must be finite and >= 0, got {v}"
                    )));
                }
            }
        }
        for (feature, v) in [(Feature::MeanRisk, self.mean_risk), (Feature::MaxRisk, self.max_risk)] {
            if v > 1.0 {
                return Err(DecisionError::BadInput(format!("{feature} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Encoded value of one feature.
    pub fn get(&self, feature: Feature) -> f64 {
        let p = &self.profile;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match feature {
            Feature::NearSea => flag(p.near_sea),
            Feature::AcInstalled => flag(p.ac_installed),
            Feature::HeatingInstalled => flag(p.heating_installed),
            Feature::FiltersInstalled => flag(p.filters_installed),
            Feature::InsulationInstalled => flag(p.insulation_installed),
            Feature::BarriersInstalled => flag(p.barriers_installed),
            Feature::CarpetsInstalled => flag(p.carpets_installed),
            Feature::WallsMaterial => material_code(p.walls_material),
            Feature::WallsArea => p.walls_area,
            Feature::RoofMaterial => material_code(p.roof_material),
            Feature::RoofArea => p.roof_area,
            Feature::FloorMaterial => material_code(p.floor_material),
            Feature::FloorArea => p.floor_area,
            Feature::ExhibitionArea => p.exhibition_area,
            Feature::Volume => p.volume,
            Feature::TimeOfWetness => self.time_of_wetness,
            Feature::IsoCategory => category_code(self.iso_category),
            Feature::MeanRisk => self.mean_risk,
            Feature::MaxRisk => self.max_risk,
            Feature::FreezeThawEvents => self.freeze_thaw_events,
            Feature::IndoorSo2Annual => self.indoor_so2_annual,
            Feature::IndoorPm10Annual => self.indoor_pm10_annual,
            Feature::IndoorPm25Annual => self.indoor_pm25_annual,
            Feature::OccupancyKnown => flag(self.occupancy.is_some()),
            Feature::Occupancy => self.occupancy.unwrap_or(0.0),
            Feature::AreaVolumeRatio => self.area_volume_ratio,
            Feature::IndoorDrierThanOutdoor => flag(self.indoor_drier_than_outdoor),
        }
    }

    /// Sets one feature from its encoded value. Categorical codes out of range are rejected.
    pub fn set(&mut self, feature: Feature, value: f64) -> Result<(), String> {
        let kind = feature.kind();
        let bad = || format!("{} is not a valid code for {feature}", kind.format_value(value));
        let flag = || match value {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            _ => Err(bad()),
        };
        let material = || material_from_code(value).ok_or_else(bad);
        let p = &mut self.profile;
        match feature {
            Feature::NearSea => p.near_sea = flag()?,
            Feature::AcInstalled => p.ac_installed = flag()?,
            Feature::HeatingInstalled => p.heating_installed = flag()?,
            Feature::FiltersInstalled => p.filters_installed = flag()?,
            Feature::InsulationInstalled => p.insulation_installed = flag()?,
            Feature::BarriersInstalled => p.barriers_installed = flag()?,
            Feature::CarpetsInstalled => p.carpets_installed = flag()?,
            Feature::WallsMaterial => p.walls_material = material()?,
            Feature::WallsArea => p.walls_area = value,
            Feature::RoofMaterial => p.roof_material = material()?,
            Feature::RoofArea => p.roof_area = value,
            Feature::FloorMaterial => p.floor_material = material()?,
            Feature::FloorArea => p.floor_area = value,
            Feature::ExhibitionArea => p.exhibition_area = value,
            Feature::Volume => p.volume = value,
            Feature::TimeOfWetness => self.time_of_wetness = value,
            Feature::IsoCategory => self.iso_category = category_from_code(value).ok_or_else(bad)?,
            Feature::MeanRisk => self.mean_risk = value,
            Feature::MaxRisk => self.max_risk = value,
            Feature::FreezeThawEvents => self.freeze_thaw_events = value,
            Feature::IndoorSo2Annual => self.indoor_so2_annual = value,
            Feature::IndoorPm10Annual => self.indoor_pm10_annual = value,
            Feature::IndoorPm25Annual => self.indoor_pm25_annual = value,
            Feature::OccupancyKnown => {
                self.occupancy = if flag()? { Some(self.occupancy.unwrap_or(0.0)) } else { None }
            }
            Feature::Occupancy => self.occupancy = Some(value),
            Feature::AreaVolumeRatio => self.area_volume_ratio = value,
            Feature::IndoorDrierThanOutdoor => self.indoor_drier_than_outdoor = flag()?,
        }
        Ok(())
    }

    pub fn encode(&self) -> [f64; FEATURE_COUNT] {
        Feature::ALL.map(|f| self.get(f))
    }
}
