use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::store::HangarProfile;

pub const OUTPUT_COUNT: usize = 11;

/// One component of the action vector, in the order of the action table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    AirExchange,
    HeatingOp,
    AcOp,
    OccupancyOp,
    ExhibitionRatioOp,
    InstallFilters,
    InstallAc,
    InstallHeating,
    InstallInsulation,
    InstallBarriers,
    UninstallCarpets,
}

const TRI_UP: &[&str] = &["no_action", "increase", "decrease"];
const TRI_START: &[&str] = &["no_action", "start", "stop"];
const CHANGE: &[&str] = &["no_action", "change"];
const YES: &[&str] = &["no_action", "yes"];

impl Output {
    pub const ALL: [Output; OUTPUT_COUNT] = [
        Output::AirExchange,
        Output::HeatingOp,
        Output::AcOp,
        Output::OccupancyOp,
        Output::ExhibitionRatioOp,
        Output::InstallFilters,
        Output::InstallAc,
        Output::InstallHeating,
        Output::InstallInsulation,
        Output::InstallBarriers,
        Output::UninstallCarpets,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Output::AirExchange => "air_exchange",
            Output::HeatingOp => "heating_op",
            Output::AcOp => "ac_op",
            Output::OccupancyOp => "occupancy_op",
            Output::ExhibitionRatioOp => "exhibition_ratio_op",
            Output::InstallFilters => "install_filters",
            Output::InstallAc => "install_ac",
            Output::InstallHeating => "install_heating",
            Output::InstallInsulation => "install_insulation",
            Output::InstallBarriers => "install_barriers",
            Output::UninstallCarpets => "uninstall_carpets",
        }
    }

    /// Human-readable action name for tables.
    pub fn title(self) -> &'static str {
        match self {
            Output::AirExchange => "Increase or decrease air exchange rate",
            Output::HeatingOp => "Start or stop heating",
            Output::AcOp => "Start or stop air conditioning",
            Output::OccupancyOp => "Increase or decrease number of people",
            Output::ExhibitionRatioOp => "Change ratio of exhibition area to hangar volume",
            Output::InstallFilters => "Install filters",
            Output::InstallAc => "Install air conditioning",
            Output::InstallHeating => "Install heating",
            Output::InstallInsulation => "Install insulation",
            Output::InstallBarriers => "Install barriers",
            Output::UninstallCarpets => "Uninstall carpets",
        }
    }

    pub fn is_refurbishment(self) -> bool {
        self.index() >= Output::InstallFilters.index()
    }

    /// Label vocabulary; code 0 is always `no_action`.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Output::AirExchange | Output::OccupancyOp => TRI_UP,
            Output::HeatingOp | Output::AcOp => TRI_START,
            Output::ExhibitionRatioOp => CHANGE,
            _ => YES,
        }
    }

    pub fn label(self, code: u8) -> &'static str {
        self.labels().get(code as usize).copied().unwrap_or("?")
    }

    pub fn label_code(self, label: &str) -> Option<u8> {
        self.labels().iter().position(|l| *l == label).map(|i| i as u8)
    }

    /// The profile condition an action with this label requires, as
    /// `(equipment flag name, required value)`.
    pub fn requirement(self, code: u8) -> Option<(&'static str, bool)> {
        if code == 0 {
            return None;
        }
        Some(match self {
            Output::HeatingOp => ("heating_installed", true),
            Output::AcOp => ("ac_installed", true),
            Output::InstallFilters => ("filters_installed", false),
            Output::InstallAc => ("ac_installed", false),
            Output::InstallHeating => ("heating_installed", false),
            Output::InstallInsulation => ("insulation_installed", false),
            Output::InstallBarriers => ("barriers_installed", false),
            Output::UninstallCarpets => ("carpets_installed", true),
            _ => return None,
        })
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Output {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Output::ALL
            .iter()
            .copied()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown output `{s}`"))
    }
}

fn profile_flag(profile: &HangarProfile, name: &str) -> bool {
    match name {
        "heating_installed" => profile.heating_installed,
        "ac_installed" => profile.ac_installed,
        "filters_installed" => profile.filters_installed,
        "insulation_installed" => profile.insulation_installed,
        "barriers_installed" => profile.barriers_installed,
        "carpets_installed" => profile.carpets_installed,
        _ => false,
    }
}

macro_rules! label_enum {
    ($name:ident { $($variant:ident = $label:literal),+ }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
        pub enum $name {
            #[default]
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            const ORDER: &'static [$name] = &[$($name::$variant),+];

            fn code(self) -> u8 {
                Self::ORDER.iter().position(|v| *v == self).unwrap_or(0) as u8
            }

            fn from_code(code: u8) -> Option<Self> {
                Self::ORDER.get(code as usize).copied()
            }
        }
    };
}

label_enum!(AirExchangeAction { NoAction = "no_action", Increase = "increase", Decrease = "decrease" });
label_enum!(EquipmentAction { NoAction = "no_action", Start = "start", Stop = "stop" });
label_enum!(OccupancyAction { NoAction = "no_action", Increase = "increase", Decrease = "decrease" });
label_enum!(RatioAction { NoAction = "no_action", Change = "change" });
label_enum!(RefurbishAction { NoAction = "no_action", Yes = "yes" });

/// The eleven recommended actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionVector {
    pub air_exchange: AirExchangeAction,
    pub heating_op: EquipmentAction,
    pub ac_op: EquipmentAction,
    pub occupancy_op: OccupancyAction,
    pub exhibition_ratio_op: RatioAction,
    pub install_filters: RefurbishAction,
    pub install_ac: RefurbishAction,
    pub install_heating: RefurbishAction,
    pub install_insulation: RefurbishAction,
    pub install_barriers: RefurbishAction,
    pub uninstall_carpets: RefurbishAction,
}

/// An emitted action that was reset to `no_action` because the profile forbids it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coercion {
    pub output: Output,
    pub emitted: String,
    pub reason: String,
}

impl ActionVector {
    pub fn to_codes(&self) -> [u8; OUTPUT_COUNT] {
        [
            self.air_exchange.code(),
            self.heating_op.code(),
            self.ac_op.code(),
            self.occupancy_op.code(),
            self.exhibition_ratio_op.code(),
            self.install_filters.code(),
            self.install_ac.code(),
            self.install_heating.code(),
            self.install_insulation.code(),
            self.install_barriers.code(),
            self.uninstall_carpets.code(),
        ]
    }

    pub fn from_codes(codes: &[u8; OUTPUT_COUNT]) -> Option<Self> {
        Some(ActionVector {
            air_exchange: AirExchangeAction::from_code(codes[0])?,
            heating_op: EquipmentAction::from_code(codes[1])?,
            ac_op: EquipmentAction::from_code(codes[2])?,
            occupancy_op: OccupancyAction::from_code(codes[3])?,
            exhibition_ratio_op: RatioAction::from_code(codes[4])?,
            install_filters: RefurbishAction::from_code(codes[5])?,
            install_ac: RefurbishAction::from_code(codes[6])?,
            install_heating: RefurbishAction::from_code(codes[7])?,
            install_insulation: RefurbishAction::from_code(codes[8])?,
            install_barriers: RefurbishAction::from_code(codes[9])?,
            uninstall_carpets: RefurbishAction::from_code(codes[10])?,
        })
    }

    pub fn get(&self, output: Output) -> u8 {
        self.to_codes()[output.index()]
    }

    pub fn label(&self, output: Output) -> &'static str {
        output.label(self.get(output))
    }

    pub fn with(&self, output: Output, code: u8) -> Option<Self> {
        let mut codes = self.to_codes();
        codes[output.index()] = code;
        Self::from_codes(&codes)
    }

    pub fn is_no_action(&self) -> bool {
        self.to_codes().iter().all(|c| *c == 0)
    }

    /// Outputs whose emitted action the profile forbids.
    pub fn violations(&self, profile: &HangarProfile) -> Vec<Output> {
        Output::ALL
            .into_iter()
            .filter(|o| match o.requirement(self.get(*o)) {
                Some((flag, required)) => profile_flag(profile, flag) != required,
                None => false,
            })
            .collect()
    }

    /// Resets every violating action to `no_action` and reports what was changed.
    pub fn repair(&mut self, profile: &HangarProfile) -> Vec<Coercion> {
        let mut codes = self.to_codes();
        let coercions = self
            .violations(profile)
            .into_iter()
            .map(|o| {
                let (flag, required) = o.requirement(codes[o.index()]).unwrap_or(("", true));
                let emitted = o.label(codes[o.index()]).to_string();
                codes[o.index()] = 0;
                Coercion {
                    output: o,
                    emitted,
                    reason: format!("requires {flag} = {required}"),
                }
            })
            .collect();
        *self = Self::from_codes(&codes).unwrap_or_default();
        coercions
    }
}
