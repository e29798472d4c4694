//! The surrogate risk model and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RiskError;

/// Parameters of the surrogate scorer. Weights blend the condensation,
/// humidity and freeze-thaw hazards; `pollution_gain` scales the SO2 factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub version: String,
    pub w_condensation: f64,
    pub w_humidity: f64,
    pub w_freeze_thaw: f64,
    pub pollution_gain: f64,
    /// µg/m³
    pub so2_reference: f64,
    /// %
    pub rh_knee: f64,
    /// K
    pub condensation_span: f64,
}

impl Default for RiskModel {
    fn default() -> Self {
        Self {
            version: "surrogate-1".into(),
            w_condensation: 0.5,
            w_humidity: 0.3,
            w_freeze_thaw: 0.2,
            pollution_gain: 0.3,
            so2_reference: 50.0,
            rh_knee: 70.0,
            condensation_span: 2.0,
        }
    }
}

const FIELDS: [&str; 8] = [
    "version",
    "w_condensation",
    "w_humidity",
    "w_freeze_thaw",
    "pollution_gain",
    "so2_reference",
    "rh_knee",
    "condensation_span",
];

impl RiskModel {
    pub fn validate(&self) -> Result<(), RiskError> {
        let weights = [self.w_condensation, self.w_humidity, self.w_freeze_thaw];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RiskError::BadModel("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RiskError::BadModel(format!("weights sum to {sum}, not 1")));
        }
        if !(0.0..=1.0).contains(&self.pollution_gain) {
            return Err(RiskError::BadModel(format!(
                "pollution_gain {} not in [0, 1]",
                self.pollution_gain
            )));
        }
        if !(self.so2_reference.is_finite() && self.so2_reference > 0.0) {
            return Err(RiskError::BadModel("so2_reference must be positive".into()));
        }
        if !(self.rh_knee >= 0.0 && self.rh_knee < 100.0) {
            return Err(RiskError::BadModel("rh_knee must lie in [0, 100)".into()));
        }
        if !(self.condensation_span.is_finite() && self.condensation_span > 0.0) {
            return Err(RiskError::BadModel("condensation_span must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version = {}", self.version);
        let _ = writeln!(out, "w_condensation = {}", self.w_condensation);
        let _ = writeln!(out, "w_humidity = {}", self.w_humidity);
        let _ = writeln!(out, "w_freeze_thaw = {}", self.w_freeze_thaw);
        let _ = writeln!(out, "pollution_gain = {}", self.pollution_gain);
        let _ = writeln!(out, "so2_reference = {}", self.so2_reference);
        let _ = writeln!(out, "rh_knee = {}", self.rh_knee);
        let _ = writeln!(out, "condensation_span = {}", self.condensation_span);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, RiskError> {
        let bad = |msg: String| RiskError::BadModelFile(msg);
        let mut values: [Option<String>; 8] = Default::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            let idx = FIELDS
                .iter()
                .position(|f| *f == key)
                .ok_or_else(|| bad(format!("unknown field `{key}`")))?;
            if values[idx].is_some() {
                return Err(bad(format!("duplicate field `{key}`")));
            }
            values[idx] = Some(value.trim().to_string());
        }
        let missing: Vec<&str> = FIELDS
            .iter()
            .zip(&values)
            .filter(|(_, v)| v.is_none())
            .map(|(f, _)| *f)
            .collect();
        if !missing.is_empty() {
            return Err(bad(format!("missing fields: {}", missing.join(", "))));
        }
        let num = |idx: usize| -> Result<f64, RiskError> {
            let raw = values[idx].as_deref().unwrap();
            raw.parse()
                .map_err(|_| bad(format!("`{}` is not a number: `{raw}`", FIELDS[idx])))
        };
        let model = RiskModel {
            version: values[0].clone().unwrap(),
            w_condensation: num(1)?,
            w_humidity: num(2)?,
            w_freeze_thaw: num(3)?,
            pollution_gain: num(4)?,
            so2_reference: num(5)?,
            rh_knee: num(6)?,
            condensation_span: num(7)?,
        };
        model
            .validate()
            .map_err(|e| RiskError::BadModelFile(e.to_string()))?;
        Ok(model)
    }
}

/// Loads a model file; an absent file yields the built-in default model.
pub fn load_risk_model(path: &Path) -> Result<RiskModel, RiskError> {
    match std::fs::read_to_string(path) {
        Ok(text) => RiskModel::from_text(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RiskModel::default()),
        Err(e) => Err(RiskError::BadModelFile(format!("{}: {e}", path.display()))),
    }
}

pub fn save_risk_model(model: &RiskModel, path: &Path) -> Result<(), RiskError> {
    model.validate()?;
    std::fs::write(path, model.to_text())
        .map_err(|e| RiskError::BadModelFile(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let model = RiskModel {
            version: "tuned 2".into(),
            w_condensation: 0.1,
            w_humidity: 0.7,
            w_freeze_thaw: 0.2,
            pollution_gain: 0.25,
            so2_reference: 42.5,
            rh_knee: 75.0,
            condensation_span: 1.5,
        };
        save_risk_model(&model, &path).unwrap();
        assert_eq!(load_risk_model(&path).unwrap(), model);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let text = RiskModel::default()
            .to_text()
            .replace("w_condensation = 0.5", "w_condensation = 0.7");
        let err = RiskModel::from_text(&text).unwrap_err();
        assert!(matches!(err, RiskError::BadModelFile(m) if m.contains("sum to 1.2")));
    }

    #[test]
    fn unknown_and_missing_fields_are_named() {
        let text = format!("{}colour = red\n", RiskModel::default().to_text());
        assert_eq!(
            RiskModel::from_text(&text),
            Err(RiskError::BadModelFile("unknown field `colour`".into()))
        );
        let err = RiskModel::from_text("version = x\n").unwrap_err();
        assert!(err.to_string().contains("w_condensation"));
    }

    #[test]
    fn absent_file_is_the_default_model() {
        let dir = tempfile::tempdir().unwrap();
        let model = load_risk_model(&dir.path().join("nope.txt")).unwrap();
        assert_eq!(model, RiskModel::default());
    }
}
