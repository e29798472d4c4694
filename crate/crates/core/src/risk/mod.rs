//! Corrosion risk scoring and ISO 9223 corrosivity classification.

mod iso9223;
mod model;
mod score;

pub use iso9223::{
    annualize, iso9223_category, CorrosivityCategory, CorrosivityResult, CorrosivityTable,
    SalinityClass, SalinityInput, So2Class, TowClass, HOURS_PER_YEAR,
};
pub use model::{load_risk_model, save_risk_model, RiskModel};
pub use score::{risk_score, score_series, thaw_flags, RiskInputs, ScoringInputs};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("bad risk model: {0}")]
    BadModel(String),
    #[error("bad risk model file: {0}")]
    BadModelFile(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("series are not on the same grid")]
    GridMismatch,
    #[error("outside classification: {0}")]
    OutOfClassification(String),
    #[error("bad corrosivity table: {0}")]
    BadTable(String),
}
