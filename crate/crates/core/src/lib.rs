//! Corrosion-prevention decision support for heritage aircraft hangars.
//!
//! The crate is organised bottom-up:
//!
//! * [`ingest`] decodes METAR reports and pollutant CSV feeds,
//! * [`store`] persists observation series, the hangar profile and artifacts,
//! * [`pipeline`] resamples and smooths series onto a uniform grid,
//! * [`features`] derives dew point, time of wetness and indoor pollution,
//! * [`risk`] scores corrosion risk and classifies ISO 9223 corrosivity,
//! * [`decision`] turns expert rules into a corpus and trains the multi-output tree,
//! * [`engine`] wires all of the above for the CLI and the HTTP service.

pub mod config;
pub mod decision;
pub mod engine;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod risk;
pub mod store;
pub mod synth;
pub mod time;

pub use config::ServiceConfig;
pub use decision::{
    ActionVector, DecisionInput, ExpertRule, MultiOutputTree, RuleSet, TreeParams,
};
pub use engine::{Engine, EngineError, Recommendation, Snapshot};
pub use features::FeatureSummary;
pub use ingest::{MetarReport, PollutantRecord, Species};
pub use pipeline::UniformSeries;
pub use risk::{CorrosivityCategory, CorrosivityResult, RiskModel};
pub use store::{
    HangarProfile, Material, ObservationSeries, Placement, SeriesKey, Store, Variable,
};
