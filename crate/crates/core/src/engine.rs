//! The evaluation engine shared by the CLI and the HTTP service: ingestion
//! into the store, the resample → smooth → features → risk → ISO pipeline,
//! snapshot persistence, recommendations and model retraining.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use chrono::{Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ServiceConfig, WindowChoice};
use crate::decision::{
    build_training_corpus, explain, train_tree, Coercion, Corpus, DecisionError, DecisionInput,
    Example, Explanation, MultiOutputTree, RuleSet, DEFAULT_RULES,
};
use crate::decision::ActionVector;
use crate::features::{
    dew_point_series, freeze_thaw_events, indoor_band, indoor_concentration, time_of_wetness,
    AirExchange, FeatureError, FeatureSummary, InfiltrationParams, PollutantBand,
};
use crate::ingest::{
    fetch_feed, metar_points, parse_metar, parse_pollution_csv, pollutant_point, FeedError,
    FeedSource, PollutionError, ReferenceMonth, Species, Transport,
};
use crate::pipeline::{
    grid_search_window, moving_average, resample_onto, Grid, GridSearchResult, PipelineError,
    UniformSeries, MAX_WINDOW_HOURS, MIN_WINDOW_HOURS,
};
use crate::risk::{
    annualize, iso9223_category, load_risk_model, score_series, thaw_flags, CorrosivityResult,
    CorrosivityTable, RiskError, RiskModel, SalinityInput, ScoringInputs,
};
use crate::store::{
    closed, import_series_csv, FileStore, HangarProfile, MemoryStore, ObservationSeries, Placement,
    ProfileError, Sample, SeriesKey, Store, StoreError, Variable,
};
use crate::time::{format_rfc3339, parse_rfc3339, TimeRange, Timestamp};

pub const SNAPSHOT_FORMAT: &str = "smarthangar-snapshot/1";
const SNAPSHOT_ARTIFACT: &str = "snapshot.json";
const TREE_ARTIFACT: &str = "tree.json";
const RULES_ARTIFACT: &str = "rules.toml";
const EXTRA_EXAMPLES_ARTIFACT: &str = "extra_examples.json";

/// Score at or above which the validation objective predicts condensation.
pub const CONDENSATION_THRESHOLD: f64 = 0.4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no hangar profile")]
    MissingProfile,
    #[error("invalid profile field `{}`: {}", .0.field, .0.reason)]
    InvalidProfile(ProfileError),
    #[error("insufficient data: missing {}", .0.join(", "))]
    InsufficientData(Vec<String>),
    #[error("no evaluation snapshot")]
    NoSnapshot,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("features: {0}")]
    Feature(#[from] FeatureError),
    #[error("risk: {0}")]
    Risk(#[from] RiskError),
    #[error("corrupt artifact `{name}`: {reason}")]
    CorruptArtifact { name: String, reason: String },
    #[error(transparent)]
    Feed(#[from] FeedError),
    #[error("io: {0}")]
    Io(String),
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NoProfile => EngineError::MissingProfile,
            StoreError::InvalidProfile(p) => EngineError::InvalidProfile(p),
            other => EngineError::Store(other),
        }
    }
}

impl EngineError {
    /// Stable machine-readable kind, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::MissingProfile => "missing-profile",
            EngineError::InvalidProfile(_) => "invalid-profile",
            EngineError::InsufficientData(_) => "insufficient-data",
            EngineError::NoSnapshot => "no-snapshot",
            EngineError::BadRequest(_) => "bad-request",
            EngineError::Decision(DecisionError::InconsistentLabels { .. }) => "inconsistent-labels",
            EngineError::Decision(DecisionError::UntrainedModel) => "untrained-model",
            EngineError::Decision(_) => "decision",
            EngineError::Store(StoreError::StorageUnavailable(_)) => "storage-unavailable",
            EngineError::Store(StoreError::InvariantViolation(_)) => "invariant-violation",
            EngineError::Store(_) => "store",
            EngineError::Config(_) => "config",
            EngineError::Pipeline(_) => "pipeline",
            EngineError::Feature(_) => "features",
            EngineError::Risk(_) => "risk",
            EngineError::CorruptArtifact { .. } => "corrupt-artifact",
            EngineError::Feed(_) => "feed",
            EngineError::Io(_) => "io",
        }
    }
}

/// Per-line ingestion outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineFailure {
    /// 1-based line of the request body.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    /// Records decoded.
    pub parsed: usize,
    /// Records that added or changed at least one stored point.
    pub stored: usize,
    pub failed: Vec<LineFailure>,
}

/// What-if inputs applied to one evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    /// Evaluate this profile instead of the stored one.
    pub profile: Option<HangarProfile>,
    pub occupancy: Option<f64>,
    /// Constant air exchange rate, 1/h.
    pub air_exchange: Option<f64>,
    /// Do not persist the resulting snapshot.
    pub dry_run: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    #[serde(with = "crate::time::rfc3339")]
    pub from: Timestamp,
    #[serde(with = "crate::time::rfc3339")]
    pub to: Timestamp,
    #[serde(default)]
    pub ma_window: Option<WindowChoice>,
    #[serde(default)]
    pub overrides: Overrides,
}

impl EvaluateRequest {
    pub fn new(from: Timestamp, to: Timestamp) -> Self {
        EvaluateRequest { from, to, ma_window: None, overrides: Overrides::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub model_version: String,
    pub mean_score: f64,
    pub max_score: f64,
    /// h/yr used for the τ class.
    pub time_of_wetness_annual: f64,
    /// Mean indoor SO2 over the period, µg/m³, used for the P class.
    pub so2_annual_mean: f64,
    pub corrosivity: CorrosivityResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedRange {
    #[serde(with = "crate::time::rfc3339")]
    pub from: Timestamp,
    #[serde(with = "crate::time::rfc3339")]
    pub to: Timestamp,
}

/// Everything a recommendation needs, persisted after each evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: String,
    /// The end of the evaluated range, so identical inputs give identical bytes.
    #[serde(with = "crate::time::rfc3339")]
    pub generated_at: Timestamp,
    pub range: EvaluatedRange,
    /// `None` when the profile came from a what-if override.
    pub profile_version: Option<u64>,
    pub step_seconds: i64,
    pub max_gap_hours: u32,
    pub ma_window_hours: u32,
    pub window_search: Option<GridSearchResult>,
    pub features: FeatureSummary,
    pub risk: RiskSummary,
    pub risk_series: UniformSeries,
    pub decision_input: DecisionInput,
    pub notes: Vec<String>,
}

impl Snapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).unwrap_or_default();
        bytes.push(b'\n');
        bytes
    }

    /// SHA-256 of the snapshot bytes; the handle of its risk series.
    pub fn handle(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The decision output for the latest snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    #[serde(with = "crate::time::rfc3339")]
    pub generated_at: Timestamp,
    pub input: DecisionInput,
    pub actions: ActionVector,
    pub coercions: Vec<Coercion>,
    pub risk: RiskSummary,
    /// One row per output in action-table order.
    pub explanations: Vec<Explanation>,
    pub model_fingerprint: String,
    pub rules_version: String,
}

impl Recommendation {
    /// Plain-text action table; recommended actions are marked with `*`.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "  {:<50} {:<10} rules", "action", "output");
        for row in &self.explanations {
            let mark = if row.highlighted { '*' } else { ' ' };
            let rules = match (&row.note, row.rules.is_empty()) {
                (Some(note), _) => format!("({note})"),
                (None, false) => row.rules.join(", "),
                (None, true) => String::new(),
            };
            let _ = writeln!(out, "{mark} {:<50} {:<10} {rules}", row.action, row.label);
            let _ = write!(out, "");
        }
        for c in &self.coercions {
            let _ = writeln!(out, "coerced {} = {} to no_action: {}", c.output, c.emitted, c.reason);
        }
        let cited: Vec<&Explanation> = self.explanations.iter().filter(|r| !r.rules.is_empty()).collect();
        if !cited.is_empty() {
            let _ = writeln!(out, "\ncitations:");
            for row in cited {
                for (rule, citation) in row.rules.iter().zip(&row.citations) {
                    let _ = writeln!(out, "  [{rule}] {citation}");
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    #[serde(with = "crate::time::rfc3339")]
    pub timestamp: Timestamp,
    pub score: f64,
}

/// Body of a retraining request: extra labelled examples and/or a new rules file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainRequest {
    pub examples: Vec<Example>,
    /// Inline rules file text.
    pub rules: Option<String>,
    /// Path of a rules file readable by the server.
    pub rules_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainOutcome {
    pub fingerprint: String,
    pub previous_fingerprint: String,
    pub rules_version: String,
    pub corpus_size: usize,
}

/// The tree being served together with the rules and examples it was trained on.
#[derive(Debug, Clone)]
pub struct ServedModel {
    pub rules: RuleSet,
    pub rules_text: String,
    pub extra: Vec<Example>,
    pub tree: MultiOutputTree,
}

impl ServedModel {
    pub fn corpus(&self) -> Result<Corpus, DecisionError> {
        let (base, _) = build_training_corpus(&self.rules.rules, &self.rules.grid)?;
        Ok(base.merged(&self.extra))
    }
}

/// Trains on rules + extras, memoised per process since training is pure.
fn train_model(rules_text: &str, extra: &[Example]) -> Result<ServedModel, DecisionError> {
    static CACHE: OnceLock<Mutex<HashMap<String, MultiOutputTree>>> = OnceLock::new();
    let rules = RuleSet::parse(rules_text)?;
    let mut hasher = Sha256::new();
    hasher.update(rules_text.as_bytes());
    hasher.update(serde_json::to_vec(extra).unwrap_or_default());
    let key = hex(&hasher.finalize());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let cached = cache.lock().ok().and_then(|c| c.get(&key).cloned());
    let tree = match cached {
        Some(tree) => tree,
        None => {
            let (base, _) = build_training_corpus(&rules.rules, &rules.grid)?;
            let tree = train_tree(&base.merged(extra), rules.training)?;
            if let Ok(mut c) = cache.lock() {
                c.insert(key, tree.clone());
            }
            tree
        }
    };
    Ok(ServedModel { rules, rules_text: rules_text.to_string(), extra: extra.to_vec(), tree })
}

/// Hourly-or-finer labelled readings for the window grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationData {
    pub start: Timestamp,
    pub step: Duration,
    pub temperature: Vec<f64>,
    pub relative_humidity: Vec<f64>,
    pub so2: Vec<f64>,
    pub condensation: Vec<bool>,
}

pub const VALIDATION_HEADER: &str = "timestamp_utc,temperature,relative_humidity,so2,condensation";

impl ValidationData {
    pub fn new(start: Timestamp, step: Duration) -> Self {
        ValidationData {
            start,
            step,
            temperature: Vec::new(),
            relative_humidity: Vec::new(),
            so2: Vec::new(),
            condensation: Vec::new(),
        }
    }

    pub fn push(&mut self, temperature: f64, relative_humidity: f64, so2: f64, condensation: bool) {
        self.temperature.push(temperature);
        self.relative_humidity.push(relative_humidity);
        self.so2.push(so2);
        self.condensation.push(condensation);
    }

    pub fn len(&self) -> usize {
        self.temperature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperature.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{VALIDATION_HEADER}\n");
        for i in 0..self.len() {
            let ts = self.start + self.step * i as i32;
            let _ = writeln!(
                out,
                "{},{:.2},{:.2},{:.2},{}",
                format_rfc3339(&ts),
                self.temperature[i],
                self.relative_humidity[i],
                self.so2[i],
                u8::from(self.condensation[i])
            );
        }
        out
    }

    /// Parses the validation CSV; rows must be evenly spaced.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim() == VALIDATION_HEADER => {}
            _ => return Err(format!("expected header `{VALIDATION_HEADER}`")),
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            let bad = |m: &str| format!("line {}: {m}", n + 1);
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let ts = parse_rfc3339(f[0]).ok_or_else(|| bad("bad timestamp"))?;
            let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("bad number"));
            let label = match f[4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("condensation must be 0 or 1")),
            };
            rows.push((ts, num(f[1])?, num(f[2])?, num(f[3])?, label));
        }
        if rows.len() < 2 {
            return Err("need at least two rows".into());
        }
        let step = rows[1].0 - rows[0].0;
        if step <= Duration::zero() {
            return Err("timestamps must increase".into());
        }
        let mut data = ValidationData::new(rows[0].0, step);
        for (i, (ts, t, rh, so2, label)) in rows.into_iter().enumerate() {
            if ts != data.start + step * i as i32 {
                return Err(format!("row {} is off the {}-second grid", i + 2, step.num_seconds()));
            }
            data.push(t, rh, so2, label);
        }
        Ok(data)
    }

    fn series(&self, values: &[f64]) -> UniformSeries {
        UniformSeries::new(self.start, self.step, values.iter().copied().map(Some).collect())
    }
}

/// Condensation verdicts of the scorer on the data smoothed over `window_hours`.
pub fn condensation_flags(
    data: &ValidationData,
    window_hours: u32,
    model: &RiskModel,
) -> Result<Vec<Option<bool>>, EngineError> {
    let raw_t = data.series(&data.temperature);
    let t = moving_average(&raw_t, window_hours)?;
    let rh = moving_average(&data.series(&data.relative_humidity), window_hours)?;
    let so2 = moving_average(&data.series(&data.so2), window_hours)?;
    let dp = dew_point_series(&t, &rh)?;
    let thawed = thaw_flags(&raw_t, Duration::hours(24));
    let scores = score_series(
        &ScoringInputs {
            temperature: &t,
            dew_point: &dp,
            relative_humidity: &rh,
            so2: &so2,
            thawed: &thawed,
        },
        model,
    )?;
    Ok(scores.values.iter().map(|s| s.map(|s| s >= CONDENSATION_THRESHOLD)).collect())
}

/// Fraction of labelled points the smoothed scorer gets wrong.
pub fn window_objective(data: &ValidationData, window_hours: u32, model: &RiskModel) -> Result<f64, EngineError> {
    let flags = condensation_flags(data, window_hours, model)?;
    let (mut wrong, mut total) = (0usize, 0usize);
    for (flag, label) in flags.iter().zip(&data.condensation) {
        if let Some(flag) = flag {
            total += 1;
            wrong += usize::from(flag != label);
        }
    }
    if total == 0 {
        return Err(EngineError::BadRequest("validation data has no scorable points".into()));
    }
    Ok(wrong as f64 / total as f64)
}

/// Grid search of the moving-average window over 1..=168 h on `data`.
pub fn search_window(data: &ValidationData, model: &RiskModel) -> Result<GridSearchResult, EngineError> {
    let candidates: Vec<u32> = (MIN_WINDOW_HOURS..=MAX_WINDOW_HOURS).collect();
    Ok(grid_search_window(&candidates, |w| window_objective(data, w, model))?)
}

/// Files written by [`Engine::write_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub time_of_wetness: f64,
    pub category: String,
    pub label: String,
    pub risk_csv: PathBuf,
    pub pollution_band_csv: PathBuf,
    pub recommendation_table: PathBuf,
    pub window_scores_csv: Option<PathBuf>,
}

pub struct Engine {
    config: ServiceConfig,
    store: Arc<dyn Store>,
    risk_model: RwLock<Arc<RiskModel>>,
    table: CorrosivityTable,
    model: RwLock<Arc<ServedModel>>,
    evaluation: Mutex<()>,
    retraining: Mutex<()>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).finish_non_exhaustive()
    }
}

fn read_file(path: &Path) -> Result<String, EngineError> {
    std::fs::read_to_string(path).map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))
}

impl Engine {
    /// Opens the configured store (file-backed, or in-memory when no path is set).
    pub fn open(config: ServiceConfig) -> Result<Self, EngineError> {
        let store: Arc<dyn Store> = match &config.storage {
            Some(dir) => Arc::new(FileStore::open(dir)?),
            None => Arc::new(MemoryStore::new()),
        };
        Self::with_store(config, store)
    }

    pub fn with_store(config: ServiceConfig, store: Arc<dyn Store>) -> Result<Self, EngineError> {
        config.validate()?;
        let risk_model = match &config.risk.model {
            Some(path) => load_risk_model(path)?,
            None => RiskModel::default(),
        };
        let table = match &config.risk.table {
            Some(path) => CorrosivityTable::parse(&read_file(path)?)?,
            None => CorrosivityTable::default(),
        };
        let rules_text = match store.get_artifact(RULES_ARTIFACT)? {
            Some(bytes) => String::from_utf8(bytes).map_err(|e| EngineError::CorruptArtifact {
                name: RULES_ARTIFACT.into(),
                reason: e.to_string(),
            })?,
            None => match &config.decision.rules {
                Some(path) => read_file(path)?,
                None => DEFAULT_RULES.to_string(),
            },
        };
        let extra: Vec<Example> = match store.get_artifact(EXTRA_EXAMPLES_ARTIFACT)? {
            Some(bytes) => serde_json::from_slice(&bytes).map_err(|e| EngineError::CorruptArtifact {
                name: EXTRA_EXAMPLES_ARTIFACT.into(),
                reason: e.to_string(),
            })?,
            None => Vec::new(),
        };
        let model = train_model(&rules_text, &extra)?;
        Ok(Engine {
            config,
            store,
            risk_model: RwLock::new(Arc::new(risk_model)),
            table,
            model: RwLock::new(Arc::new(model)),
            evaluation: Mutex::new(()),
            retraining: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<dyn Store> {
        &self.store
    }

    pub fn model(&self) -> Arc<ServedModel> {
        self.model.read().map(|m| Arc::clone(&m)).unwrap_or_else(|p| Arc::clone(&p.into_inner()))
    }

    pub fn risk_model(&self) -> Arc<RiskModel> {
        self.risk_model.read().map(|m| Arc::clone(&m)).unwrap_or_else(|p| Arc::clone(&p.into_inner()))
    }

    /// Replaces the scorer; evaluations in flight keep the model they started with.
    pub fn set_risk_model(&self, model: RiskModel) -> Result<(), EngineError> {
        model.validate()?;
        if let Ok(mut slot) = self.risk_model.write() {
            *slot = Arc::new(model);
        }
        Ok(())
    }

    fn put(&self, key: SeriesKey, points: &[Sample]) -> Result<usize, EngineError> {
        Ok(self.store.put_samples(key, points)?)
    }

    /// Stores raw METAR lines as outdoor temperature, dew point and wind.
    pub fn ingest_metar(&self, body: &str, reference: Option<ReferenceMonth>) -> Result<IngestReport, EngineError> {
        if body.trim().is_empty() {
            return Err(EngineError::BadRequest("empty body".into()));
        }
        let reference = reference.unwrap_or_else(|| ReferenceMonth::of(&Utc::now()));
        let mut report = IngestReport::default();
        for (idx, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match parse_metar(line, reference) {
                Ok(metar) => {
                    report.parsed += 1;
                    let mut changed = 0;
                    for p in metar_points(&metar) {
                        changed += self.put(p.key, &[p.sample])?;
                    }
                    report.stored += usize::from(changed > 0);
                }
                Err(e) => report.failed.push(LineFailure { line: idx + 1, reason: e.to_string() }),
            }
        }
        Ok(report)
    }

    /// Stores pollutant CSV rows as outdoor concentration series.
    pub fn ingest_pollution(&self, body: &str) -> Result<IngestReport, EngineError> {
        if body.trim().is_empty() {
            return Err(EngineError::BadRequest("empty body".into()));
        }
        let batch = parse_pollution_csv(body.as_bytes(), false).map_err(|e| match e {
            PollutionError::BadHeader(h) => EngineError::BadRequest(format!("bad header: {h}")),
            other => EngineError::BadRequest(other.to_string()),
        })?;
        let mut report = IngestReport {
            parsed: batch.records.len(),
            stored: 0,
            failed: batch
                .errors
                .iter()
                .map(|e| LineFailure { line: e.line, reason: e.reason.clone() })
                .collect(),
        };
        for record in &batch.records {
            let p = pollutant_point(record);
            report.stored += usize::from(self.put(p.key, &[p.sample])? > 0);
        }
        Ok(report)
    }

    /// Stores rows of the `variable,placement,timestamp_utc,value` interchange format.
    pub fn ingest_series(&self, body: &str) -> Result<IngestReport, EngineError> {
        if body.trim().is_empty() {
            return Err(EngineError::BadRequest("empty body".into()));
        }
        let batch = import_series_csv(body.as_bytes()).map_err(EngineError::BadRequest)?;
        let mut report = IngestReport {
            parsed: batch.rows - batch.errors.len(),
            stored: 0,
            failed: batch
                .errors
                .iter()
                .map(|e| LineFailure { line: e.line, reason: e.reason.clone() })
                .collect(),
        };
        for (key, points) in &batch.series {
            let mut points = points.clone();
            points.sort_by_key(|p| p.timestamp);
            points.dedup_by_key(|p| p.timestamp);
            report.stored += self.put(*key, &points)?;
        }
        Ok(report)
    }

    /// Fetches one feed and stores its observations from the trailing day.
    pub fn poll_feed(&self, transport: &dyn Transport, source: &FeedSource, now: Timestamp) -> Result<usize, EngineError> {
        let window = TimeRange::new(now - Duration::days(1), now);
        let points = fetch_feed(transport, source, window, ReferenceMonth::of(&now))?;
        let mut stored = 0;
        for p in points {
            stored += self.put(p.key, &[p.sample])?;
        }
        Ok(stored)
    }

    pub fn put_profile(&self, profile: &HangarProfile) -> Result<u64, EngineError> {
        profile.validate().map_err(EngineError::InvalidProfile)?;
        Ok(self.store.upsert_profile(profile)?)
    }

    pub fn profile(&self) -> Result<(u64, HangarProfile), EngineError> {
        Ok(self.store.get_profile()?)
    }

    fn load_series(&self, key: SeriesKey, from: Timestamp, to: Timestamp) -> Result<Option<ObservationSeries>, EngineError> {
        match self.store.get_series(key, closed(from, to)) {
            Ok(s) if s.is_empty() => Ok(None),
            Ok(s) => Ok(Some(s)),
            Err(StoreError::UnknownSeries(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Runs the full pipeline over `[from, to)` and persists the snapshot
    /// unless the request is a dry run.
    pub fn evaluate(&self, request: &EvaluateRequest) -> Result<Snapshot, EngineError> {
        let _guard = self.evaluation.lock().map_err(|_| EngineError::Io("evaluation lock poisoned".into()))?;
        let snapshot = self.compute_snapshot(request)?;
        if !request.overrides.dry_run {
            self.store.put_artifact(SNAPSHOT_ARTIFACT, &snapshot.to_bytes())?;
        }
        Ok(snapshot)
    }

    fn compute_snapshot(&self, request: &EvaluateRequest) -> Result<Snapshot, EngineError> {
        let (from, to) = (request.from, request.to);
        if from >= to {
            return Err(EngineError::BadRequest("range start must precede its end".into()));
        }
        let overrides = &request.overrides;
        let (profile_version, profile) = match &overrides.profile {
            Some(p) => {
                p.validate().map_err(EngineError::InvalidProfile)?;
                (None, p.clone())
            }
            None => {
                let (v, p) = self.profile()?;
                (Some(v), p)
            }
        };
        let cfg = &self.config;
        let risk_model = self.risk_model();
        let step = Duration::minutes(cfg.pipeline.step_minutes as i64);
        let max_gap = Duration::hours(cfg.pipeline.max_gap_hours as i64);
        let grid = Grid::covering(from, to, step)?;
        let period_hours = (to - from).num_seconds() as f64 / 3600.0;
        let mut notes = Vec::new();

        let fetch = |variable: Variable, placement: Placement| -> Result<Option<UniformSeries>, EngineError> {
            let key = SeriesKey::of(variable, placement);
            match self.load_series(key, from - max_gap, to + max_gap)? {
                Some(series) => {
                    let resampled = resample_onto(&series, grid, max_gap)?;
                    let any = resampled.present().next().is_some();
                    Ok(any.then_some(resampled))
                }
                None => Ok(None),
            }
        };

        let mut missing = Vec::new();
        let temperature = fetch(Variable::Temperature, Placement::Indoor)?;
        let humidity = fetch(Variable::RelativeHumidity, Placement::Indoor)?;
        if temperature.is_none() {
            missing.push(SeriesKey::of(Variable::Temperature, Placement::Indoor).to_string());
        }
        if humidity.is_none() {
            missing.push(SeriesKey::of(Variable::RelativeHumidity, Placement::Indoor).to_string());
        }

        let air_exchange = match overrides.air_exchange {
            Some(n) if n.is_finite() && n >= 0.0 => AirExchange::Constant(n),
            Some(n) => return Err(EngineError::BadRequest(format!("air exchange rate {n}"))),
            None => match fetch(Variable::AirExchangeRate, Placement::Indoor)? {
                Some(series) => AirExchange::Series(series),
                None => AirExchange::Constant(cfg.infiltration.air_exchange),
            },
        };
        let first_rate = match &air_exchange {
            AirExchange::Constant(n) => *n,
            AirExchange::Series(s) => s.present().next().unwrap_or(cfg.infiltration.air_exchange),
        };

        let mut indoor_pollutants = BTreeMap::new();
        let mut bands = BTreeMap::new();
        for species in [Species::So2, Species::Pm10, Species::Pm25] {
            let variable = Variable::from(species);
            let outdoor = fetch(variable, Placement::Outdoor)?;
            let params = InfiltrationParams::for_hangar(
                &profile,
                &cfg.infiltration.deposition_velocity,
                species,
                air_exchange.clone(),
                cfg.infiltration.artifact_area,
            );
            let steady = |c: f64| {
                let lambda = first_rate + params.sink_rate();
                if lambda > 0.0 {
                    first_rate * c / lambda
                } else {
                    c
                }
            };
            if let Some(outdoor) = &outdoor {
                let initial = steady(outdoor.present().next().unwrap_or(0.0));
                let (low, high) = indoor_band(
                    outdoor,
                    &params,
                    cfg.infiltration.air_exchange_min,
                    cfg.infiltration.air_exchange_max,
                    initial,
                )?;
                bands.insert(species, PollutantBand { low, high });
            }
            let indoor = match (fetch(variable, Placement::Indoor)?, &outdoor) {
                (Some(measured), _) => Some(measured),
                (None, Some(outdoor)) => {
                    let initial = steady(outdoor.present().next().unwrap_or(0.0));
                    Some(indoor_concentration(outdoor, &params, initial)?)
                }
                (None, None) => None,
            };
            match indoor {
                Some(series) => {
                    indoor_pollutants.insert(species, series);
                }
                None if species == Species::So2 => {
                    missing.push(SeriesKey::of(variable, Placement::Outdoor).to_string());
                }
                None => notes.push(format!("no {species} data; annual mean taken as 0")),
            }
        }
        if !missing.is_empty() {
            return Err(EngineError::InsufficientData(missing));
        }
        let (Some(temperature), Some(humidity)) = (temperature, humidity) else {
            return Err(EngineError::InsufficientData(vec!["indoor climate".into()]));
        };
        let so2 = indoor_pollutants[&Species::So2].clone();

        let tow = time_of_wetness(&temperature, &humidity)?;
        let freeze_thaw = freeze_thaw_events(&temperature);

        let choice = request.ma_window.unwrap_or(cfg.pipeline.ma_window);
        let (window, window_search) = match choice {
            WindowChoice::Fixed(w) => (w, None),
            WindowChoice::GridSearch => {
                let path = cfg.pipeline.validation.as_ref().ok_or_else(|| {
                    EngineError::BadRequest("window grid search needs pipeline.validation".into())
                })?;
                let data = ValidationData::parse(&read_file(path)?).map_err(|e| {
                    EngineError::BadRequest(format!("{}: {e}", path.display()))
                })?;
                let result = search_window(&data, &risk_model)?;
                (result.best_window, Some(result))
            }
        };
        let smooth_t = moving_average(&temperature, window)?;
        let smooth_rh = moving_average(&humidity, window)?;
        let smooth_so2 = moving_average(&so2, window)?;
        let smooth_dp = dew_point_series(&smooth_t, &smooth_rh)?;
        let thawed = thaw_flags(&temperature, Duration::hours(cfg.risk.thaw_memory_hours as i64));
        let risk_series = score_series(
            &ScoringInputs {
                temperature: &smooth_t,
                dew_point: &smooth_dp,
                relative_humidity: &smooth_rh,
                so2: &smooth_so2,
                thawed: &thawed,
            },
            &risk_model,
        )?;
        let mean_score = risk_series.mean().unwrap_or(0.0);
        let max_score = risk_series.max().unwrap_or(0.0);

        let tow_annual = annualize(tow, period_hours);
        let so2_mean = so2.mean().unwrap_or(0.0);
        let salinity = match cfg.risk.chloride {
            Some(c) => SalinityInput::Chloride(c),
            None => SalinityInput::NearSea(profile.near_sea),
        };
        let corrosivity = iso9223_category(&self.table, tow_annual, so2_mean, salinity)?;

        let indoor_dp = dew_point_series(&temperature, &humidity)?.mean();
        let outdoor_dp = fetch(Variable::DewPoint, Placement::Outdoor)?.and_then(|s| s.mean());
        let indoor_drier = match (indoor_dp, outdoor_dp) {
            (Some(i), Some(o)) => i < o,
            _ => {
                notes.push("no outdoor dew point; indoor air not compared with outdoor".into());
                false
            }
        };
        let annual_mean = |s: Species| indoor_pollutants.get(&s).and_then(|x| x.mean()).unwrap_or(0.0);
        let decision_input = DecisionInput {
            time_of_wetness: tow_annual,
            iso_category: corrosivity.category,
            mean_risk: mean_score.clamp(0.0, 1.0),
            max_risk: max_score.clamp(0.0, 1.0),
            freeze_thaw_events: annualize(freeze_thaw as f64, period_hours),
            indoor_so2_annual: annual_mean(Species::So2),
            indoor_pm10_annual: annual_mean(Species::Pm10),
            indoor_pm25_annual: annual_mean(Species::Pm25),
            occupancy: overrides.occupancy,
            area_volume_ratio: profile.exhibition_area / profile.volume,
            indoor_drier_than_outdoor: indoor_drier,
            profile,
        };
        decision_input.validate()?;

        Ok(Snapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            generated_at: to,
            range: EvaluatedRange { from, to },
            profile_version,
            step_seconds: step.num_seconds(),
            max_gap_hours: cfg.pipeline.max_gap_hours,
            ma_window_hours: window,
            window_search,
            features: FeatureSummary {
                time_of_wetness: tow,
                indoor_pollutants,
                indoor_pollutant_band: bands,
                freeze_thaw_events: freeze_thaw,
            },
            risk: RiskSummary {
                model_version: risk_model.version.clone(),
                mean_score,
                max_score,
                time_of_wetness_annual: tow_annual,
                so2_annual_mean: so2_mean,
                corrosivity,
            },
            risk_series,
            decision_input,
            notes,
        })
    }

    pub fn snapshot_bytes(&self) -> Result<Vec<u8>, EngineError> {
        self.store.get_artifact(SNAPSHOT_ARTIFACT)?.ok_or(EngineError::NoSnapshot)
    }

    pub fn snapshot(&self) -> Result<Snapshot, EngineError> {
        let bytes = self.snapshot_bytes()?;
        serde_json::from_slice(&bytes).map_err(|e| EngineError::CorruptArtifact {
            name: SNAPSHOT_ARTIFACT.into(),
            reason: e.to_string(),
        })
    }

    /// Scores of the latest snapshot inside `[from, to]`; missing scores are skipped.
    pub fn timeline(&self, from: Option<Timestamp>, to: Option<Timestamp>) -> Result<Vec<TimelinePoint>, EngineError> {
        let snapshot = self.snapshot()?;
        let series = &snapshot.risk_series;
        Ok(series
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|score| TimelinePoint { timestamp: series.time_at(i), score }))
            .filter(|p| from.is_none_or(|f| p.timestamp >= f) && to.is_none_or(|t| p.timestamp <= t))
            .collect())
    }

    /// Predicts actions for the latest snapshot with the served tree.
    pub fn recommend(&self) -> Result<Recommendation, EngineError> {
        let snapshot = self.snapshot()?;
        Ok(self.recommend_for(&snapshot))
    }

    pub fn recommend_for(&self, snapshot: &Snapshot) -> Recommendation {
        let model = self.model();
        let prediction = model.tree.predict(&snapshot.decision_input);
        let explanations = explain(&model.rules.rules, &snapshot.decision_input, &prediction.actions);
        Recommendation {
            generated_at: snapshot.generated_at,
            input: snapshot.decision_input.clone(),
            actions: prediction.actions,
            coercions: prediction.coercions,
            risk: snapshot.risk.clone(),
            explanations,
            model_fingerprint: model.tree.fingerprint.clone(),
            rules_version: model.rules.version.clone(),
        }
    }

    /// Retrains from scratch on the (possibly new) rules plus all extra
    /// examples, then swaps the served model in one step.
    pub fn retrain(&self, request: &RetrainRequest) -> Result<RetrainOutcome, EngineError> {
        let _guard = self.retraining.lock().map_err(|_| EngineError::Io("retrain lock poisoned".into()))?;
        let current = self.model();
        let rules_text = match (&request.rules, &request.rules_file) {
            (Some(_), Some(_)) => {
                return Err(EngineError::BadRequest("give either rules or rules_file, not both".into()))
            }
            (Some(text), None) => text.clone(),
            (None, Some(path)) => read_file(path)?,
            (None, None) => current.rules_text.clone(),
        };
        for e in &request.examples {
            e.input.validate()?;
        }
        let extra = Corpus { examples: current.extra.clone() }.merged(&request.examples).examples;
        let model = train_model(&rules_text, &extra)?;
        let outcome = RetrainOutcome {
            fingerprint: model.tree.fingerprint.clone(),
            previous_fingerprint: current.tree.fingerprint.clone(),
            rules_version: model.rules.version.clone(),
            corpus_size: model.corpus()?.len(),
        };
        if rules_text != current.rules_text {
            self.store.put_artifact(RULES_ARTIFACT, rules_text.as_bytes())?;
        }
        if extra != current.extra {
            let bytes = serde_json::to_vec_pretty(&extra).unwrap_or_default();
            self.store.put_artifact(EXTRA_EXAMPLES_ARTIFACT, &bytes)?;
        }
        self.store.put_artifact(TREE_ARTIFACT, model.tree.export().as_bytes())?;
        if let Ok(mut slot) = self.model.write() {
            *slot = Arc::new(model);
        }
        Ok(outcome)
    }

    /// Writes plot-ready CSVs and the recommendation table for the latest snapshot.
    pub fn write_report(&self, dir: &Path) -> Result<ReportBundle, EngineError> {
        let snapshot = self.snapshot()?;
        let recommendation = self.recommend_for(&snapshot);
        let io = |e: std::io::Error| EngineError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;

        let mut risk = String::from("timestamp_utc,score\n");
        for (i, v) in snapshot.risk_series.values.iter().enumerate() {
            let ts = format_rfc3339(&snapshot.risk_series.time_at(i));
            match v {
                Some(v) => writeln!(risk, "{ts},{v}"),
                None => writeln!(risk, "{ts},"),
            }
            .ok();
        }
        let risk_csv = dir.join("risk_timeline.csv");
        std::fs::write(&risk_csv, risk).map_err(io)?;

        let mut band = String::from("timestamp_utc,species,indoor,low,high\n");
        for (species, b) in &snapshot.features.indoor_pollutant_band {
            let indoor = snapshot.features.indoor_pollutants.get(species);
            for i in 0..b.low.len() {
                let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    band,
                    "{},{species},{},{},{}",
                    format_rfc3339(&b.low.time_at(i)),
                    cell(indoor.and_then(|s| s.values.get(i).copied().flatten())),
                    cell(b.low.values[i]),
                    cell(b.high.values[i]),
                );
            }
        }
        let pollution_band_csv = dir.join("pollution_band.csv");
        std::fs::write(&pollution_band_csv, band).map_err(io)?;

        let recommendation_table = dir.join("recommendations.txt");
        std::fs::write(&recommendation_table, recommendation.table()).map_err(io)?;

        let search = match &snapshot.window_search {
            Some(result) => Some(result.clone()),
            None => match &self.config.pipeline.validation {
                Some(path) => {
                    let data = ValidationData::parse(&read_file(path)?).map_err(EngineError::BadRequest)?;
                    Some(search_window(&data, &self.risk_model())?)
                }
                None => None,
            },
        };
        let window_scores_csv = match search {
            Some(result) => {
                let path = dir.join("window_scores.csv");
                let mut bytes = Vec::new();
                result.write_csv(&mut bytes).map_err(io)?;
                std::fs::write(&path, bytes).map_err(io)?;
                Some(path)
            }
            None => None,
        };

        let corrosivity = &snapshot.risk.corrosivity;
        let bundle = ReportBundle {
            time_of_wetness: snapshot.features.time_of_wetness,
            category: corrosivity.category.to_string(),
            label: corrosivity.label.clone(),
            risk_csv,
            pollution_band_csv,
            recommendation_table,
            window_scores_csv,
        };
        let summary = serde_json::to_vec_pretty(&bundle).unwrap_or_default();
        std::fs::write(dir.join("report.json"), summary).map_err(io)?;
        Ok(bundle)
    }
}
