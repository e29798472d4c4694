use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use smarthangar_core::config::{ServiceConfig, WindowChoice};
use smarthangar_core::decision::Example;
use smarthangar_core::engine::{EvaluateRequest, IngestReport, RetrainRequest};
use smarthangar_core::ingest::ReferenceMonth;
use smarthangar_core::store::HangarProfile;
use smarthangar_core::time::{format_rfc3339, parse_rfc3339, Timestamp};
use smarthangar_core::{synth, Engine, EngineError};

const DEFAULT_STORE: &str = ".smarthangar";

#[derive(Debug, Parser)]
#[command(name = "smarthangar", version, about = "Corrosion risk and preservation advice for aircraft hangars")]
struct Cli {
    /// Service configuration file shared with `serve`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store directory, overriding the configuration.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Metar,
    Pollution,
    Series,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Store observations from a file.
    Ingest {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        file: PathBuf,
        /// `YYYY-MM` for METAR lines without an archive prefix.
        #[arg(long)]
        month: Option<String>,
    },
    /// Run the pipeline over `[from, to)` and store the snapshot.
    Evaluate {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Hours, or `search` to grid-search 1..168 h on the validation data.
        #[arg(long)]
        ma_window: Option<String>,
        /// Print the snapshot JSON instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Print the action table for the latest snapshot.
    Recommend {
        #[arg(long)]
        json: bool,
    },
    /// Retrain the served tree from a rules file and optional extra examples.
    Train {
        #[arg(long)]
        rules: Option<PathBuf>,
        /// JSON array of `{input, actions}` examples.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Also write the exported tree here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write plot-ready CSVs and the recommendation table.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve,
    /// Show or replace the hangar profile.
    Profile {
        #[command(subcommand)]
        action: ProfileAction,
    },
    /// Regenerate the synthetic fixture directories.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum ProfileAction {
    Show,
    Set {
        #[arg(long)]
        file: PathBuf,
    },
}

struct CliError {
    kind: String,
    message: String,
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError { kind: e.kind().to_string(), message: e.to_string() }
    }
}

fn fail(kind: &str, message: impl Into<String>) -> CliError {
    CliError { kind: kind.to_string(), message: message.into() }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))
}

fn timestamp(text: &str) -> Result<Timestamp, CliError> {
    parse_rfc3339(text).ok_or_else(|| fail("bad-request", format!("bad RFC 3339 timestamp `{text}`")))
}

fn engine(cli: &Cli) -> Result<Engine, CliError> {
    let mut config = match &cli.config {
        Some(path) => ServiceConfig::load(path).map_err(EngineError::from)?,
        None => ServiceConfig::default(),
    };
    if let Some(store) = &cli.store {
        config.storage = Some(store.clone());
    } else if config.storage.is_none() {
        config.storage = Some(PathBuf::from(DEFAULT_STORE));
    }
    Ok(Engine::open(config)?)
}

fn print_counts(report: &IngestReport) {
    println!("parsed {} stored {} failed {}", report.parsed, report.stored, report.failed.len());
    for f in &report.failed {
        println!("  line {}: {}", f.line, f.reason);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest { kind, file, month } => {
            let body = read(file)?;
            let month = match month {
                Some(m) => Some(
                    m.split_once('-')
                        .and_then(|(y, m)| ReferenceMonth::new(y.parse().ok()?, m.parse().ok()?))
                        .ok_or_else(|| fail("bad-request", format!("bad month `{m}`")))?,
                ),
                None => None,
            };
            let engine = engine(&cli)?;
            let report = match kind {
                Kind::Metar => engine.ingest_metar(&body, month)?,
                Kind::Pollution => engine.ingest_pollution(&body)?,
                Kind::Series => engine.ingest_series(&body)?,
            };
            print_counts(&report);
        }
        Command::Evaluate { from, to, ma_window, json } => {
            let mut request = EvaluateRequest::new(timestamp(from)?, timestamp(to)?);
            request.ma_window = match ma_window.as_deref() {
                None => None,
                Some("search") => Some(WindowChoice::GridSearch),
                Some(n) => Some(WindowChoice::Fixed(
                    n.parse().map_err(|_| fail("bad-request", format!("bad window `{n}`")))?,
                )),
            };
            let snapshot = engine(&cli)?.evaluate(&request)?;
            if *json {
                print!("{}", String::from_utf8_lossy(&snapshot.to_bytes()));
                return Ok(());
            }
            let f = &snapshot.features;
            let r = &snapshot.risk;
            println!("range             {} .. {}", format_rfc3339(&snapshot.range.from), format_rfc3339(&snapshot.range.to));
            println!("time of wetness   {:.1} h", f.time_of_wetness);
            println!("freeze-thaw       {}", f.freeze_thaw_events);
            for (species, series) in &f.indoor_pollutants {
                println!("indoor {:<10} {:.2} ug/m3", species.to_string(), series.mean().unwrap_or(0.0));
            }
            println!("risk mean/max     {:.3} / {:.3}", r.mean_score, r.max_score);
            println!("ma window         {} h", snapshot.ma_window_hours);
            if let Some(search) = &snapshot.window_search {
                println!("best window       {} h (score {})", search.best_window, search.best_score);
            }
            println!("category          {} ({})", r.corrosivity.category, r.corrosivity.label);
            for note in &snapshot.notes {
                println!("note: {note}");
            }
            println!("snapshot          {}", snapshot.handle());
        }
        Command::Recommend { json } => {
            let rec = engine(&cli)?.recommend()?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&rec).unwrap_or_default());
            } else {
                print!("{}", rec.table());
            }
        }
        Command::Train { rules, corpus, out } => {
            let examples: Vec<Example> = match corpus {
                Some(path) => serde_json::from_str(&read(path)?)
                    .map_err(|e| fail("bad-request", format!("{}: {e}", path.display())))?,
                None => Vec::new(),
            };
            let rules = match rules {
                Some(path) => Some(read(path)?),
                None => None,
            };
            let engine = engine(&cli)?;
            let outcome = engine.retrain(&RetrainRequest { examples, rules, rules_file: None })?;
            if let Some(out) = out {
                std::fs::write(out, engine.model().tree.export()).map_err(|e| fail("io", e.to_string()))?;
            }
            println!("{}", outcome.fingerprint);
        }
        Command::Report { out } => {
            let bundle = engine(&cli)?.write_report(out)?;
            println!("time of wetness   {:.1} h", bundle.time_of_wetness);
            println!("category          {} ({})", bundle.category, bundle.label);
            println!("risk series       {}", bundle.risk_csv.display());
            println!("pollution band    {}", bundle.pollution_band_csv.display());
            println!("recommendations   {}", bundle.recommendation_table.display());
            if let Some(path) = &bundle.window_scores_csv {
                println!("window scores     {}", path.display());
            }
        }
        Command::Serve => {
            let engine = Arc::new(engine(&cli)?);
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| fail("io", e.to_string()))?;
            runtime
                .block_on(smarthangar_service::serve(engine))
                .map_err(|e| fail("io", e.to_string()))?;
        }
        Command::Profile { action: ProfileAction::Show } => {
            let (version, profile) = engine(&cli)?.profile()?;
            println!("# version {version}");
            println!("{}", serde_json::to_string_pretty(&profile).unwrap_or_default());
        }
        Command::Profile { action: ProfileAction::Set { file } } => {
            let profile: HangarProfile = serde_json::from_str(&read(file)?)
                .map_err(|e| fail("invalid-profile", format!("{}: {e}", file.display())))?;
            let version = engine(&cli)?.put_profile(&profile)?;
            println!("version {version}");
        }
        Command::Fixtures { out } => {
            for fixture in synth::all_fixtures() {
                let dir = out.join(fixture.name);
                fixture.write_to(&dir).map_err(|e| fail("io", format!("{}: {e}", dir.display())))?;
                println!("{}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind, e.message);
            ExitCode::from(2)
        }
    }
}
