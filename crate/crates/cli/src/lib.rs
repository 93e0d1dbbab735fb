//! The `biasgpt` command line.
//!
//! Exit codes: 0 success, 1 validation or I/O failure, 2 remote or
//! credential failure.

pub mod config;
pub mod demo;

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use biasgpt_core::analytics::{summary_with, AnalyticsSummary};
use biasgpt_core::clock::SystemClock;
use biasgpt_core::dataset::{build_record, load_rows, rows_for, serialize_dataset};
use biasgpt_core::duel::{DuelRunner, FallbackMessage};
use biasgpt_core::engine::{EngineKind, GenerationEngine, LiveConfig, MockEngine, OpenAiEngine};
use biasgpt_core::finetune::{
    FineTuneError, FineTuneJob, FineTuneProvider, JobBook, LiveProvider, MockProvider, DEFAULT_BASE_MODEL,
};
use biasgpt_core::persona::RegistryOverrides;
use biasgpt_core::rating::{parse_log, NoDuels, RatingLog, RatingLogEntry};
use biasgpt_core::router::{Lexicon, SharedLexicon};
use biasgpt_core::{PersonaVariant, Registry, SharedRegistry};
use biasgpt_server::{AppState, CorsOrigins, ReloadSources};
use clap::{Parser, Subcommand};

pub use config::{GlobalArgs, Settings};

#[derive(Debug, Parser)]
#[command(name = "biasgpt", version, about = "Build persona datasets, run fine-tune jobs, serve duels and report ratings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Training dataset preparation
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Fine-tune jobs and model bindings
    #[command(subcommand)]
    Finetune(FinetuneCommand),
    /// Inspect the persona registry
    #[command(subcommand)]
    Personas(PersonasCommand),
    /// Run the HTTP API until interrupted
    ///
    /// Stops cleanly on SIGINT or SIGTERM after in-flight requests finish.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Port to listen on; 0 picks a free port
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Print the rating analytics as tables
    ///
    /// An absent ratings file counts as an empty store.
    Report {
        /// Also write the summary as CSV
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        /// Also write the summary as JSON lines
        #[arg(long, value_name = "FILE")]
        jsonl: Option<PathBuf>,
    },
    /// Fill an empty store with the synthetic demo rating set
    ///
    /// Writes 156 ratings; the Young persona gets 50 ratings with mean 5.26.
    /// Refuses to touch a store that already has ratings.
    SeedDemo,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Turn a rows file into a chat-lines training file
    ///
    /// Rows files are CSV, TSV or JSON lines with `question`, `biased_answer`
    /// and an optional `persona` column. Rows without a persona are used for
    /// every persona. Writes OUT and OUT.manifest.json, then prints the
    /// record count and SHA-256 digest.
    Build {
        #[arg(long, value_name = "FILE")]
        rows: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        persona: PersonaVariant,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum FinetuneCommand {
    /// Submit a training file and print the job id
    Create {
        #[arg(long, value_name = "FILE")]
        training: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        persona: PersonaVariant,
        #[arg(long, default_value = DEFAULT_BASE_MODEL)]
        base_model: String,
    },
    /// Poll a job once and print its state
    Status { job_id: String },
    /// Bind a model id to a persona in the registry override file
    Bind {
        #[arg(value_parser = parse_variant)]
        variant: PersonaVariant,
        model_id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum PersonasCommand {
    /// List the eight personas with their model bindings
    List,
}

fn parse_variant(s: &str) -> Result<PersonaVariant, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }

    pub fn remote(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::invalid(error)
    }
}

impl From<FineTuneError> for Failure {
    fn from(e: FineTuneError) -> Self {
        if e.is_remote() {
            let hint = match e {
                FineTuneError::Credential(_) => " (check the API credential and endpoint)",
                _ => "",
            };
            Self::remote(anyhow!("{e}{hint}"))
        } else {
            Self::invalid(e)
        }
    }
}

type CmdResult = Result<(), Failure>;

pub async fn run(cli: Cli, out: &mut dyn Write) -> CmdResult {
    let settings = Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Dataset(DatasetCommand::Build { rows, persona, out: path }) => dataset_build(&rows, persona, &path, out),
        Command::Finetune(cmd) => finetune(&settings, cmd, out).await,
        Command::Personas(PersonasCommand::List) => personas_list(&settings, out),
        Command::Serve { host, port } => serve(&settings, &host, port, out).await,
        Command::Report { csv, jsonl } => report(&settings, csv.as_deref(), jsonl.as_deref(), out),
        Command::SeedDemo => seed_demo(&settings, out),
    }
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::invalid(e)
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn dataset_build(rows: &Path, persona: PersonaVariant, path: &Path, out: &mut dyn Write) -> CmdResult {
    let input = load_rows(rows).map_err(Failure::invalid)?;
    let selected = rows_for(&input, persona).map_err(|errors| {
        let lines: Vec<String> = errors.iter().map(|e| format!("  {e}")).collect();
        Failure::invalid(anyhow!(
            "{} invalid row(s) in {}:\n{}",
            errors.len(),
            rows.display(),
            lines.join("\n")
        ))
    })?;
    if selected.is_empty() {
        return Err(Failure::invalid(anyhow!(
            "{} has no rows for persona {}",
            rows.display(),
            persona.key()
        )));
    }
    let records = selected
        .iter()
        .map(build_record)
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::invalid)?;
    let (bytes, manifest) = serialize_dataset(&records, Some(persona)).map_err(Failure::invalid)?;
    std::fs::write(path, &bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::invalid)?;
    let mpath = manifest_path(path);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    json.push('\n');
    std::fs::write(&mpath, json)
        .with_context(|| format!("writing {}", mpath.display()))
        .map_err(Failure::invalid)?;
    writeln!(out, "record_count: {}", manifest.record_count).map_err(io_err)?;
    writeln!(out, "digest: {}", manifest.content_digest).map_err(io_err)?;
    writeln!(out, "wrote {} and {}", path.display(), mpath.display()).map_err(io_err)?;
    Ok(())
}

fn live_config(settings: &Settings) -> Result<LiveConfig, Failure> {
    let credential = settings.credential().ok_or_else(|| {
        Failure::remote(anyhow!(
            "live mode needs an API credential: set the {} environment variable (or pick another with --credential-env)",
            settings.credential_env
        ))
    })?;
    LiveConfig::new(&settings.endpoint, credential).map_err(Failure::remote)
}

fn provider(settings: &Settings) -> Result<Box<dyn FineTuneProvider>, Failure> {
    let book = JobBook::open(settings.store.jobs())?;
    Ok(match settings.provider {
        EngineKind::Mock => Box::new(MockProvider::new(book)),
        EngineKind::Live => Box::new(LiveProvider::new(live_config(settings)?, book)?),
    })
}

fn print_job(job: &FineTuneJob, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "job_id: {}", job.job_id)?;
    writeln!(out, "persona: {}", job.persona.key())?;
    writeln!(out, "base_model: {}", job.base_model)?;
    writeln!(out, "status: {}", job.status)?;
    writeln!(out, "result_model_id: {}", job.result_model_id.as_deref().unwrap_or("-"))?;
    writeln!(out, "poll_count: {}", job.poll_count)
}

fn load_registry(settings: &Settings, lexicon: &Lexicon) -> Result<Registry, Failure> {
    let overrides = RegistryOverrides::load(&settings.registry).map_err(Failure::invalid)?;
    let mut registry = Registry::canonical_with_lexicon(lexicon);
    registry.apply(&overrides).map_err(Failure::invalid)?;
    Ok(registry)
}

fn load_lexicon(settings: &Settings) -> Result<Lexicon, Failure> {
    match &settings.lexicon {
        Some(p) => Lexicon::load(p).map_err(Failure::invalid),
        None => Ok(Lexicon::shipped()),
    }
}

async fn finetune(settings: &Settings, cmd: FinetuneCommand, out: &mut dyn Write) -> CmdResult {
    match cmd {
        FinetuneCommand::Create {
            training,
            persona,
            base_model,
        } => {
            let bytes = std::fs::read(&training)
                .with_context(|| format!("reading {}", training.display()))
                .map_err(Failure::invalid)?;
            let job = provider(settings)?.create_job(persona, &bytes, &base_model).await?;
            writeln!(out, "{}", job.job_id).map_err(io_err)
        }
        FinetuneCommand::Status { job_id } => {
            let job = provider(settings)?.poll_job(&job_id).await?;
            print_job(&job, out).map_err(io_err)
        }
        FinetuneCommand::Bind { variant, model_id } => {
            let mut overrides = RegistryOverrides::load(&settings.registry).map_err(Failure::invalid)?;
            overrides.set_binding(variant, &model_id).map_err(Failure::invalid)?;
            let mut registry = Registry::canonical_with_lexicon(&load_lexicon(settings)?);
            registry.apply(&overrides).map_err(Failure::invalid)?;
            overrides.save(&settings.registry).map_err(Failure::invalid)?;
            let spec = registry.get(variant);
            writeln!(
                out,
                "{} -> {}",
                spec.display_name,
                spec.model_binding.as_deref().unwrap_or_default()
            )
            .map_err(io_err)
        }
    }
}

fn personas_list(settings: &Settings, out: &mut dyn Write) -> CmdResult {
    let registry = load_registry(settings, &load_lexicon(settings)?)?;
    let name_w = registry.display_names().map(str::len).max().unwrap_or(0).max(5);
    let mut text = format!("{:<10}  {:<9}  {:<name_w$}  Model\n", "Variant", "Dimension", "Name");
    for s in registry.specs() {
        text.push_str(&format!(
            "{:<10}  {:<9}  {:<name_w$}  {}\n",
            s.variant.key(),
            s.dimension.as_str(),
            s.display_name,
            s.model_binding.as_deref().unwrap_or("-")
        ));
    }
    out.write_all(text.as_bytes()).map_err(io_err)
}

/// Builds the API state the way `serve` does.
pub fn app_state(settings: &Settings) -> Result<AppState, Failure> {
    let lexicon = load_lexicon(settings)?;
    let registry = load_registry(settings, &lexicon)?;
    let engine: Arc<dyn GenerationEngine> = match settings.engine {
        EngineKind::Mock => Arc::new(MockEngine),
        EngineKind::Live => Arc::new(OpenAiEngine::new(live_config(settings)?).map_err(Failure::remote)?),
    };
    let mut runner = DuelRunner::new(engine);
    if let Some(msg) = &settings.fallback_message {
        runner = runner.with_fallback(FallbackMessage::new(msg.clone()).map_err(Failure::invalid)?);
    }
    let ratings = RatingLog::open(settings.store.ratings(), Arc::new(SystemClock)).map_err(Failure::invalid)?;
    let mut state = AppState::new(runner, Arc::new(ratings))
        .with_registry(SharedRegistry::new(registry))
        .with_lexicon(SharedLexicon::new(lexicon))
        .with_reload(ReloadSources {
            lexicon: settings.lexicon.clone(),
            registry_overrides: Some(settings.registry.clone()),
        });
    if let Some(cap) = settings.duel_capacity {
        state = state.with_duel_capacity(cap);
    }
    Ok(state)
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
    tracing::info!("shutting down");
}

async fn serve(settings: &Settings, host: &str, port: u16, out: &mut dyn Write) -> CmdResult {
    let state = Arc::new(app_state(settings)?);
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("cannot listen on {host}:{port}"))
        .map_err(Failure::invalid)?;
    let addr = listener.local_addr().map_err(io_err)?;
    writeln!(out, "listening on http://{addr}").map_err(io_err)?;
    out.flush().map_err(io_err)?;
    tracing::info!(engine = %settings.engine, store = %settings.store.root().display(), "serving");
    biasgpt_server::serve(listener, state, &CorsOrigins(settings.cors_origins.clone()), shutdown_signal())
        .await
        .map_err(io_err)
}

/// Reads the rating log without creating it. A missing file is an empty store.
pub fn read_store(path: &Path) -> Result<Vec<RatingLogEntry>, Failure> {
    match File::open(path) {
        Ok(f) => parse_log(BufReader::new(f))
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::invalid),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Failure::invalid(anyhow!("cannot read {}: {e}", path.display()))),
    }
}

fn report(settings: &Settings, csv: Option<&Path>, jsonl: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let entries = read_store(&settings.store.ratings())?;
    let summary: AnalyticsSummary = summary_with(&entries, &SystemClock, &[]);
    writeln!(out, "{summary}").map_err(io_err)?;
    let create = |p: &Path| {
        File::create(p)
            .with_context(|| format!("creating {}", p.display()))
            .map_err(Failure::invalid)
    };
    if let Some(p) = csv {
        summary.write_csv(create(p)?).map_err(Failure::invalid)?;
    }
    if let Some(p) = jsonl {
        summary.write_jsonl(create(p)?).map_err(Failure::invalid)?;
    }
    Ok(())
}

fn seed_demo(settings: &Settings, out: &mut dyn Write) -> CmdResult {
    let path = settings.store.ratings();
    if !read_store(&path)?.is_empty() {
        return Err(Failure::invalid(anyhow!(
            "{} already has ratings; seed-demo only fills an empty store",
            path.display()
        )));
    }
    let registry = load_registry(settings, &load_lexicon(settings)?)?;
    let log = RatingLog::open(&path, Arc::new(SystemClock)).map_err(Failure::invalid)?;
    let ratings = demo::demo_ratings();
    for (variant, rating) in &ratings {
        let name = &registry.get(*variant).display_name;
        log.record(name, *rating as i64, None, &registry, &NoDuels)
            .map_err(Failure::invalid)?;
    }
    writeln!(out, "wrote {} demo ratings to {}", ratings.len(), path.display()).map_err(io_err)
}
