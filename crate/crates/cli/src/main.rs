use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use cascade_spotter_core::influence::{KernelParams, DEFAULT_THETA};
use cascade_spotter_core::labeler::annotations::write_annotations;
use cascade_spotter_core::labeler::{AnnotationRecord, SearchConfig};
use cascade_spotter_core::par;
use cascade_spotter_core::pipeline::{
    label_command, process, train_command, LabelConfig, PipelineError, ProcessConfig, TrainConfig,
    ANNOTATIONS_FILE, DEFAULT_FINE_TUNE_ROUNDS, MODEL_FILE,
};
use cascade_spotter_core::synthetic::{synthetic_dump, DumpConfig};
use cascade_spotter_core::table::{StagedWrites, UsersTable, USERS_FILE};
use cascade_spotter_service::{AppState, ServiceConfig, ServiceError};

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

const TEMPLATE_FILE: &str = "annotation_template.csv";

#[derive(Parser)]
#[command(name = "cascade-spotter", version, about = "Retweet-cascade influence and bot scoring")]
struct Cli {
    /// Output (and data) directory.
    #[arg(long, global = true, env = "CASCADE_SPOTTER_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads for the data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest tweet dumps and write the user, cascade and hashtag tables.
    Process(ProcessArgs),
    /// Train a bot classifier from annotations, or fine-tune an existing one.
    Train(TrainArgs),
    /// Add a botness column to users.csv.
    Label(LabelArgs),
    /// Serve the explorer API over a processed directory.
    Serve(ServeArgs),
    /// Write a blank annotation sheet for the processed users.
    Template(TemplateArgs),
    /// Generate a synthetic dump with ground-truth annotations.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kernel {
    Exp,
    Plaw,
}

#[derive(Args)]
struct ProcessArgs {
    /// Tweet dumps: JSON lines, optionally gzipped.
    #[arg(long = "input", short, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "exp")]
    kernel: Kernel,
    /// Decay rate in 1/s.
    #[arg(long, default_value_t = DEFAULT_THETA, allow_negative_numbers = true)]
    theta: f64,
    /// Kernel scale; defaults to 1/theta. Parent probabilities do not depend on it.
    #[arg(long, allow_negative_numbers = true)]
    kappa: Option<f64>,
    /// Follower-count mark exponent.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    beta: f64,
    /// Power-law time offset in seconds.
    #[arg(long = "c", default_value_t = 1.0, allow_negative_numbers = true)]
    c: f64,
    /// Word-embedding table for description features.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = cascade_spotter_core::features::DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    /// Also score users with this model.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Defaults to users.csv in the output directory.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Defaults to annotations.csv in the output directory.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Where to write the model; defaults to model.json in the output directory.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Fine-tune this model instead of searching from scratch.
    #[arg(long)]
    fine_tune: Option<PathBuf>,
    /// Boosting rounds added when fine-tuning.
    #[arg(long, default_value_t = DEFAULT_FINE_TUNE_ROUNDS)]
    rounds: usize,
    /// Earlier annotations mixed in when fine-tuning.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random-search draws.
    #[arg(long, default_value_t = 20)]
    draws: usize,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Defaults to model.json in the output directory, if present.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Built explorer assets to serve at /.
    #[arg(long)]
    ui: Option<PathBuf>,
    /// Boosting rounds per retrain.
    #[arg(long, default_value_t = DEFAULT_FINE_TUNE_ROUNDS)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TemplateArgs {
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    tweets: usize,
    #[arg(long, default_value_t = 2_000)]
    users: usize,
    #[arg(long, default_value_t = 0.3)]
    bot_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use cascade_spotter_core::labeler::LabelError;
        use cascade_spotter_core::table::TableError;
        match self {
            CliError::Pipeline(e) | CliError::Service(ServiceError::Pipeline(e)) => e.exit_code() as u8,
            CliError::Service(ServiceError::Table(TableError::Io { .. }))
            | CliError::Service(ServiceError::Label(LabelError::Io { .. })) => EXIT_IO,
            CliError::Service(ServiceError::Table(_)) | CliError::Service(ServiceError::Label(_)) => EXIT_INVALID,
            CliError::Service(_) => EXIT_INTERNAL,
            CliError::Io { .. } => EXIT_IO,
            CliError::Invalid(_) => EXIT_INVALID,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    par::init_threads(cli.threads);

    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out;
    match cli.command {
        Command::Process(a) => run_process(&out, a),
        Command::Train(a) => run_train(&out, a),
        Command::Label(a) => run_label(&out, a),
        Command::Serve(a) => run_serve(&out, a),
        Command::Template(a) => run_template(&out, a),
        Command::Synth(a) => run_synth(&out, a),
    }
}

fn run_process(out: &Path, a: ProcessArgs) -> Result<(), CliError> {
    let kernel = match a.kernel {
        Kernel::Exp => KernelParams::exponential(a.kappa.unwrap_or(1.0 / a.theta), a.theta, a.beta),
        Kernel::Plaw => KernelParams::power_law(a.kappa.unwrap_or(1.0), a.theta, a.beta, a.c),
    };
    let mut cfg = ProcessConfig::new(a.inputs, out.to_path_buf());
    cfg.kernel = kernel;
    cfg.embeddings = a.embeddings;
    cfg.vocab_size = a.vocab_size;
    cfg.model = a.model;
    let summary = process(&cfg)?;
    info!(
        "{} tweets, {} users, {} cascades written to {}",
        summary.meta.tweets,
        summary.meta.users,
        summary.meta.cascades,
        out.display()
    );
    Ok(())
}

/// `SOURCE_DATE_EPOCH` as RFC 3339, so repeated builds produce identical models.
fn trained_at() -> Option<String> {
    let secs: i64 = std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()?;
    chrono::DateTime::from_timestamp(secs, 0).map(|t| t.to_rfc3339())
}

fn run_train(out: &Path, a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = TrainConfig::new(
        a.features.unwrap_or_else(|| out.join(USERS_FILE)),
        a.annotations.unwrap_or_else(|| out.join(ANNOTATIONS_FILE)),
        a.model.unwrap_or_else(|| out.join(MODEL_FILE)),
    );
    cfg.fine_tune = a.fine_tune;
    cfg.fine_tune_rounds = a.rounds;
    cfg.replay = a.replay;
    cfg.search = SearchConfig {
        draws: a.draws,
        folds: a.folds,
        seed: a.seed,
        ..SearchConfig::default()
    };
    cfg.trained_at = trained_at();
    let (_, report) = train_command(&cfg)?;
    match report.cv_auc {
        Some(auc) => info!("{}: {} trees, CV AUC {auc:.4}", report.mode, report.trees),
        None => info!("{}: {} trees", report.mode, report.trees),
    }
    info!("model written to {}", cfg.model_out.display());
    Ok(())
}

fn run_label(out: &Path, a: LabelArgs) -> Result<(), CliError> {
    let cfg = LabelConfig {
        features: a.features.unwrap_or_else(|| out.join(USERS_FILE)),
        model: a.model.unwrap_or_else(|| out.join(MODEL_FILE)),
        out_dir: out.to_path_buf(),
    };
    let table = label_command(&cfg)?;
    info!("scored {} users", table.len());
    Ok(())
}

fn run_template(out: &Path, a: TemplateArgs) -> Result<(), CliError> {
    let features = a.features.unwrap_or_else(|| out.join(USERS_FILE));
    let table = UsersTable::load(&features).map_err(PipelineError::from)?;
    let records: Vec<AnnotationRecord> = table
        .user_ids()
        .iter()
        .zip(&table.screen_names)
        .map(|(id, name)| AnnotationRecord {
            user_id: id.clone(),
            screen_name: name.clone(),
            label: None,
        })
        .collect();
    let mut staged = StagedWrites::new(out).map_err(PipelineError::from)?;
    staged
        .write_bytes(TEMPLATE_FILE, &csv_bytes(&records))
        .map_err(PipelineError::from)?;
    staged.commit().map_err(PipelineError::from)?;
    info!("{} rows written to {}", records.len(), out.join(TEMPLATE_FILE).display());
    Ok(())
}

fn csv_bytes(records: &[AnnotationRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_annotations(&mut buf, records).expect("writing to memory");
    buf
}

fn run_synth(out: &Path, a: SynthArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.bot_fraction) || a.users == 0 {
        return Err(CliError::Invalid("need at least one user and a bot fraction in [0, 1]".into()));
    }
    let dump = synthetic_dump(&DumpConfig {
        tweets: a.tweets,
        users: a.users,
        bot_fraction: a.bot_fraction,
        seed: a.seed,
        ..DumpConfig::default()
    });
    let records: Vec<AnnotationRecord> = dump
        .labels
        .iter()
        .map(|(id, &label)| AnnotationRecord {
            user_id: id.clone(),
            screen_name: String::new(),
            label: Some(label),
        })
        .collect();
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        context: format!("creating {}", out.display()),
        source,
    })?;
    let mut staged = StagedWrites::new(out).map_err(PipelineError::from)?;
    staged
        .write_bytes("synthetic.jsonl", dump.text().as_bytes())
        .map_err(PipelineError::from)?;
    staged
        .write_bytes("synthetic_labels.csv", &csv_bytes(&records))
        .map_err(PipelineError::from)?;
    staged.commit().map_err(PipelineError::from)?;
    info!("{} tweets and {} labels written to {}", dump.lines.len(), records.len(), out.display());
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    info!("shutting down");
}

fn run_serve(out: &Path, a: ServeArgs) -> Result<(), CliError> {
    let mut cfg = ServiceConfig::new(out.to_path_buf());
    cfg.model = a.model;
    cfg.annotations = a.annotations;
    cfg.ui_dir = a.ui;
    cfg.fine_tune_rounds = a.rounds;
    cfg.seed = a.seed;
    let state = Arc::new(AppState::load(cfg)?);
    info!("loaded {} users and {} cascades", state.data.len(), state.data.cascades.len());

    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        context: "starting runtime".into(),
        source,
    })?;
    let addr = SocketAddr::new(a.host, a.port);
    rt.block_on(async move {
        let listener = cascade_spotter_service::bind(addr).await.map_err(|source| CliError::Io {
            context: format!("binding {addr}"),
            source,
        })?;
        let local = listener.local_addr().map_err(|source| CliError::Io {
            context: "reading bound address".into(),
            source,
        })?;
        eprintln!("listening on http://{local}");
        cascade_spotter_service::serve(listener, state, shutdown_signal())
            .await
            .map_err(|source| CliError::Io {
                context: "serving".into(),
                source,
            })
    })
}
