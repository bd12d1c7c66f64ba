use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use cranio_cli::config::RunConfig;
use cranio_cli::stages::{self, Layout};

#[derive(Parser)]
#[command(name = "cranio", version, about = "Disentangled head-shape modelling and surgical planning")]
struct Cli {
    /// Run configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides one config field, e.g. `--set training.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort.
    Synth,
    /// Assign train/val/test splits.
    Split,
    /// Balance training classes by spectral interpolation.
    Augment,
    /// Export per-subject spectral coefficients.
    Spectra,
    /// Train the model.
    Train,
    /// Reconstruction, diversity and disentanglement metrics.
    Eval {
        /// Score an identity reconstructor instead of the trained model.
        #[arg(long)]
        identity_stub: bool,
    },
    /// Encode the cohort and fit per-attribute discriminant models.
    Analyze,
    /// Rank procedures and export a trajectory for one patient.
    Plan,
    /// Import the run into the service store.
    Register,
    /// Import the run and start the planning service.
    Serve,
    /// Every stage in order.
    RunAll,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Split => "split",
            Command::Augment => "augment",
            Command::Spectra => "spectra",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Analyze => "analyze",
            Command::Plan => "plan",
            Command::Register => "register",
            Command::Serve => "serve",
            Command::RunAll => "run-all",
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    }
    .with_overrides(&cli.sets)?;
    config.service.apply_env(|k| std::env::var(k).ok())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    let layout = Layout::new(&config.out);
    match &cli.command {
        Command::Synth => stages::synth(&config, &layout),
        Command::Split => stages::split(&config, &layout),
        Command::Augment => stages::augment(&config, &layout),
        Command::Spectra => stages::spectra(&config, &layout),
        Command::Train => stages::train(&config, &layout),
        Command::Eval { identity_stub } => stages::eval(&config, &layout, *identity_stub).map(|m| {
            println!("{}", serde_json::to_string(&m).expect("metrics serialise"));
        }),
        Command::Analyze => stages::analyze(&config, &layout).map(|s| {
            println!("{}", serde_json::to_string(&s).expect("summary serialises"));
        }),
        Command::Plan => stages::plan(&config, &layout).map(|s| {
            println!("{}", serde_json::to_string(&s).expect("plan serialises"));
        }),
        Command::Register => stages::register(&config, &layout).map(|_| ()),
        Command::Serve => {
            stages::register(&config, &layout)?;
            let mut service = config.service.clone();
            service.root = config.service_root();
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(cranio_service::serve(&service))?;
            Ok(())
        }
        Command::RunAll => stages::run_all(&config, &layout),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": format!("{e:#}"),
                "command": cli.command.name(),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
