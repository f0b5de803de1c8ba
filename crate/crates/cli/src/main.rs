mod commands;
mod config;
mod exit;
mod toy;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mutaprobe_core::runner::{StubBackend, StubServer};

use crate::commands::OutputLock;
use crate::config::{Overrides, RunConfig};
use crate::exit::classify;

#[derive(Parser)]
#[command(name = "mutaprobe", version, about = "Prompt mutation campaigns, flip analysis and hidden-state probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Reset every knob to the reference study settings before applying other flags.
    #[arg(long)]
    paper_preset: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Flip-count thresholds; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    tau: Vec<usize>,
    /// Completion endpoint for every model (`stub` for the built-in one).
    #[arg(long, env = "MUTAPROBE_ENDPOINT")]
    endpoint: Option<String>,
    /// HTTP timeout per completion request, in seconds.
    #[arg(long, env = "MUTAPROBE_TIMEOUT_S")]
    timeout_s: Option<f64>,
    /// Exclude tokens without any alphanumeric character from mutation.
    #[arg(long)]
    skip_nonword_tokens: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus and write per-language statistics.
    Ingest(Common),
    /// Tokenize prompts and write the mutation plan.
    Mutate(Common),
    /// Send every pending prompt to the endpoint.
    Generate(Common),
    /// Run both oracles on every unjudged generation.
    Evaluate(Common),
    /// Flip tables, positions, significance and stability CSVs.
    Analyze(Common),
    /// Layer search, per-cell probes and group comparison.
    Probe(Common),
    /// Assemble the report bundle and manifest.
    Report(Common),
    /// All steps in order.
    Run(Common),
    /// Write synthetic activations for every ledger prompt.
    SynthActivations {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = toy::N_BLOCKS)]
        n_blocks: usize,
        #[arg(long, default_value_t = toy::HIDDEN_DIM)]
        hidden_dim: usize,
        #[arg(long = "signal-layer", default_values_t = [toy::SIGNAL_LAYER])]
        signal_layers: Vec<usize>,
        #[arg(long, default_value_t = 2.0)]
        margin: f64,
    },
    /// Serve the deterministic stub over HTTP until killed.
    StubServe {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
        #[arg(long, default_value_t = 0.7)]
        functional_rate: f64,
        #[arg(long, default_value_t = 0.35)]
        insecure_rate: f64,
        /// Answer this many requests with HTTP 503 first.
        #[arg(long, default_value_t = 0)]
        transient_failures: u32,
    },
    /// Write the toy corpus, grouping file and config into a directory.
    InitToy { dir: PathBuf },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        paper_preset: common.paper_preset,
        seed: common.seed,
        taus: common.tau.clone(),
        endpoint: common.endpoint.clone(),
        timeout_s: common.timeout_s,
        skip_nonword_tokens: common.skip_nonword_tokens,
    });
    cfg.validate(true)?;
    Ok(cfg)
}

fn with_config(common: &Common, f: impl FnOnce(&RunConfig) -> Result<()>) -> Result<()> {
    let cfg = load(common)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    f(&cfg)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(c) => with_config(&c, commands::ingest),
        Command::Mutate(c) => with_config(&c, commands::mutate),
        Command::Generate(c) => with_config(&c, commands::generate_all),
        Command::Evaluate(c) => with_config(&c, commands::evaluate_all),
        Command::Analyze(c) => with_config(&c, commands::analyze),
        Command::Probe(c) => with_config(&c, commands::probe),
        Command::Report(c) => with_config(&c, commands::report),
        Command::Run(c) => with_config(&c, commands::run_all),
        Command::SynthActivations {
            common,
            n_blocks,
            hidden_dim,
            signal_layers,
            margin,
        } => with_config(&common, |cfg| {
            commands::synth_activations(cfg, n_blocks, hidden_dim, signal_layers, margin)
        }),
        Command::StubServe {
            addr,
            functional_rate,
            insecure_rate,
            transient_failures,
        } => {
            let backend = StubBackend {
                functional_rate,
                insecure_rate,
                ..StubBackend::default()
            };
            let server = StubServer::start(backend, &addr, transient_failures)?;
            println!("stub endpoint listening on {}", server.url());
            server.wait();
            Ok(())
        }
        Command::InitToy { dir } => {
            toy::write(&dir)?;
            println!("toy corpus and config written to {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = classify(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(class.code())
        }
    }
}
