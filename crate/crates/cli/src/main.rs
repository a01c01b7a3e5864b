use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pke_core::gateway::DEFAULT_PARALLELISM;
use pke_core::harness::{
    cmd_annotate, cmd_generate, cmd_run, cmd_synth, read_csv, render_summaries, report_header,
    summarize, BackendKind, CacheModeSetting, ExperimentConfig, GatewaySettings, HarnessError,
    ReportStyle,
};
use pke_core::minialpg::SynthSpec;
use pke_core::pipeline::{Strategy, StrategyKind};
use pke_core::retrieval::DEFAULT_K;

#[derive(Parser)]
#[command(
    name = "pke",
    version,
    about = "Difficulty-aware retrieval prompting for mini-ALPG code generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic corpus.
    Synth(SynthArgs),
    /// Score example difficulty and assign easy/medium/hard bands.
    Annotate(AnnotateArgs),
    /// Leave-one-out evaluation of one or more strategies.
    Run(RunArgs),
    /// Generate code for a single utterance.
    Generate(GenerateArgs),
    /// Render a table from a report CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    min_instructions: usize,
    #[arg(long, default_value_t = 6)]
    max_instructions: usize,
    /// Paraphrases emitted per code shape (1-3).
    #[arg(long, default_value_t = 3)]
    variants: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheModeArg {
    Record,
    Replay,
    Passthrough,
}

#[derive(Args, Default)]
struct GatewayArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Response store for record/replay.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    cache_mode: Option<CacheModeArg>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
}

impl GatewayArgs {
    fn apply(&self, settings: &mut GatewaySettings) {
        if let Some(backend) = self.backend {
            settings.backend = match backend {
                BackendArg::Mock => BackendKind::Mock,
                BackendArg::Http => BackendKind::Http,
            };
        }
        if let Some(endpoint) = &self.endpoint {
            settings.endpoint = Some(endpoint.clone());
        }
        if let Some(model) = &self.model {
            settings.model = model.clone();
        }
        if let Some(cache) = &self.cache {
            settings.cache = Some(cache.clone());
        }
        if let Some(mode) = self.cache_mode {
            settings.cache_mode = match mode {
                CacheModeArg::Record => CacheModeSetting::Record,
                CacheModeArg::Replay => CacheModeSetting::Replay,
                CacheModeArg::Passthrough => CacheModeSetting::Passthrough,
            };
        }
        if let Some(t) = self.timeout_secs {
            settings.timeout_secs = t;
        }
        if let Some(r) = self.max_retries {
            settings.max_retries = r;
        }
        if let Some(var) = &self.api_key_env {
            settings.api_key_env = var.clone();
        }
    }

    fn settings(&self) -> GatewaySettings {
        let mut settings = GatewaySettings::default();
        self.apply(&mut settings);
        settings
    }
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Score examples that already carry scores.
    #[arg(long)]
    rescore: bool,
    #[arg(long, default_value_t = DEFAULT_PARALLELISM)]
    parallelism: usize,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Comma-separated, e.g. zero-shot,few-shot,pke,sim,dnr-emh.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategyKind>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct GenerateArgs {
    /// Natural-language description of the program.
    query: String,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "pke")]
    strategy: StrategyKind,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// report.csv written by `run`.
    csv: PathBuf,
    #[arg(long, default_value = "main")]
    style: ReportStyle,
}

fn run_config(args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(corpus) = &args.corpus {
        config.corpus = corpus.clone();
    }
    if let Some(strategies) = &args.strategies {
        config.strategies = strategies.clone();
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(p) = args.parallelism {
        config.parallelism = p;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    args.gateway.apply(&mut config.gateway);
    config.validate()?;
    Ok(config)
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Synth(args) => {
            let spec = SynthSpec {
                variants_per_shape: args.variants,
                ..SynthSpec::new(
                    args.seed,
                    args.count,
                    (args.min_instructions, args.max_instructions),
                )
            };
            let manifest = cmd_synth(&spec, &args.out)?;
            eprintln!(
                "wrote {} examples to {}",
                manifest.len(),
                args.out.display()
            );
        }
        Command::Annotate(args) => {
            let gateway = args.gateway.settings().build()?;
            let [easy, medium, hard] = cmd_annotate(
                &args.input,
                &args.output,
                &gateway,
                args.parallelism,
                args.rescore,
            )?;
            println!("easy={easy} medium={medium} hard={hard}");
        }
        Command::Run(args) => {
            let config = run_config(&args)?;
            let report = cmd_run(&config)?;
            let table = pke_core::harness::render_report(&report, ReportStyle::Main)?;
            print!("{table}");
            eprintln!("report written to {}", config.output_dir.display());
        }
        Command::Generate(args) => {
            let gateway = args.gateway.settings().build()?;
            let strategy = Strategy::new(args.strategy, args.k);
            let run = cmd_generate(&args.query, &args.corpus, strategy, &gateway)?;
            if run.code.is_empty() {
                eprintln!("warning: {strategy} produced no code");
            } else {
                println!("{}", run.code);
            }
        }
        Command::Report(args) => {
            let rows = read_csv(&args.csv)?;
            let queries = {
                let mut ids: Vec<&str> = rows.iter().map(|r| r.query_id.as_str()).collect();
                ids.sort_unstable();
                ids.dedup();
                ids.len()
            };
            print!(
                "{}",
                render_summaries(&summarize(&rows), &report_header(queries), args.style)?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command).context("pke") {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = err
                .downcast_ref::<HarnessError>()
                .is_some_and(HarnessError::is_usage);
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
