use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod console;
mod error;
mod eval;
mod files;
mod generate;
mod inspect;
mod train;

use error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "duplex",
    version,
    about = "Full-duplex dialogue engine over symbolic audio"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Global {
    /// Engine config file. Defaults to $DUPLEX_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override as dotted.key=value (value parsed as JSON if possible).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Global {
    pub fn config(&self, extra: &[String]) -> CliResult<duplex_core::config::EngineConfig> {
        let mut all = self.overrides.clone();
        all.extend_from_slice(extra);
        files::load_config(self.config.as_deref(), &all)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded scenario suite and its manifest.
    Generate(generate::GenerateArgs),
    /// Train a policy.
    Train {
        #[command(subcommand)]
        mode: TrainMode,
    },
    /// Run a suite with the oracle or a model and write transcripts and a report.
    Eval(eval::EvalArgs),
    /// Latency statistics over saved transcripts.
    LatencyReport(eval::LatencyArgs),
    /// Drive the engine block by block from typed commands.
    Console(console::ConsoleArgs),
    /// Validate an artifact and print a summary.
    Inspect(inspect::InspectArgs),
}

#[derive(Subcommand)]
enum TrainMode {
    /// Supervised training on lagged-oracle rollouts.
    Sft(train::SftArgs),
    /// Preference optimisation from an initial model.
    Dpo(train::DpoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Implicit,
    Explicit,
    ImplicitAsr,
    ExplicitAsr,
    ExplicitNs,
}

impl StrategyArg {
    pub fn override_string(self) -> String {
        let name = match self {
            StrategyArg::Implicit => "implicit",
            StrategyArg::Explicit => "explicit",
            StrategyArg::ImplicitAsr => "implicit_asr",
            StrategyArg::ExplicitAsr => "explicit_asr",
            StrategyArg::ExplicitNs => "explicit_ns",
        };
        format!("strategy={name}")
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match cli.command {
        Command::Generate(a) => generate::run(g, a),
        Command::Train {
            mode: TrainMode::Sft(a),
        } => train::sft(g, a),
        Command::Train {
            mode: TrainMode::Dpo(a),
        } => train::dpo(g, a),
        Command::Eval(a) => eval::run(g, a),
        Command::LatencyReport(a) => eval::latency(g, a),
        Command::Console(a) => console::run(g, a),
        Command::Inspect(a) => inspect::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("duplex: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}
