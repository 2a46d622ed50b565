use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use tastegraph::pipeline::{self, Command, RunConfig};

/// Share-network engagement pipeline.
///
/// Commands run against a run directory (`--out`, default `run/`). Log
/// verbosity comes from `TASTEGRAPH_LOG` (e.g. `info`, `debug`).
#[derive(Parser, Debug)]
#[command(name = "tastegraph", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML run config; omitted sections take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Run directory, overriding the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Cmd {
    Generate,
    Ingest,
    Embed,
    Features,
    Analyze,
    Train,
    Isolate,
    Report,
    /// Every command in order.
    All,
    /// Print the resolved config with all defaults.
    Config,
}

impl Cmd {
    fn commands(self) -> Vec<Command> {
        match self {
            Cmd::Generate => vec![Command::Generate],
            Cmd::Ingest => vec![Command::Ingest],
            Cmd::Embed => vec![Command::Embed],
            Cmd::Features => vec![Command::Features],
            Cmd::Analyze => vec![Command::Analyze],
            Cmd::Train => vec![Command::Train],
            Cmd::Isolate => vec![Command::Isolate],
            Cmd::Report => vec![Command::Report],
            Cmd::All => Command::ALL.to_vec(),
            Cmd::Config => vec![],
        }
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

fn exit_for(e: &tastegraph::Error) -> ExitCode {
    ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_DATA })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TASTEGRAPH_LOG", "info")).init();
    let args = Args::parse();

    let mut cfg = match &args.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                log::error!("{e}");
                return exit_for(&e);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = args.out {
        cfg.out_dir = o;
    }
    let cfg = cfg.resolved();
    if let Err(e) = cfg.validate() {
        log::error!("{e}");
        return exit_for(&e);
    }

    if args.command == Cmd::Config {
        return match cfg.to_toml_string() {
            Ok(s) => {
                print!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                log::error!("{e}");
                exit_for(&e)
            }
        };
    }
    for cmd in args.command.commands() {
        if let Err(e) = pipeline::run(cmd, &cfg) {
            log::error!("{cmd}: {e}");
            return exit_for(&e);
        }
    }
    ExitCode::SUCCESS
}
