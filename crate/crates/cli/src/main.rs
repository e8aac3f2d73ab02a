//! `stochhom`: run homogenization experiments from a JSON config.
//!
//! Exit codes: 0 ok, 1 invariant failure, 2 config error, 3 numerical failure.

mod commands;
mod config;
mod failure;
mod manifest;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::RunOptions;
use failure::Failure;
use manifest::{Manifest, OutDir};

#[derive(Parser, Debug)]
#[command(name = "stochhom", version, about = "Estimate homogenized integrands and check their properties")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Exit nonzero when any estimate is flagged.
    #[arg(long, global = true)]
    strict: bool,

    /// Omit timestamps and wall-clock columns so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Multi-cell sweep of W_hom over ξ, t and realizations.
    Whom,
    /// ε-convergence study of a Dirichlet problem.
    Bvp,
    /// Run the property suites selected in the config.
    Verify,
    /// Write one realization of the coefficient field.
    FieldDump,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Whom => "whom",
            Command::Bvp => "bvp",
            Command::Verify => "verify",
            Command::FieldDump => "field-dump",
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config PATH is required".into()))?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    let loaded = config::load(path)?;
    let cfg = &loaded.config;
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = OutDir::create(dir, Manifest::new(cfg, cli.command.name(), cli.deterministic))?;
    out.dump_config(cfg)?;
    let opts = RunOptions {
        strict: cli.strict,
        deterministic: cli.deterministic,
    };
    match cli.command {
        Command::Whom => commands::whom(cfg, &out, opts),
        Command::Bvp => commands::bvp(cfg, &loaded.base_dir, &out, opts),
        Command::Verify => verify::verify(cfg, &loaded.base_dir, &out),
        Command::FieldDump => commands::field_dump(cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("stochhom {}: {f}", cli.command.name());
            f.exit_code()
        }
    }
}
