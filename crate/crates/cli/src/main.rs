use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use homoglab_cli::{parse_config, run, CliError, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Correctors,
    Growth,
    Excess,
    #[value(name = "thmT")]
    ThmT,
    #[value(name = "corC")]
    CorC,
    #[value(name = "lemmaL")]
    LemmaL,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Command {
        match c {
            Cmd::Correctors => Command::Correctors,
            Cmd::Growth => Command::Growth,
            Cmd::Excess => Command::Excess,
            Cmd::ThmT => Command::ThmT,
            Cmd::CorC => Command::CorC,
            Cmd::LemmaL => Command::LemmaL,
        }
    }
}

/// Corrector and homogenization-error experiments on random lattice media.
#[derive(Debug, Parser)]
#[command(name = "homoglab", version)]
struct Cli {
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to HOMOGLAB_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

fn threads(cli: &Cli) -> Result<Option<usize>, CliError> {
    if cli.threads.is_some() {
        return Ok(cli.threads);
    }
    match std::env::var("HOMOGLAB_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Validation {
            field: "HOMOGLAB_THREADS".into(),
            msg: format!("cannot read '{v}'"),
        }),
        Err(_) => Ok(None),
    }
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = threads(&cli)? {
        if n == 0 {
            return Err(CliError::Validation { field: "threads".into(), msg: "must be positive".into() });
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool set once");
    }
    let text = std::fs::read_to_string(&cli.config)?;
    let mut config = parse_config(&text)?;
    if let Some(s) = cli.seed {
        config.seed = s;
        config.entries.push(("seed (command line)".into(), s.to_string()));
    }
    let command = config.resolve_command(Some(cli.command.into()))?;
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let manifest = run(&config, command, &out)?;
    if !manifest.all_certified() {
        return Err(CliError::Certification(manifest.failed_certifications().join(", ")));
    }
    eprintln!("{command}: wrote {} artifacts to {}", manifest.artifacts.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("homoglab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
