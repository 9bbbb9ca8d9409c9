use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use leno::harness::{run, Command, Config};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Verb {
    GenData,
    Train,
    Evaluate,
    VerifyRank,
    VerifyPicard,
    VerifyConstructive,
    Report,
}

impl From<Verb> for Command {
    fn from(v: Verb) -> Self {
        match v {
            Verb::GenData => Command::GenData,
            Verb::Train => Command::Train,
            Verb::Evaluate => Command::Evaluate,
            Verb::VerifyRank => Command::VerifyRank,
            Verb::VerifyPicard => Command::VerifyPicard,
            Verb::VerifyConstructive => Command::VerifyConstructive,
            Verb::Report => Command::Report,
        }
    }
}

/// Spectral neural operators and Picard solvers for Gierer–Meinhardt systems.
///
/// Exit status: 0 on success, 1 when a verification criterion fails, 2 on
/// any error.
#[derive(Debug, Parser)]
#[command(name = "leno", version)]
struct Cli {
    #[arg(value_enum)]
    verb: Verb,
    /// Flat `section.key = value` config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the top-level `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global()?;
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("override {o:?} is not key=value"))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    let command = Command::from(cli.verb);
    let outcome = run(command, &cfg, &cli.out)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    println!("{}: {}", command.name(), if outcome.pass { "pass" } else { "FAIL" });
    Ok(outcome.pass)
}
