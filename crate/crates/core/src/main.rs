use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use mwtl::cli::{generate, run_checks, Check, RunConfig};

#[derive(Parser)]
#[command(name = "mwtl", version, about = "Matrix-weighted Triebel-Lizorkin verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's `output`, then `mwtl_out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the config's check list.
    Run(Common),
    /// Write the weight field and the corpus.
    GenWeight(Common),
    /// Matrix A_p characteristic scan.
    Apchar(Common),
    /// Reducing operators and their verification constants.
    Reduce(Common),
    /// Weighted norms of the corpus.
    Norms(Common),
    /// Equivalence spreads of all norms.
    Equiv(Common),
    /// Hörmander constants and multiplier boundedness.
    Multiplier(Common),
    /// Run the named checks.
    Check {
        #[command(flatten)]
        common: Common,
        /// Check names: apchar, doubling, reduce, calderon, norms, equiv, jcf,
        /// fs, c38, hormander, multiplier.
        #[arg(required = true)]
        names: Vec<String>,
    },
}

fn load(common: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("mwtl_out"));
    Ok((cfg, out))
}

fn execute(cfg: &RunConfig, checks: &[Check], out: &Path) -> anyhow::Result<bool> {
    let outcome = run_checks(cfg, checks, Some(out))?;
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
    if !outcome.pass {
        eprintln!("failed checks: {}", outcome.failed.join(", "));
    }
    Ok(outcome.pass)
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    let (common, checks): (&Common, Vec<Check>) = match &cli.command {
        Command::GenWeight(c) => {
            let (cfg, out) = load(c)?;
            let resolved = generate(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&resolved)?);
            return Ok(true);
        }
        Command::Run(c) => {
            let (cfg, out) = load(c)?;
            return execute(&cfg, &cfg.check_list()?, &out);
        }
        Command::Apchar(c) => (c, vec![Check::Apchar]),
        Command::Reduce(c) => (c, vec![Check::Reduce]),
        Command::Norms(c) => (c, vec![Check::Norms]),
        Command::Equiv(c) => (c, vec![Check::Equiv]),
        Command::Multiplier(c) => (c, vec![Check::Hormander, Check::Multiplier]),
        Command::Check { common, names } => {
            let checks = names.iter().map(|n| n.parse()).collect::<Result<Vec<Check>, _>>()?;
            (common, checks)
        }
    };
    let (cfg, out) = load(common)?;
    execute(&cfg, &checks, &out)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
