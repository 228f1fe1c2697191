use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d2q::harness::{cmd_eval, cmd_generate, cmd_sweep_with, cmd_train, RunConfig};
use d2q::predictors::MethodKind;

#[derive(Parser)]
#[command(name = "dq", about = "Duration-deconfounded watch-time prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to one method (vr, wlr, d2q, resd2q).
    #[arg(long)]
    method: Option<MethodKind>,
    /// Number of duration groups.
    #[arg(long)]
    groups: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data seed, overriding the config's first seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write logged train and unbiased test sets plus a manifest per seed.
    Generate(Common),
    /// Train one predictor and write a checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on a test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test set; defaults to the checkpoint seed's generated test set.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Train and evaluate every (method, m, seed) cell and write reports.
    Sweep(Common),
}

fn load(common: &Common) -> d2q::Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        c.output_dir = out.clone();
    }
    if let Some(m) = common.method {
        c.methods = vec![m];
    }
    if let Some(k) = common.groups {
        c.group_counts = vec![k];
    }
    if let Some(s) = common.seed {
        c.seeds = vec![s];
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> d2q::Result<()> {
    match cli.command {
        Command::Generate(common) => {
            for p in cmd_generate(&load(&common)?)? {
                println!("{}", p.display());
            }
        }
        Command::Train(common) => {
            let c = load(&common)?;
            let method = common.method.unwrap_or(MethodKind::D2q);
            let path = cmd_train(&c, method, common.groups.unwrap_or(1), common.seed)?;
            println!("{}", path.display());
        }
        Command::Eval {
            common,
            checkpoint,
            test,
        } => {
            let c = load(&common)?;
            let report = cmd_eval(&c, &checkpoint, test.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep(common) => {
            let c = load(&common)?;
            let total = c.cells().len();
            let mut done = 0;
            let result = cmd_sweep_with(&c, |row| {
                done += 1;
                match &row.error {
                    None => eprintln!(
                        "[{done}/{total}] {} m={} seed={} xgauc={:.4} mae={:.3}",
                        row.method, row.m, row.seed, row.xgauc, row.mae
                    ),
                    Some(e) => eprintln!(
                        "[{done}/{total}] {} m={} seed={} failed: {e}",
                        row.method, row.m, row.seed
                    ),
                }
            })?;
            print!("{}", result.summary_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
