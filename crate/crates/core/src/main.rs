use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracplap::harness::{self, ArtifactWriter, LoadedConfig, Mode, RunOptions};
use fracplap::{LabError, Result};

#[derive(Parser)]
#[command(name = "fracplap", version, about = "Nonlocal p(x,y)-Laplacian flows and their large-exponent limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config describes.
    Run(Common),
    /// Print the resolved plan without solving anything.
    Describe {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the invariant suite.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Reduced sample counts.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(k) = threads {
        if k == 0 {
            return Err(LabError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// A config that never parsed still leaves a report in the run directory.
fn report_early_failure(dir: &std::path::Path, err: &LabError) -> Result<()> {
    let mut w = ArtifactWriter::create(dir)?;
    w.write_json("error.json", &harness::error_report(err))?;
    w.finish(serde_json::json!({
        "program": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "status": "error",
    }))
}

fn print_lines(lines: &[String]) {
    for l in lines {
        println!("{l}");
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(c) => {
            set_threads(c.threads)?;
            let lc = match LoadedConfig::from_path(&c.config) {
                Ok(lc) => lc,
                Err(e) => {
                    if let Some(dir) = &c.out {
                        report_early_failure(dir, &e)?;
                    }
                    return Err(e);
                }
            };
            let validate = lc.config.experiment.mode == Mode::Validate;
            let out = harness::run(&lc, &RunOptions { out: c.out, seed: c.seed, threads: c.threads })?;
            print_lines(&out.lines);
            println!("wrote {} files to {}", out.files.len() + 1, out.dir.display());
            Ok(out.ok || !validate)
        }
        Command::Describe { config } => {
            let lc = LoadedConfig::from_path(&config)?;
            print!("{}", harness::describe(&lc)?);
            Ok(true)
        }
        Command::Validate { config, out, seed, threads, quick } => {
            set_threads(threads)?;
            let lc = config.as_deref().map(LoadedConfig::from_path).transpose()?;
            let seed = seed.or(lc.as_ref().map(|l| l.config.experiment.seed)).unwrap_or(0);
            let quick = quick || lc.as_ref().is_some_and(|l| l.config.experiment.quick);
            let dir = out.or(lc.as_ref().map(|l| l.config.output.directory.clone()));
            let (ok, lines) = match dir {
                Some(d) => {
                    let mut w = ArtifactWriter::create(&d)?;
                    let r = harness::validate_into(seed, quick, &mut w)?;
                    w.finish(serde_json::json!({
                        "program": env!("CARGO_PKG_NAME"),
                        "version": env!("CARGO_PKG_VERSION"),
                        "config_sha256": lc.as_ref().map(LoadedConfig::sha256),
                        "mode": "validate",
                        "seed": seed,
                        "status": if r.0 { "ok" } else { "failed_checks" },
                    }))?;
                    r
                }
                None => {
                    let outcomes = fracplap::checks::run_all(seed, quick)?;
                    (outcomes.iter().all(|c| c.passed), outcomes.iter().map(|c| c.line()).collect())
                }
            };
            print_lines(&lines);
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", harness::error_report(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
