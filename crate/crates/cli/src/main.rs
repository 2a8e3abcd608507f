//! `multifair`: train, post-process, audit, generate scenarios and run the
//! F₂ sweep from one JSON config.
//!
//! Exit codes: 0 success, 1 internal failure, 2 invalid input or config,
//! 3 no feasible iterate, 4 audit failure under `--strict`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use multifair::config::RunConfig;
use multifair::pipeline::{self, RunSummary};
use multifair::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

const EXIT_INTERNAL: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_AUDIT_FAILED: u8 = 4;

const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "multifair", version, about = "Metric-multifair learning, post-processing and auditing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Learn a multifair linear predictor.
    Train,
    /// Project fixed predictions onto the multifair set.
    Postprocess,
    /// Audit predictions on held-out metric samples.
    Audit {
        /// Exit with status 4 when any comparison fails.
        #[arg(long)]
        strict: bool,
    },
    /// Write a synthetic scenario and a config to run it.
    Gen,
    /// Run the F₂ sample-budget sweep.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Postprocess => "postprocess",
            Command::Audit { .. } => "audit",
            Command::Gen => "gen",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Serialize)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct Timings {
    started_unix_ms: u128,
    elapsed_ms: u128,
}

/// Everything needed to reproduce and verify a run. Only `timings` varies
/// between identical runs.
#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    version: &'static str,
    config: RunConfig,
    seed: u64,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    warnings: Vec<String>,
    status: &'static str,
    timings: Timings,
}

fn digest(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => match cli.command {
            Command::Sweep => RunConfig::from_json("{}")?,
            _ => return Err(Error::Config("--config is required for this subcommand".into())),
        },
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Returns the summary and whether the run met its success criterion.
fn execute(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<(RunSummary, bool), Error> {
    match cmd {
        Command::Train => {
            let s = pipeline::run_train(cfg, out)?;
            println!("train: wrote {} files to {}", s.outputs.len(), out.display());
            Ok((s, true))
        }
        Command::Postprocess => {
            let s = pipeline::run_postprocess(cfg, out)?;
            println!("postprocess: wrote {} files to {}", s.outputs.len(), out.display());
            Ok((s, true))
        }
        Command::Audit { strict } => {
            let (s, report) = pipeline::run_audit(cfg, out)?;
            println!(
                "audit: {} pass, {} fail, {} unsupported",
                report.passed, report.failed, report.unsupported
            );
            for c in report.comparisons.iter().filter(|c| c.verdict == multifair::audit::Verdict::Fail) {
                println!("  FAIL {} residual {:.6}", c.id, c.residual.unwrap_or(f64::NAN));
            }
            Ok((s, !strict || report.all_pass()))
        }
        Command::Gen => {
            let s = pipeline::run_gen(cfg, out)?;
            println!("gen: wrote {} files to {}", s.outputs.len(), out.display());
            Ok((s, true))
        }
        Command::Sweep => {
            let (s, sum) = pipeline::run_sweep(cfg, out)?;
            println!(
                "sweep: informed optimum {:.6}, no-query {:.6}",
                sum.informed_loss, sum.no_query_loss
            );
            for b in &sum.budgets {
                println!(
                    "  budget {:>4}: mean loss {:.6} (sd {:.6}), mean rank {:.2}",
                    b.budget, b.mean_loss, b.std_loss, b.mean_rank
                );
            }
            Ok((s, true))
        }
    }
}

fn write_manifest(
    cmd: Command,
    cfg: RunConfig,
    out: &Path,
    summary: RunSummary,
    ok: bool,
    started: SystemTime,
    clock: Instant,
) -> Result<(), Error> {
    let files = |paths: Vec<PathBuf>, base: Option<&Path>| -> Result<Vec<FileDigest>, Error> {
        paths
            .into_iter()
            .map(|p| {
                let full = base.map(|b| b.join(&p)).unwrap_or_else(|| p.clone());
                Ok(FileDigest {
                    sha256: digest(&full)?,
                    path: p,
                })
            })
            .collect()
    };
    let manifest = RunManifest {
        command: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        seeds: summary.seeds,
        inputs: files(summary.inputs, None)?,
        outputs: files(summary.outputs, Some(out))?,
        warnings: summary.warnings,
        status: if ok { "ok" } else { "audit_failed" },
        timings: Timings {
            started_unix_ms: started.duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
            elapsed_ms: clock.elapsed().as_millis(),
        },
    };
    multifair::io::write_json(&out.join(MANIFEST), &manifest)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        e if e.is_validation() => EXIT_INVALID,
        _ => EXIT_INTERNAL,
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let cfg = load_config(cli)?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::Config("`threads` must be positive".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (summary, ok) = execute(cli.command, &cfg, &cli.out)?;
    write_manifest(cli.command, cfg, &cli.out, summary, ok, started, clock)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_AUDIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
