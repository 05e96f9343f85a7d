//! `awsalm` command-line interface.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the
//! `--config` file, `AWSALM_<SECTION>_<KEY>` environment variables, `--set`
//! overrides, then `--seed`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use awsalm::config::ExperimentConfig;
use awsalm::experiment::{self, Figure, STACK_FILE};
use awsalm::par;

#[derive(Parser)]
#[command(name = "awsalm", version, about = "Sono-switched nanodroplet ultrasound: simulate, localize, map")]
struct Cli {
    /// Log level (error, warn, info, debug); RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (`key = value` lines under `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed; overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory; defaults to `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an acquisition: stack file and ground truth.
    Simulate(Common),
    /// Run the localization pipeline on a stack file.
    Process {
        /// Stack file written by `simulate`.
        stack: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compute metrics from the tracks of a `process` run.
    Analyze {
        /// Output directory of `process`.
        processed: PathBuf,
        /// Stack file, for ROI curves and spatiotemporal projections.
        #[arg(long)]
        stack: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run one figure scenario and check its acceptance criteria.
    Reproduce {
        /// fig2k, fig5, fig6, fig7 or fig8.
        figure: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Report directory; defaults to `out/<figure>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status when a reproduced figure fails one of its checks.
const CHECKS_FAILED: u8 = 3;

fn load(common: &Common) -> awsalm::Result<(ExperimentConfig, awsalm::config::Ini, PathBuf)> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("experiment.seed={s}"));
    }
    let (cfg, ini) = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, ini, out))
}

fn run(cli: Cli) -> awsalm::Result<ExitCode> {
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, ini, out) = load(&common)?;
            log::info!("configuration:\n{}", awsalm::config::describe(&cfg));
            let s = par::with_threads(common.threads, || experiment::cmd_simulate(&cfg, &ini, &out))?;
            println!(
                "{} frames, {} vaporizations, {} destructions -> {}",
                s.frames,
                s.vaporizations,
                s.destructions,
                out.join(STACK_FILE).display()
            );
        }
        Command::Process { stack, common } => {
            let (cfg, ini, out) = load(&common)?;
            let s = par::with_threads(common.threads, || experiment::cmd_process(&stack, &cfg, &ini, &out))?;
            println!("{} frames, {} localizations, {} tracks -> {}", s.frames, s.events, s.tracks, out.display());
        }
        Command::Analyze {
            processed,
            stack,
            common,
        } => {
            let (cfg, ini, out) = load(&common)?;
            let s = par::with_threads(common.threads, || {
                experiment::cmd_analyze(&processed, stack.as_deref(), &cfg, &ini, &out)
            })?;
            for (k, v) in &s.metrics {
                println!("{k} = {v}");
            }
        }
        Command::Reproduce {
            figure,
            seed,
            threads,
            out,
        } => {
            let figure: Figure = figure.parse()?;
            let out = out.unwrap_or_else(|| PathBuf::from("out").join(figure.id()));
            let r = par::with_threads(threads, || experiment::cmd_reproduce(figure, seed, &out))?;
            for c in &r.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("report -> {}", out.display());
            if !r.passed() {
                return Ok(ExitCode::from(CHECKS_FAILED));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .parse_env("RUST_LOG")
        .format_timestamp_millis()
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
