use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use maca::advantage::Variant;
use maca::harness::{
    compare_to_best, load_summary, run_experiment, run_single, ExperimentConfig, RunStatus, TTestKind,
};
use maca::oracle::suite::run_suite;

#[derive(Parser)]
#[command(
    name = "maca",
    version,
    about = "Multi-level counterfactual credit assignment experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single (variant, seed) run.
    Train {
        #[command(flatten)]
        common: Common,
        /// Defaults to the first seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the first variant in the config.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Run every (variant, seed) cell of a config and write summaries.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Restrict to one variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// Replace the seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the exact verification suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report as JSON to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summaries and t-tests for a finished experiment directory.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Welch's unequal-variance test instead of the pooled Student test.
        #[arg(long)]
        welch: bool,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg =
        ExperimentConfig::load(&common.config).with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn print_summary(out: &std::path::Path, kind: TTestKind) -> Result<()> {
    let summary = load_summary(out, kind)?;
    println!(
        "{:<7} {:>4} {:>6} {:>12} {:>12} {:>12} {:>12} {:>5}",
        "variant", "runs", "failed", "final_mean", "final_std", "best_mean", "best_std", "bold"
    );
    for v in &summary.variants {
        println!(
            "{:<7} {:>4} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>5}",
            v.variant.name(),
            v.runs,
            v.failed,
            v.final_mean,
            v.final_std,
            v.best_mean,
            v.best_std,
            if v.bold { "*" } else { "" }
        );
    }
    for c in compare_to_best(&summary, kind)? {
        match c.test {
            Some(t) if c.variant != c.against => {
                println!(
                    "{} vs {}: t = {:.4}, df = {:.2}, p = {:.4e}",
                    c.variant, c.against, t.t, t.df, t.p
                )
            }
            Some(_) => {}
            None if c.variant != c.against => println!("{} vs {}: too few runs to test", c.variant, c.against),
            None => {}
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { common, seed, variant } => {
            let cfg = load(&common)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let variant = variant.unwrap_or(cfg.variants[0]);
            let env = cfg.env.build()?;
            let record = run_single(&env, &cfg, variant, seed)?;
            println!(
                "{variant} seed {seed}: final {:.4}, best {:.4}, {} env steps",
                record.final_return(),
                record.best_return(),
                record.env_steps
            );
            if let Some(e) = &record.error {
                eprintln!("run failed: {e}");
            }
            Ok(record.status == RunStatus::Ok)
        }
        Command::Experiment {
            common,
            variant,
            seed,
            threads,
        } => {
            let mut cfg = load(&common)?;
            if let Some(v) = variant {
                cfg.variants = vec![v];
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let summary = run_experiment(&cfg)?;
            print_summary(&cfg.out_dir, cfg.ttest)?;
            Ok(summary.runs.iter().all(|r| r.status == RunStatus::Ok))
        }
        Command::Verify { seed, out } => {
            let report = run_suite(seed)?;
            for c in &report.checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {:<58} value {:.3e} bound {:.1e}",
                    c.name, c.value, c.tolerance
                );
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&report)?)?;
            }
            Ok(report.passed())
        }
        Command::Report { out, welch } => {
            if !out.join("runs.csv").exists() {
                bail!("{} has no runs.csv", out.display());
            }
            print_summary(&out, if welch { TTestKind::Welch } else { TTestKind::Student })?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
