//! Multi-seed experiment orchestration and artifact emission.
//!
//! Layout under `out_dir`:
//! - `metrics/<variant>_seed<seed>.jsonl`: one evaluation record per line
//! - `dumps/<variant>_seed<seed>.json`: trainer state of a failed run
//! - `attention/<variant>_seed<seed>.csv`: final attention dump, if enabled
//! - `runs.csv`: one row per (variant, seed)
//! - `summary.csv`: one row per variant
//!
//! Every file is a deterministic function of the config.

mod attention;
mod stats;

pub use attention::{attention_csv, emit_attention, greedy_episode};
pub use stats::{bold_mask, t_two_sided_p, ttest, ttest_with, TTest, TTestKind, ALPHA};

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::advantage::Variant;
use crate::envs::{DecPomdp, EnvSpec};
use crate::error::{MacaError, Result};
use crate::trainer::{MetricRecord, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Environment steps between evaluations; overrides `train`.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub ttest: TTestKind,
    #[serde(default)]
    pub emit_attention: bool,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn default_eval_interval() -> u64 {
    2_000
}

fn default_eval_episodes() -> usize {
    32
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_threads() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(MacaError::invalid("seed list is empty"));
        }
        if self.variants.is_empty() {
            return Err(MacaError::invalid("variant list is empty"));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(MacaError::invalid(
                "evaluation cadence and episode count must be positive",
            ));
        }
        if self.threads == 0 {
            return Err(MacaError::invalid("threads must be at least 1"));
        }
        for v in &self.variants {
            self.run_config(*v, 0).validate()?;
        }
        Ok(())
    }

    /// Training config of one (variant, seed) cell.
    pub fn run_config(&self, variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            variant,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            use_gae: self.train.use_gae && variant == Variant::Jnt,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one (variant, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub env_steps: u64,
    /// `(step, return_mean)` at every evaluation.
    pub series: Vec<(u64, f64)>,
}

impl RunRecord {
    pub fn final_return(&self) -> f64 {
        self.series.last().map_or(f64::NAN, |p| p.1)
    }

    pub fn best_return(&self) -> f64 {
        self.series.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub failed: usize,
    pub final_mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub final_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
    /// Final return not significantly worse than the best variant.
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub runs: Vec<RunRecord>,
    pub variants: Vec<VariantSummary>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

impl RunSummary {
    /// Per-variant statistics over successful runs, in first-appearance order.
    pub fn from_runs(runs: Vec<RunRecord>, kind: TTestKind) -> Result<Self> {
        let mut order: Vec<Variant> = Vec::new();
        for r in &runs {
            if !order.contains(&r.variant) {
                order.push(r.variant);
            }
        }
        let finals: Vec<(Variant, Vec<f64>)> = order
            .iter()
            .map(|&v| {
                let xs = runs
                    .iter()
                    .filter(|r| r.variant == v && r.status == RunStatus::Ok)
                    .map(RunRecord::final_return)
                    .collect();
                (v, xs)
            })
            .collect();
        let bold = bold_mask(&finals, kind)?;
        let variants = order
            .iter()
            .zip(&finals)
            .map(|(&v, (_, fin))| {
                let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.variant == v).collect();
                let best: Vec<f64> = mine
                    .iter()
                    .filter(|r| r.status == RunStatus::Ok)
                    .map(|r| r.best_return())
                    .collect();
                let (final_mean, final_std) = mean_std(fin);
                let (best_mean, best_std) = mean_std(&best);
                VariantSummary {
                    variant: v,
                    runs: mine.len(),
                    failed: mine.iter().filter(|r| r.status == RunStatus::Failed).count(),
                    final_mean,
                    final_std,
                    best_mean,
                    best_std,
                    bold: bold.contains(&v),
                }
            })
            .collect();
        Ok(Self { runs, variants })
    }

    /// Final returns of successful runs of `variant`, in seed order.
    pub fn finals(&self, variant: Variant) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant && r.status == RunStatus::Ok)
            .map(RunRecord::final_return)
            .collect()
    }

    pub fn variant(&self, variant: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == variant)
    }
}

fn run_stem(variant: Variant, seed: u64) -> String {
    format!("{variant}_seed{seed}")
}

pub fn metrics_path(out_dir: &Path, variant: Variant, seed: u64) -> PathBuf {
    out_dir
        .join("metrics")
        .join(format!("{}.jsonl", run_stem(variant, seed)))
}

fn write_jsonl(path: &Path, metrics: &[MetricRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for m in metrics {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricRecord>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Trains one (variant, seed) cell and writes its artifacts. Training errors
/// are captured in the record rather than propagated.
pub fn run_single<E: DecPomdp + ?Sized>(
    env: &E,
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
) -> Result<RunRecord> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out.join("metrics"))?;
    let mut trainer = Trainer::new(env, cfg.run_config(variant, seed))?;
    let outcome = trainer.run();
    write_jsonl(&metrics_path(out, variant, seed), trainer.metrics())?;
    let series = trainer.metrics().iter().map(|m| (m.step, m.return_mean)).collect();
    let (status, error) = match outcome {
        Ok(_) => {
            if cfg.emit_attention {
                let path = out.join("attention").join(format!("{}.csv", run_stem(variant, seed)));
                emit_attention(
                    env,
                    &trainer.actors,
                    &trainer.critic,
                    trainer.sigma(),
                    trainer.config.eval_seed,
                    &path,
                )?;
            }
            (RunStatus::Ok, None)
        }
        Err(e) => {
            log::warn!("run {variant} seed {seed} failed: {e}");
            fs::create_dir_all(out.join("dumps"))?;
            let dump = out.join("dumps").join(format!("{}.json", run_stem(variant, seed)));
            fs::write(dump, serde_json::to_string_pretty(&trainer.state_dump())?)?;
            (RunStatus::Failed, Some(e.to_string()))
        }
    };
    Ok(RunRecord {
        variant,
        seed,
        status,
        error,
        env_steps: trainer.env_steps(),
        series,
    })
}

/// Runs every (variant, seed) cell, on `threads` workers, then writes
/// `runs.csv` and `summary.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let cells: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let slots: Vec<Mutex<Option<Result<RunRecord>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(v, s)) = cells.get(k) else {
            break;
        };
        log::info!("run {v} seed {s}");
        let r = run_single(&env, cfg, v, s);
        *slots[k].lock().expect("result slot") = Some(r);
    };
    if cfg.threads == 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..cfg.threads.min(cells.len()) {
                scope.spawn(work);
            }
        });
    }
    let runs = slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every cell visited"))
        .collect::<Result<Vec<_>>>()?;
    let summary = RunSummary::from_runs(runs, cfg.ttest)?;
    write_runs_csv(&cfg.out_dir.join("runs.csv"), &summary.runs)?;
    write_summary_csv(&cfg.out_dir.join("summary.csv"), &summary.variants)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunRow {
    variant: Variant,
    seed: u64,
    status: RunStatus,
    env_steps: u64,
    final_return: f64,
    best_return: f64,
    error: String,
}

pub fn write_runs_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in runs {
        w.serialize(RunRow {
            variant: r.variant,
            seed: r.seed,
            status: r.status,
            env_steps: r.env_steps,
            final_return: r.final_return(),
            best_return: r.best_return(),
            error: r.error.clone().unwrap_or_default(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, variants: &[VariantSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for v in variants {
        w.serialize(v)?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds a summary from `runs.csv` and the JSONL metrics of an output
/// directory, so statistics can be recomputed from raw series.
pub fn load_summary(out_dir: &Path, kind: TTestKind) -> Result<RunSummary> {
    let mut rdr = csv::Reader::from_path(out_dir.join("runs.csv"))?;
    let mut runs = Vec::new();
    for row in rdr.deserialize() {
        let row: RunRow = row?;
        let metrics = read_jsonl(&metrics_path(out_dir, row.variant, row.seed))?;
        runs.push(RunRecord {
            variant: row.variant,
            seed: row.seed,
            status: row.status,
            error: (!row.error.is_empty()).then_some(row.error),
            env_steps: row.env_steps,
            series: metrics.iter().map(|m| (m.step, m.return_mean)).collect(),
        });
    }
    RunSummary::from_runs(runs, kind)
}

/// Pairwise t-tests of every variant's final returns against the best one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub variant: Variant,
    pub against: Variant,
    pub test: Option<TTest>,
}

pub fn compare_to_best(summary: &RunSummary, kind: TTestKind) -> Result<Vec<Comparison>> {
    let Some(best) = summary.variants.iter().filter(|v| v.final_mean.is_finite()).fold(
        None::<&VariantSummary>,
        |acc, v| match acc {
            Some(b) if b.final_mean >= v.final_mean => Some(b),
            _ => Some(v),
        },
    ) else {
        return Ok(Vec::new());
    };
    let reference = summary.finals(best.variant);
    summary
        .variants
        .iter()
        .map(|v| {
            let mine = summary.finals(v.variant);
            let test = if mine.len() >= 2 && reference.len() >= 2 {
                Some(ttest_with(&mine, &reference, kind)?)
            } else {
                None
            };
            Ok(Comparison {
                variant: v.variant,
                against: best.variant,
                test,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(variant: Variant, seed: u64, returns: &[f64]) -> RunRecord {
        RunRecord {
            variant,
            seed,
            status: RunStatus::Ok,
            error: None,
            env_steps: 10 * returns.len() as u64,
            series: returns.iter().enumerate().map(|(k, &r)| (10 * k as u64, r)).collect(),
        }
    }

    #[test]
    fn summary_statistics() {
        let runs = vec![
            record(Variant::Full, 0, &[0.0, 1.0]),
            record(Variant::Full, 1, &[0.5, 0.8]),
            record(Variant::Jnt, 0, &[0.0, 0.2]),
            RunRecord {
                status: RunStatus::Failed,
                error: Some("diverged".into()),
                ..record(Variant::Jnt, 1, &[0.0])
            },
        ];
        let s = RunSummary::from_runs(runs, TTestKind::Student).unwrap();
        let full = s.variant(Variant::Full).unwrap();
        assert!((full.final_mean - 0.9).abs() < 1e-12);
        assert!((full.final_std - (0.02f64).sqrt()).abs() < 1e-12);
        let jnt = s.variant(Variant::Jnt).unwrap();
        assert_eq!((jnt.runs, jnt.failed), (2, 1));
        assert!(full.bold && !jnt.bold);
    }

    #[test]
    fn config_rejects_empty_seeds() {
        let text =
            r#"{"env": {"kind": "subset_game", "n_agents": 2, "n_actions": 2, "levels": [], "seed": 0}, "seeds": []}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }
}
