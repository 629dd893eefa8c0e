use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use maca::advantage::Variant;
use maca::harness::{
    load_summary, metrics_path, read_jsonl, run_experiment, t_two_sided_p, ttest, ttest_with, ExperimentConfig,
    RunStatus, TTestKind,
};

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn bandit(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        out_dir: out.to_path_buf(),
        ..config("bandit.json")
    }
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn bandit_experiment_writes_one_solved_row() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&bandit(dir.path())).unwrap();
    assert_eq!(summary.runs.len(), 1);
    assert_eq!(summary.runs[0].status, RunStatus::Ok);
    assert!(summary.runs[0].final_return() >= 0.95);
    let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 2);
    assert!(metrics_path(dir.path(), Variant::Full, 0).exists());
}

#[test]
fn every_variant_gets_a_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bandit(dir.path());
    cfg.variants = Variant::ALL.to_vec();
    cfg.train.total_steps = 1_000;
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.variants.len(), 7);
    let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 8);
}

#[test]
fn repeated_experiments_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = bandit(a.path());
    cfg.variants = vec![Variant::Full, Variant::Ind];
    cfg.seeds = vec![0, 1];
    cfg.train.total_steps = 1_000;
    cfg.emit_attention = true;
    run_experiment(&cfg).unwrap();
    cfg.out_dir = b.path().to_path_buf();
    cfg.threads = 2;
    run_experiment(&cfg).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.keys().any(|p| p.starts_with("attention")));
    assert_eq!(sa, sb);
}

#[test]
fn summary_recomputed_from_metrics_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bandit(dir.path());
    cfg.variants = vec![Variant::Full, Variant::Jnt];
    cfg.seeds = vec![0, 1, 2];
    cfg.train.total_steps = 1_000;
    let live = run_experiment(&cfg).unwrap();
    let loaded = load_summary(dir.path(), TTestKind::Student).unwrap();
    assert_eq!(live, loaded);
    for r in &loaded.runs {
        let last = read_jsonl(&metrics_path(dir.path(), r.variant, r.seed)).unwrap();
        assert_eq!(r.final_return(), last.last().unwrap().return_mean);
    }
    let mut rdr = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "final_mean").unwrap();
    for (row, v) in rdr.records().zip(&loaded.variants) {
        let x: f64 = row.unwrap()[col].parse().unwrap();
        assert_eq!(x, v.final_mean);
    }
}

/// Two-sided p for even ν from the finite series of the t CDF:
/// A = sinθ [1 + cos²θ/2 + (1·3)/(2·4) cos⁴θ + …], θ = atan(t/√ν).
fn series_p(t: f64, nu: usize) -> f64 {
    let theta = (t.abs() / (nu as f64).sqrt()).atan();
    let c2 = theta.cos().powi(2);
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..nu / 2 {
        term *= (2 * k - 1) as f64 / (2 * k) as f64 * c2;
        sum += term;
    }
    1.0 - theta.sin() * sum
}

#[test]
fn pooled_t_test_matches_closed_form() {
    let a = [1.2, 0.8, 1.5, 1.1, 0.9];
    let b = [0.4, 0.9, 0.3, 0.7, 0.2];
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let ss = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    };
    let sp2 = (ss(&a) + ss(&b)) / 8.0;
    let t = (mean(&a) - mean(&b)) / (sp2 * (2.0 / 5.0)).sqrt();
    let r = ttest(&a, &b).unwrap();
    assert_eq!(r.df, 8.0);
    assert!((r.t - t).abs() < 1e-12);
    assert!((r.p - series_p(t, 8)).abs() < 1e-9, "{} vs {}", r.p, series_p(t, 8));
    assert!(r.significant);
    for t in [0.0, 0.3, 1.0, 2.306, 4.0] {
        for nu in [2, 4, 8, 20] {
            assert!((t_two_sided_p(t, nu as f64) - series_p(t, nu)).abs() < 1e-9);
        }
    }
}

#[test]
fn welch_reduces_to_pooled_for_equal_variances_and_sizes() {
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [2.0, 3.0, 4.0, 5.0];
    let s = ttest_with(&a, &b, TTestKind::Student).unwrap();
    let w = ttest_with(&a, &b, TTestKind::Welch).unwrap();
    assert!((s.t - w.t).abs() < 1e-12);
    assert!((s.df - w.df).abs() < 1e-9);
    assert!(!s.significant);
}
