use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use maca::advantage::{default_sigma, Variant};
use maca::envs::DecPomdp;
use maca::harness::{run_experiment, ttest, ExperimentConfig, RunStatus};
use maca::oracle::optimal_return;
use maca::oracle::suite::{
    cmaes_sphere, corrset_checks, gradient_checks, jensen, oracle_games, reductions, unbiasedness, variance_checks,
    CheckResult,
};
use maca::trainer::train;

const SEED: u64 = 0;

fn report(criterion: u32, passed: bool, detail: &str) {
    println!(
        "criterion {criterion} {} {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
}

fn describe(checks: &[CheckResult]) -> String {
    checks
        .iter()
        .map(|c| format!("[{}: {:.3e} vs {:.0e}]", c.name, c.value, c.tolerance))
        .collect::<Vec<_>>()
        .join(" ")
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
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
fn criterion_01_unbiasedness() {
    let (checks, elapsed) = timed(|| unbiasedness(SEED).unwrap());
    let games = oracle_games(SEED).unwrap();
    let sizes_ok = games.len() >= 20
        && games.iter().any(|(g, _)| g.n_agents() == 2)
        && games.iter().any(|(g, _)| g.n_agents() == 3)
        && games
            .iter()
            .all(|(g, _)| g.horizon() == 1 && g.n_actions().iter().all(|&k| k <= 3));
    let fast = elapsed < Duration::from_secs(5);
    let passed = sizes_ok && fast && checks.iter().all(|c| c.passed);
    report(
        1,
        passed,
        &format!("{} games, {:.2?} {}", games.len(), elapsed, describe(&checks)),
    );
    assert!(passed);
}

#[test]
fn criterion_02_minimum_variance() {
    let (checks, elapsed) = timed(|| variance_checks(SEED).unwrap());
    let gap: Vec<_> = checks
        .into_iter()
        .filter(|c| c.name.starts_with("minimum variance"))
        .collect();
    let passed = gap.len() == 1 && gap[0].passed && elapsed < Duration::from_secs(5);
    report(2, passed, &format!("{:.2?} {}", elapsed, describe(&gap)));
    assert!(passed);
}

#[test]
fn criterion_03_covariance_identity() {
    let checks: Vec<_> = variance_checks(SEED)
        .unwrap()
        .into_iter()
        .filter(|c| c.name.starts_with("covariance identity"))
        .collect();
    let instances: usize = oracle_games(SEED)
        .unwrap()
        .iter()
        .map(|(g, _)| g.n_agents() * g.action_space().iter().count())
        .sum();
    let passed = checks.len() == 1 && checks[0].passed && instances >= 20;
    report(3, passed, &format!("{instances} instances {}", describe(&checks)));
    assert!(passed);
}

#[test]
fn criterion_04_jensen_equality() {
    let check = jensen(SEED).unwrap();
    report(4, check.passed, &describe(std::slice::from_ref(&check)));
    assert!(check.passed);
}

#[test]
fn criterion_05_gradient_correctness() {
    let checks = gradient_checks(SEED).unwrap();
    let passed = checks.len() >= 3 && checks.iter().all(|c| c.passed && c.tolerance == 1e-4);
    report(5, passed, &describe(&checks));
    assert!(passed);
}

#[test]
fn criterion_06_reduction_identities() {
    let checks = reductions(SEED).unwrap();
    let passed = checks.iter().all(|c| c.passed);
    report(6, passed, &describe(&checks));
    assert!(passed);
}

#[test]
fn criterion_07_learning_at_desk_scale() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("levels3.json");
    cfg.out_dir = dir.path().to_path_buf();
    cfg.variants = vec![Variant::Full, Variant::Jnt, Variant::Ind, Variant::Cor];
    cfg.seeds = vec![0, 1, 2, 3, 4];
    cfg.threads = 1;
    let env = cfg.env.build().unwrap();
    let optimum = optimal_return(&env, 1.0).unwrap();
    let (summary, elapsed) = timed(|| run_experiment(&cfg).unwrap());
    let all_ok = summary.runs.iter().all(|r| r.status == RunStatus::Ok);
    let within_budget = summary.runs.iter().all(|r| r.env_steps <= 200_000);
    let full = summary.finals(Variant::Full);
    let reached = full.iter().filter(|&&r| r >= 0.95 * optimum).count();
    let (best, best_finals) = [Variant::Jnt, Variant::Ind, Variant::Cor]
        .into_iter()
        .map(|v| (v, summary.finals(v)))
        .max_by(|a, b| mean(&a.1).total_cmp(&mean(&b.1)))
        .unwrap();
    let test = ttest(&full, &best_finals).unwrap();
    let not_worse = mean(&full) >= mean(&best_finals) || !test.significant;
    let fast = elapsed < Duration::from_secs(30 * 60);
    let passed = all_ok && within_budget && reached >= 4 && not_worse && fast;
    report(
        7,
        passed,
        &format!(
            "optimum {optimum:.3}, Full finals {full:?}, {reached}/5 seeds >= 95%, best ablation {best} mean {:.3} vs Full {:.3}, t = {:.3}, p = {:.3}, {:.1?}",
            mean(&best_finals),
            mean(&full),
            test.t,
            test.p,
            elapsed
        ),
    );
    assert!(passed);
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[test]
fn criterion_08_corrset_properties() {
    let checks = corrset_checks(SEED).unwrap();
    let sigma_ok = (1..=16).all(|n| default_sigma(n) == 1.0 / n as f64);
    let passed = sigma_ok && checks.iter().all(|c| c.passed);
    report(
        8,
        passed,
        &format!("default sigma = 1/n: {sigma_ok} {}", describe(&checks)),
    );
    assert!(passed);
}

#[test]
fn criterion_09_cmaes_sanity() {
    let sphere = cmaes_sphere(SEED).unwrap();
    let cfg = config("levels3.json");
    let env = cfg.env.build().unwrap();
    let mut worst = 0.0f64;
    let mut generations = 0;
    for seed in [0, 1] {
        let result = train(&env, cfg.run_config(Variant::Full, seed)).unwrap();
        worst = worst.max(result.max_psi_simplex_error);
        generations += result.cmaes_generations;
    }
    let passed = sphere.passed && generations > 0 && worst <= 1e-12;
    report(
        9,
        passed,
        &format!(
            "{} psi simplex error {worst:.3e} over {generations} generations",
            describe(&[sphere])
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_10_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = config("levels3.json");
    cfg.variants = vec![Variant::Full, Variant::Cor];
    cfg.seeds = vec![0, 1];
    cfg.train.total_steps = 4_000;
    cfg.threads = 1;
    cfg.emit_attention = true;
    cfg.out_dir = a.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    cfg.out_dir = b.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let has_all = ["runs.csv", "summary.csv"]
        .iter()
        .all(|f| sa.contains_key(Path::new(f)))
        && sa.keys().any(|p| p.starts_with("metrics"));
    let passed = has_all && sa == sb;
    report(10, passed, &format!("{} files compared", sa.len()));
    assert!(passed);
}
