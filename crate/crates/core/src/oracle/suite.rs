//! The verification suite behind the `verify` subcommand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{
    bellman_residual, check_covariance_identity, check_unbiasedness, estimator_variance, exact_baseline, exact_q,
    min_variance_baseline, TabularPolicy,
};
use crate::advantage::{corrset, k_level_baseline, maca_advantage, maca_baseline, BaselineWeights, PsiSource};
use crate::critic::{attention_rollout, marginalized_dist, one_hot_flat, Critic, CriticConfig};
use crate::envs::{random_dense_game, JointActionSpace, Timestep};
use crate::error::Result;
use crate::numerics::{grad_check, Tensor};
use crate::trainer::{actor_loss, critic_loss, Actor, CoeffOptimState, CriticBatch};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst observed residual (or, for lower-bound checks, the observed value).
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn at_most(name: &str, value: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        value,
        tolerance,
        passed: value <= tolerance,
    }
}

fn above(name: &str, value: f64, bound: f64) -> CheckResult {
    CheckResult {
        name: name.into(),
        value,
        tolerance: bound,
        passed: value > bound,
    }
}

/// One-step random games: ten with two agents and ten with three, at most
/// three actions each, with softmax policies over standard-normal logits.
pub fn oracle_games(seed: u64) -> Result<Vec<(crate::envs::TabularGame, TabularPolicy)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in 0..20 {
        let n = if k < 10 { 2 } else { 3 };
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
        let game = random_dense_game(actions.clone(), 1, 1, 0.99, rng.gen())?;
        let pi = TabularPolicy::random_softmax(&actions, 1, &mut rng)?;
        out.push((game, pi));
    }
    Ok(out)
}

fn random_subset_containing<R: Rng>(n: usize, agent: usize, rng: &mut R) -> Vec<usize> {
    let mut g: Vec<usize> = (0..n).filter(|&j| j == agent || rng.gen_bool(0.5)).collect();
    g.sort_unstable();
    g
}

fn random_simplex<R: Rng>(rng: &mut R) -> [f64; 3] {
    let e: Vec<f64> = (0..3).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
    let total: f64 = e.iter().sum();
    [e[0] / total, e[1] / total, e[2] / total]
}

pub fn unbiasedness(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let mut worst = [0.0f64; 4];
    let mut q_bias = 0.0f64;
    for (game, pi) in oracle_games(seed)? {
        let q = exact_q(&game, &pi)?;
        let n = game.n_agents;
        let cors: Vec<Vec<usize>> = (0..n).map(|i| random_subset_containing(n, i, &mut rng)).collect();
        let psi: Vec<[f64; 3]> = (0..n).map(|_| random_simplex(&mut rng)).collect();
        let all: Vec<usize> = (0..n).collect();
        let jnt = |t, s, a: &[usize], _i| exact_baseline(&q, &pi, t, s, a, &all);
        let ind = |t, s, a: &[usize], i| exact_baseline(&q, &pi, t, s, a, &[i]);
        let cor = |t, s, a: &[usize], i: usize| exact_baseline(&q, &pi, t, s, a, &cors[i]);
        let maca = |t, s, a: &[usize], i: usize| {
            let w = BaselineWeights(psi[i]);
            maca_baseline(jnt(t, s, a, i)?, ind(t, s, a, i)?, cor(t, s, a, i)?, &w)
        };
        let fns: [&super::BaselineFn<'_>; 4] = [&jnt, &ind, &cor, &maca];
        for (slot, f) in worst.iter_mut().zip(fns) {
            let norms = check_unbiasedness(&game, &pi, f)?;
            *slot = slot.max(norms.iter().copied().fold(0.0, f64::max));
        }
        let norms = check_unbiasedness(&game, &pi, &|t, s, a, _| Ok(q.value(t, s, a)))?;
        q_bias = q_bias.max(norms.iter().copied().fold(0.0, f64::max));
    }
    Ok(vec![
        at_most("unbiased: joint baseline", worst[0], 1e-8),
        at_most("unbiased: individual baseline", worst[1], 1e-8),
        at_most("unbiased: correlated-set baseline", worst[2], 1e-8),
        at_most("unbiased: mixed baseline", worst[3], 1e-8),
        above("biased: action-dependent control b = Q", q_bias, 1e-3),
    ])
}

pub fn variance_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x22);
    let mut gap = f64::NEG_INFINITY;
    let mut identity = 0.0f64;
    let mut bellman = 0.0f64;
    for (game, pi) in oracle_games(seed)? {
        let q = exact_q(&game, &pi)?;
        bellman = bellman.max(bellman_residual(&game, &pi, &q)?);
        let space = JointActionSpace::new(game.actions.clone());
        let n = game.n_agents;
        for joint in space.iter() {
            for i in 0..n {
                let g = random_subset_containing(n, i, &mut rng);
                identity = identity.max(check_covariance_identity(&q, &pi, 0, 0, &joint, &g, i)?);
                let b_star = min_variance_baseline(&q, &pi, 0, 0, &joint, &g, i)?;
                let var = |b: f64| estimator_variance(&q, &pi, 0, 0, &joint, &g, i, &|_| b);
                let v_star = var(b_star)?;
                let b_cf = exact_baseline(&q, &pi, 0, 0, &joint, &g)?;
                let mut others = vec![0.0, b_cf];
                others.extend((0..3).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0));
                for b in others {
                    gap = gap.max(v_star - var(b)?);
                }
            }
        }
    }
    Ok(vec![
        at_most("minimum variance: Var(b*) - Var(b)", gap, 1e-12),
        at_most("covariance identity residual", identity, 1e-10),
        at_most("exact Q Bellman residual", bellman, 1e-10),
    ])
}

fn random_critic(seed: u64, n: usize, obs_dim: usize, sizes: Vec<usize>) -> Result<Critic<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Critic::new(
        CriticConfig {
            width: 8,
            n_blocks: 2,
            z_dim: 5,
        },
        n,
        obs_dim,
        sizes,
        &mut rng,
    )
}

fn random_rows<R: Rng>(sizes: &[usize], rng: &mut R) -> Vec<Vec<f64>> {
    sizes
        .iter()
        .map(|&k| {
            let l: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            crate::numerics::softmax(&l).expect("finite logits")
        })
        .collect()
}

/// Averages one-hot Q evaluations over every `a_G` and compares with a single
/// evaluation at the marginalized distribution.
pub fn jensen(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x33);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = rng.gen_range(2..=4);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
        let critic = random_critic(seed.wrapping_add(trial), n, 3, sizes.clone())?;
        let z: Vec<f64> = (0..critic.config.z_dim).map(|_| rng.sample(StandardNormal)).collect();
        let pi = random_rows(&sizes, &mut rng);
        let taken: Vec<usize> = sizes.iter().map(|&k| rng.gen_range(0..k)).collect();
        let anchor = rng.gen_range(0..n);
        let g = random_subset_containing(n, anchor, &mut rng);
        let space = JointActionSpace::new(sizes.clone());
        let mut expect = 0.0;
        for sub in space.sub_actions(&g) {
            let mut a = taken.clone();
            let mut p = 1.0;
            for (&j, &x) in g.iter().zip(&sub) {
                a[j] = x;
                p *= pi[j][x];
            }
            expect += p * critic.q_value_flat(&z, &one_hot_flat(&sizes, &a)?)?;
        }
        let direct = critic.q_value(&z, &marginalized_dist(&pi, &taken, &g)?)?;
        worst = worst.max((expect - direct).abs());
    }
    Ok(at_most("linear head: E[Q(one-hot)] vs Q(marginalized)", worst, 1e-10))
}

fn random_steps<R: Rng>(n_steps: usize, n: usize, obs_dim: usize, sizes: &[usize], rng: &mut R) -> Vec<Timestep> {
    (0..n_steps)
        .map(|t| Timestep {
            state: 0,
            observations: (0..n)
                .map(|_| (0..obs_dim).map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
            joint_action: sizes.iter().map(|&k| rng.gen_range(0..k)).collect(),
            policy_rows: random_rows(sizes, rng),
            reward: rng.sample(StandardNormal),
            done: t + 1 == n_steps,
        })
        .collect()
}

pub fn gradient_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x44);
    let sizes = vec![2, 3, 2];
    let steps = random_steps(4, 3, 4, &sizes, &mut rng);
    let batch = CriticBatch::new(&steps, &sizes)?;
    let yv: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let yq: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let mut critic = random_critic(seed, 3, 4, sizes.clone())?;
    let shape = critic.clone();
    let enc = grad_check(
        &mut critic.store,
        |tape| {
            let x = tape.input(batch.obs.clone());
            let e = shape.forward(tape, x)?;
            let sq = tape.square(e.per_agent);
            Ok(tape.mean(sq))
        },
        1e-5,
        1e-4,
    )?;
    let heads = grad_check(
        &mut critic.store,
        |tape| Ok(critic_loss(tape, &shape, &batch, &yv, &yq, 1.0, 0.5)?.0),
        1e-5,
        1e-4,
    )?;
    let mut actor = Actor::new("actor", 4, &[6], 3, 1e-3, &mut rng);
    let obs = Tensor::from_rows(&steps.iter().map(|s| s.observations[1].clone()).collect::<Vec<_>>())?;
    let actions: Vec<usize> = steps.iter().map(|s| s.joint_action[1]).collect();
    // old probabilities away from the current ones so some ratios clip
    let old: Vec<f64> = (0..4).map(|k| (0.2 + 0.15 * k as f64).ln()).collect();
    let adv: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let net = actor.clone();
    let surrogate = grad_check(
        &mut actor.store,
        |tape| actor_loss(tape, &net, &obs, &actions, &old, &adv, 0.1, 0.01),
        1e-5,
        1e-4,
    )?;
    Ok(vec![
        at_most("gradient: encoder", enc.max_relative_error, 1e-4),
        at_most("gradient: value heads", heads.max_relative_error, 1e-4),
        at_most("gradient: actor surrogate", surrogate.max_relative_error, 1e-4),
    ])
}

pub fn reductions(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let (mut jnt, mut ind, mut ind_enum, mut cor_all, mut cor_self) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for trial in 0..20 {
        let n = rng.gen_range(2..=4);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
        let critic = random_critic(seed.wrapping_add(100 + trial), n, 3, sizes.clone())?;
        let steps = random_steps(3, n, 3, &sizes, &mut rng);
        let a_jnt = maca_advantage(
            &steps,
            &critic,
            &PsiSource::Fixed(BaselineWeights([1.0, 0.0, 0.0])),
            0.5,
        )?;
        let a_ind = maca_advantage(
            &steps,
            &critic,
            &PsiSource::Fixed(BaselineWeights([0.0, 1.0, 0.0])),
            0.5,
        )?;
        let everyone = maca_advantage(
            &steps,
            &critic,
            &PsiSource::Fixed(BaselineWeights([0.0, 0.0, 1.0])),
            0.0,
        )?;
        for (t, step) in steps.iter().enumerate() {
            let (emb, attn) = critic.encode(&step.observations)?;
            let z = &emb.pooled;
            let q = critic.q_taken(z, &step.joint_action)?;
            let v = critic.v_value(z, &step.policy_rows)?;
            let rollout = attention_rollout(&attn)?;
            for i in 0..n {
                jnt = jnt.max((a_jnt.rows[t][i].advantage - (q - v)).abs());
                let b_ind = k_level_baseline(&critic, z, &step.policy_rows, &step.joint_action, i, &[i])?;
                ind = ind.max((a_ind.rows[t][i].advantage - (q - b_ind)).abs());
                let mut enumerated = 0.0;
                for x in 0..sizes[i] {
                    let mut a = step.joint_action.clone();
                    a[i] = x;
                    enumerated += step.policy_rows[i][x] * critic.q_taken(z, &a)?;
                }
                ind_enum = ind_enum.max((b_ind - enumerated).abs());
                let r = &everyone.rows[t][i];
                cor_all = cor_all.max((r.b_cor - r.b_jnt).abs());
                let own = corrset(&rollout, i, 1.0)?;
                if own.members == vec![i] {
                    let b = k_level_baseline(&critic, z, &step.policy_rows, &step.joint_action, i, &own.members)?;
                    cor_self = cor_self.max((b - b_ind).abs());
                }
            }
        }
    }
    Ok(vec![
        at_most("reduction: psi = (1,0,0) equals Q - V", jnt, 0.0),
        at_most("reduction: psi = (0,1,0) equals Q - b_ind", ind, 0.0),
        at_most("reduction: b_ind equals enumerated counterfactual", ind_enum, 1e-12),
        at_most("reduction: C_i = N gives b_cor = b_jnt", cor_all, 0.0),
        at_most("reduction: C_i = {i} gives b_cor = b_ind", cor_self, 0.0),
    ])
}

pub fn corrset_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x66);
    let mut violations = 0usize;
    for _ in 0..200 {
        let n = rng.gen_range(2..=6);
        let layers: Vec<Tensor<f64>> = (0..rng.gen_range(1..=3))
            .map(|_| Tensor::from_rows(&random_rows(&vec![n; n], &mut rng)).expect("square"))
            .collect();
        let r = attention_rollout(&layers)?;
        let mut sigmas: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..=1.0)).collect();
        sigmas.push(1.0 / n as f64);
        sigmas.shuffle(&mut rng);
        sigmas.sort_by(f64::total_cmp);
        for i in 0..n {
            let sets: Vec<_> = sigmas.iter().map(|&s| corrset(&r, i, s)).collect::<Result<_>>()?;
            if sets.iter().any(|c| !c.contains(i)) {
                violations += 1;
            }
            for w in sets.windows(2) {
                if !w[1].members.iter().all(|j| w[0].contains(*j)) {
                    violations += 1;
                }
            }
        }
    }
    Ok(vec![at_most(
        "correlated sets: self-membership and monotone shrinkage",
        violations as f64,
        0.0,
    )])
}

pub fn cmaes_sphere(seed: u64) -> Result<CheckResult> {
    let mut state = CoeffOptimState::new(vec![1.0; 6], 0.5, 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        state.ask_tell(&mut rng, |x| Ok(x.iter().map(|v| v * v).sum()))?;
    }
    Ok(at_most(
        "CMA-ES: 6-D sphere mean norm after 200 generations",
        state.mean.norm(),
        1e-6,
    ))
}

/// Runs every exact check with `seed` controlling all random instances.
pub fn run_suite(seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    checks.extend(unbiasedness(seed)?);
    checks.extend(variance_checks(seed)?);
    checks.push(jensen(seed)?);
    checks.extend(gradient_checks(seed)?);
    checks.extend(reductions(seed)?);
    checks.extend(corrset_checks(seed)?);
    checks.push(cmaes_sphere(seed)?);
    Ok(VerifyReport { checks })
}
