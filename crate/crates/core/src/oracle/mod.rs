//! Exact enumeration on small tabular games: action values, counterfactual
//! baselines, bias of baseline-corrected gradients, the minimum-variance
//! baseline and estimator variances.
//!
//! Policies are stationary tables `π_i(· | s)` parameterized by per-state
//! softmax logits, so `∇_{θ_i(s)} log π_i(a_i | s) = e_{a_i} − π_i(· | s)`.

pub mod suite;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::critic::validate_subset;
use crate::envs::{enumerate, DecPomdp, JointActionSpace, DEFAULT_ENUMERATION_CAP};
use crate::error::{MacaError, Result};
use crate::numerics::softmax;

/// `rows[s][i]` is agent `i`'s action distribution in state `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabularPolicy {
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl TabularPolicy {
    pub fn from_logits(logits: &[Vec<Vec<f64>>]) -> Result<Self> {
        let rows = logits
            .iter()
            .map(|per_state| per_state.iter().map(|l| softmax(l)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    /// Same rows in every state.
    pub fn stationary(n_states: usize, rows: Vec<Vec<f64>>) -> Self {
        Self {
            rows: vec![rows; n_states],
        }
    }

    /// Softmax over standard-normal logits.
    pub fn random_softmax<R: Rng + ?Sized>(actions: &[usize], n_states: usize, rng: &mut R) -> Result<Self> {
        let logits: Vec<Vec<Vec<f64>>> = (0..n_states)
            .map(|_| {
                actions
                    .iter()
                    .map(|&k| (0..k).map(|_| rng.sample(StandardNormal)).collect())
                    .collect()
            })
            .collect();
        Self::from_logits(&logits)
    }

    pub fn row(&self, s: usize, agent: usize) -> &[f64] {
        &self.rows[s][agent]
    }

    pub fn prob(&self, s: usize, joint: &[usize]) -> f64 {
        joint.iter().enumerate().map(|(i, &a)| self.rows[s][i][a]).product()
    }

    /// Probability of the actions of `subset` (in subset order).
    pub fn subset_prob(&self, s: usize, subset: &[usize], sub_action: &[usize]) -> f64 {
        subset
            .iter()
            .zip(sub_action)
            .map(|(&i, &a)| self.rows[s][i][a])
            .product()
    }

    pub fn check_strictly_positive(&self) -> Result<()> {
        for (s, per_state) in self.rows.iter().enumerate() {
            for (i, row) in per_state.iter().enumerate() {
                if row.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                    return Err(MacaError::DegeneratePolicy(format!(
                        "agent {i} has a zero-probability action in state {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_shape<E: DecPomdp + ?Sized>(&self, env: &E) -> Result<()> {
        if self.rows.len() != env.n_states()
            || self
                .rows
                .iter()
                .any(|per| per.len() != env.n_agents() || per.iter().zip(env.n_actions()).any(|(r, &k)| r.len() != k))
        {
            return Err(MacaError::shape("policy table does not match the environment"));
        }
        Ok(())
    }
}

/// `q[t][s][joint]` and `v[t][s]` for a finite horizon.
#[derive(Debug, Clone, Serialize)]
pub struct ExactQTable {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
    pub horizon: usize,
    pub gamma: f64,
    #[serde(skip)]
    pub space: JointActionSpace,
}

impl ExactQTable {
    pub fn value(&self, t: usize, s: usize, joint: &[usize]) -> f64 {
        self.q[t][s][self.space.encode(joint)]
    }

    pub fn state_value(&self, t: usize, s: usize) -> f64 {
        self.v[t][s]
    }
}

/// Whether an episode continues into `next` reached at time `t + 1`.
fn continues<E: DecPomdp + ?Sized>(env: &E, t: usize, next: usize) -> bool {
    t + 1 < env.horizon() && !env.is_terminal(next)
}

/// Finite-horizon action values of `policy` by backward induction.
pub fn exact_q<E: DecPomdp + ?Sized>(env: &E, policy: &TabularPolicy) -> Result<ExactQTable> {
    let en = enumerate(env, DEFAULT_ENUMERATION_CAP)?;
    policy.check_shape(env)?;
    let (h, ns, gamma) = (env.horizon(), env.n_states(), env.gamma());
    let joints: Vec<Vec<usize>> = en.joint_actions().collect();
    let mut q = vec![vec![vec![0.0; joints.len()]; ns]; h];
    let mut v = vec![vec![0.0; ns]; h + 1];
    for t in (0..h).rev() {
        for s in 0..ns {
            let mut vs = 0.0;
            for (j, a) in joints.iter().enumerate() {
                let mut acc = 0.0;
                for (next, p) in env.transition(s, a)? {
                    let cont = if continues(env, t, next) {
                        gamma * v[t + 1][next]
                    } else {
                        0.0
                    };
                    acc += p * (env.reward(s, a, next)? + cont);
                }
                q[t][s][j] = acc;
                vs += policy.prob(s, a) * acc;
            }
            v[t][s] = vs;
        }
    }
    v.truncate(h);
    Ok(ExactQTable {
        q,
        v,
        horizon: h,
        gamma,
        space: en.actions,
    })
}

/// Largest violation of `Q_t(s,a) = E[r + γ V_{t+1}(s')]` and
/// `V_t(s) = Σ_a π(a|s) Q_t(s,a)`.
pub fn bellman_residual<E: DecPomdp + ?Sized>(env: &E, policy: &TabularPolicy, table: &ExactQTable) -> Result<f64> {
    let mut worst = 0.0f64;
    for t in 0..table.horizon {
        for s in 0..env.n_states() {
            let mut vs = 0.0;
            for a in table.space.iter() {
                let mut target = 0.0;
                for (next, p) in env.transition(s, &a)? {
                    let cont = if continues(env, t, next) {
                        table.gamma * table.v[t + 1][next]
                    } else {
                        0.0
                    };
                    target += p * (env.reward(s, &a, next)? + cont);
                }
                worst = worst.max((table.value(t, s, &a) - target).abs());
                vs += policy.prob(s, &a) * table.value(t, s, &a);
            }
            worst = worst.max((vs - table.v[t][s]).abs());
        }
    }
    Ok(worst)
}

/// `weights[t][s]`: probability of being at `s` at time `t` with the episode
/// still running, normalized over all `(t, s)`.
#[derive(Debug, Clone, Serialize)]
pub struct StateDistribution {
    pub weights: Vec<Vec<f64>>,
}

pub fn state_distribution<E: DecPomdp + ?Sized>(env: &E, policy: &TabularPolicy) -> Result<StateDistribution> {
    policy.check_shape(env)?;
    let (h, ns) = (env.horizon(), env.n_states());
    let space = env.action_space();
    let mut alive = vec![vec![0.0; ns]; h];
    for (s, p) in env.initial_distribution() {
        alive[0][s] += p;
    }
    for t in 0..h.saturating_sub(1) {
        for s in 0..ns {
            let w = alive[t][s];
            if w == 0.0 {
                continue;
            }
            for a in space.iter() {
                let pa = policy.prob(s, &a);
                for (next, p) in env.transition(s, &a)? {
                    if continues(env, t, next) {
                        alive[t + 1][next] += w * pa * p;
                    }
                }
            }
        }
    }
    let total: f64 = alive.iter().flatten().sum();
    if total <= 0.0 {
        return Err(MacaError::invalid("no reachable state"));
    }
    for w in alive.iter_mut().flatten() {
        *w /= total;
    }
    Ok(StateDistribution { weights: alive })
}

/// Joint action with the entries of `subset` replaced by `sub_action`.
fn splice(joint: &[usize], subset: &[usize], sub_action: &[usize]) -> Vec<usize> {
    let mut a = joint.to_vec();
    for (&i, &x) in subset.iter().zip(sub_action) {
        a[i] = x;
    }
    a
}

/// `Σ_{a_G} Π_{j∈G} π_j(a_j|s) · Q_t(s, a_G ∪ a_{−G})`.
pub fn exact_baseline(
    table: &ExactQTable,
    policy: &TabularPolicy,
    t: usize,
    s: usize,
    joint: &[usize],
    subset: &[usize],
) -> Result<f64> {
    let subset = validate_subset(subset, joint.len())?;
    let mut acc = 0.0;
    for sub in table.space.sub_actions(&subset) {
        acc += policy.subset_prob(s, &subset, &sub) * table.value(t, s, &splice(joint, &subset, &sub));
    }
    Ok(acc)
}

/// `e_{a} − π_i(·|s)`.
pub fn log_policy_grad(policy: &TabularPolicy, s: usize, agent: usize, action: usize) -> Vec<f64> {
    let row = policy.row(s, agent);
    row.iter()
        .enumerate()
        .map(|(k, &p)| if k == action { 1.0 - p } else { -p })
        .collect()
}

/// Per-agent baseline as a function of `(t, s, joint action, agent)`.
pub type BaselineFn<'a> = dyn Fn(usize, usize, &[usize], usize) -> Result<f64> + 'a;

/// Per agent, `‖E_{(t,s)∼d^π, a∼π}[b_i · ∇_{θ_i} log π_i(a_i|s)]‖` over all of
/// agent `i`'s logits.
pub fn check_unbiasedness<E: DecPomdp + ?Sized>(
    env: &E,
    policy: &TabularPolicy,
    baseline: &BaselineFn<'_>,
) -> Result<Vec<f64>> {
    policy.check_strictly_positive()?;
    let d = state_distribution(env, policy)?;
    let space = env.action_space();
    let n = env.n_agents();
    let mut sums: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| vec![vec![0.0; env.n_actions()[i]]; env.n_states()])
        .collect();
    for (t, per_t) in d.weights.iter().enumerate() {
        for (s, &w) in per_t.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for a in space.iter() {
                let pa = w * policy.prob(s, &a);
                for (i, acc) in sums.iter_mut().enumerate() {
                    let b = baseline(t, s, &a, i)?;
                    for (x, g) in acc[s].iter_mut().zip(log_policy_grad(policy, s, i, a[i])) {
                        *x += pa * b * g;
                    }
                }
            }
        }
    }
    Ok(sums
        .iter()
        .map(|per| per.iter().flatten().map(|x| x * x).sum::<f64>().sqrt())
        .collect())
}

/// One outcome of `a_G` with the rest of the joint action held fixed.
#[derive(Debug, Clone)]
struct Outcome {
    prob: f64,
    q: f64,
    grad: Vec<f64>,
    joint: Vec<usize>,
}

fn outcomes(
    table: &ExactQTable,
    policy: &TabularPolicy,
    t: usize,
    s: usize,
    joint: &[usize],
    subset: &[usize],
    agent: usize,
) -> Result<Vec<Outcome>> {
    policy.check_strictly_positive()?;
    let subset = validate_subset(subset, joint.len())?;
    if subset.binary_search(&agent).is_err() {
        return Err(MacaError::invalid(format!("agent {agent} must belong to {subset:?}")));
    }
    table
        .space
        .sub_actions(&subset)
        .into_iter()
        .map(|sub| {
            let a = splice(joint, &subset, &sub);
            Ok(Outcome {
                prob: policy.subset_prob(s, &subset, &sub),
                q: table.value(t, s, &a),
                grad: log_policy_grad(policy, s, agent, a[agent]),
                joint: a,
            })
        })
        .collect()
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `b* = E[Q ‖∇log π_i‖²] / E[‖∇log π_i‖²]` over `a_G`, conditioned on `a_{−G}`.
pub fn min_variance_baseline(
    table: &ExactQTable,
    policy: &TabularPolicy,
    t: usize,
    s: usize,
    joint: &[usize],
    subset: &[usize],
    agent: usize,
) -> Result<f64> {
    let out = outcomes(table, policy, t, s, joint, subset, agent)?;
    let den: f64 = out.iter().map(|o| o.prob * sq(&o.grad)).sum();
    if den <= 0.0 {
        return Err(MacaError::DegeneratePolicy("all log-policy gradients vanish".into()));
    }
    Ok(out.iter().map(|o| o.prob * o.q * sq(&o.grad)).sum::<f64>() / den)
}

/// `|b_CF − (b* − Cov(Q, ‖∇‖²) / E[‖∇‖²])|` with every term enumerated.
pub fn check_covariance_identity(
    table: &ExactQTable,
    policy: &TabularPolicy,
    t: usize,
    s: usize,
    joint: &[usize],
    subset: &[usize],
    agent: usize,
) -> Result<f64> {
    let out = outcomes(table, policy, t, s, joint, subset, agent)?;
    let e_q: f64 = out.iter().map(|o| o.prob * o.q).sum();
    let e_g: f64 = out.iter().map(|o| o.prob * sq(&o.grad)).sum();
    let cov: f64 = out.iter().map(|o| o.prob * (o.q - e_q) * (sq(&o.grad) - e_g)).sum();
    let b_star = min_variance_baseline(table, policy, t, s, joint, subset, agent)?;
    let b_cf = exact_baseline(table, policy, t, s, joint, subset)?;
    Ok((b_cf - (b_star - cov / e_g)).abs())
}

/// Total variance (trace of the covariance) over `a_G` of
/// `(Q − b) · ∇_{θ_i} log π_i`, conditioned on `a_{−G}`; `b` may depend on
/// the full joint action.
#[allow(clippy::too_many_arguments)]
pub fn estimator_variance(
    table: &ExactQTable,
    policy: &TabularPolicy,
    t: usize,
    s: usize,
    joint: &[usize],
    subset: &[usize],
    agent: usize,
    baseline: &dyn Fn(&[usize]) -> f64,
) -> Result<f64> {
    let out = outcomes(table, policy, t, s, joint, subset, agent)?;
    let k = out[0].grad.len();
    let mut mean = vec![0.0; k];
    let mut second = 0.0;
    for o in &out {
        let c = o.q - baseline(&o.joint);
        for (m, g) in mean.iter_mut().zip(&o.grad) {
            *m += o.prob * c * g;
        }
        second += o.prob * c * c * sq(&o.grad);
    }
    Ok((second - sq(&mean)).max(0.0))
}

/// Optimal expected return from the initial distribution, maximizing over
/// joint actions at every `(t, s)`; with `gamma = 1` the return is undiscounted.
pub fn optimal_return<E: DecPomdp + ?Sized>(env: &E, gamma: f64) -> Result<f64> {
    let en = enumerate(env, DEFAULT_ENUMERATION_CAP)?;
    let (h, ns) = (env.horizon(), env.n_states());
    let joints: Vec<Vec<usize>> = en.joint_actions().collect();
    let mut next_v = vec![0.0; ns];
    for t in (0..h).rev() {
        let mut v = vec![f64::NEG_INFINITY; ns];
        for (s, slot) in v.iter_mut().enumerate() {
            for a in &joints {
                let mut acc = 0.0;
                for (next, p) in env.transition(s, a)? {
                    let cont = if continues(env, t, next) {
                        gamma * next_v[next]
                    } else {
                        0.0
                    };
                    acc += p * (env.reward(s, a, next)? + cont);
                }
                *slot = slot.max(acc);
            }
        }
        next_v = v;
    }
    Ok(env.initial_distribution().iter().map(|&(s, p)| p * next_v[s]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{random_dense_game, RewardModel, TabularGame, Transitions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(actions: Vec<usize>, table: Vec<f64>) -> TabularGame {
        TabularGame {
            n_agents: actions.len(),
            actions,
            n_states: 1,
            horizon: 1,
            gamma: 0.99,
            initial: vec![1.0],
            transitions: Transitions::Cycle,
            rewards: RewardModel::Dense { table },
        }
    }

    #[test]
    fn one_step_q_is_immediate_reward() {
        let env = dense(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let pi = TabularPolicy::stationary(1, vec![vec![0.5, 0.5], vec![0.3, 0.7]]);
        let q = exact_q(&env, &pi).unwrap();
        assert_eq!(q.q[0][0], vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn handbuilt_weighted_sum() {
        let env = dense(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let pi = TabularPolicy::stationary(1, vec![vec![0.5, 0.5], vec![0.3, 0.7]]);
        let q = exact_q(&env, &pi).unwrap();
        // marginalize agent 0 with agent 1 fixed at action 1: 0.5·2 + 0.5·4
        assert!((exact_baseline(&q, &pi, 0, 0, &[0, 1], &[0]).unwrap() - 3.0).abs() < 1e-15);
        // marginalize agent 1 with agent 0 fixed at action 1: 0.3·3 + 0.7·4
        assert!((exact_baseline(&q, &pi, 0, 0, &[1, 0], &[1]).unwrap() - 3.7).abs() < 1e-15);
        let v = 0.5 * (0.3 * 1.0 + 0.7 * 2.0) + 0.5 * (0.3 * 3.0 + 0.7 * 4.0);
        assert!((exact_baseline(&q, &pi, 0, 0, &[0, 0], &[0, 1]).unwrap() - v).abs() < 1e-15);
        assert!((q.state_value(0, 0) - v).abs() < 1e-15);
    }

    #[test]
    fn zero_baseline_has_no_bias() {
        let env = random_dense_game(vec![2, 3], 1, 1, 0.99, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pi = TabularPolicy::random_softmax(&[2, 3], 1, &mut rng).unwrap();
        let norms = check_unbiasedness(&env, &pi, &|_, _, _, _| Ok(0.0)).unwrap();
        assert!(norms.iter().all(|&x| x <= 1e-12));
    }

    #[test]
    fn degenerate_policy_is_rejected() {
        let env = dense(vec![2], vec![1.0, 0.0]);
        let pi = TabularPolicy::stationary(1, vec![vec![1.0, 0.0]]);
        assert!(matches!(
            check_unbiasedness(&env, &pi, &|_, _, _, _| Ok(0.0)),
            Err(MacaError::DegeneratePolicy(_))
        ));
    }

    #[test]
    fn constant_q_gives_constant_min_variance_baseline() {
        let env = dense(vec![3, 2], vec![2.5; 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pi = TabularPolicy::random_softmax(&[3, 2], 1, &mut rng).unwrap();
        let q = exact_q(&env, &pi).unwrap();
        let b = min_variance_baseline(&q, &pi, 0, 0, &[0, 0], &[0, 1], 0).unwrap();
        assert!((b - 2.5).abs() < 1e-12);
        assert!(check_covariance_identity(&q, &pi, 0, 0, &[0, 0], &[0, 1], 0).unwrap() <= 1e-12);
    }

    #[test]
    fn uniform_two_action_policy_has_constant_gradient_norm() {
        // with two equiprobable actions ‖e_a − π‖² = 0.5 for both actions
        let env = random_dense_game(vec![2, 2], 1, 1, 0.99, 9).unwrap();
        let pi = TabularPolicy::stationary(1, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let q = exact_q(&env, &pi).unwrap();
        let b_star = min_variance_baseline(&q, &pi, 0, 0, &[1, 0], &[0], 0).unwrap();
        let b_cf = exact_baseline(&q, &pi, 0, 0, &[1, 0], &[0]).unwrap();
        assert!((b_star - b_cf).abs() < 1e-12);
    }

    #[test]
    fn baseline_equal_to_q_removes_variance() {
        let env = random_dense_game(vec![2, 2], 1, 1, 0.99, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pi = TabularPolicy::random_softmax(&[2, 2], 1, &mut rng).unwrap();
        let q = exact_q(&env, &pi).unwrap();
        let var = estimator_variance(&q, &pi, 0, 0, &[0, 0], &[0, 1], 0, &|a| q.value(0, 0, a)).unwrap();
        assert!(var <= 1e-15);
    }

    #[test]
    fn agent_outside_subset_is_rejected() {
        let env = random_dense_game(vec![2, 2], 1, 1, 0.99, 2).unwrap();
        let pi = TabularPolicy::stationary(1, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let q = exact_q(&env, &pi).unwrap();
        assert!(min_variance_baseline(&q, &pi, 0, 0, &[0, 0], &[1], 0).is_err());
    }

    #[test]
    fn enumeration_cap_propagates() {
        let env = dense(vec![2], vec![0.0, 0.0]);
        assert!(enumerate(&env, 1).is_err());
    }
}
