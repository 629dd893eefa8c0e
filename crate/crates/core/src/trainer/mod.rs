//! On-policy actor-critic training with MACA advantages.
//!
//! One update round collects complete episodes, fits the critic by TD,
//! computes advantages and runs clipped policy-gradient epochs for every
//! agent simultaneously. For variants with learned mixing weights the rounds
//! are grouped into CMA-ES generations: each candidate coefficient head
//! drives `rounds_per_candidate` rounds and is scored by the change in
//! evaluation return it produced.

mod actor;
mod cmaes;

pub use actor::{actor_loss, Actor, FixedPolicy, JointPolicy, UniformPolicy};
pub use cmaes::{CmaesConfig, CoeffOptimState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{
    default_sigma, maca_advantage_encoded, stack_observations, AdvantageEstimate, AdvantageStats, CoeffHead, PsiSource,
    Variant,
};
use crate::critic::{one_hot_flat, Critic, CriticConfig};
use crate::envs::{reset, sample_categorical, step, DecPomdp, Timestep};
use crate::error::{MacaError, Result};
use crate::numerics::{Adam, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub ppo_epochs: usize,
    pub critic_epochs: usize,
    pub clip_param: f64,
    pub entropy_coef: f64,
    pub v_loss_coef: f64,
    pub q_loss_coef: f64,
    pub max_grad_norm: f64,
    /// Minimum environment steps per update round; episodes are never cut.
    pub rollout_length: usize,
    pub total_steps: u64,
    /// CorrSet threshold; `1/n` when absent.
    pub sigma: Option<f64>,
    pub variant: Variant,
    pub shared_psi: bool,
    pub normalize_advantages: bool,
    /// GAE on the joint value; only valid for the `Jnt` variant.
    pub use_gae: bool,
    pub gae_lambda: f64,
    pub actor_hidden: Vec<usize>,
    pub critic: CriticConfig,
    pub cmaes: CmaesConfig,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Evaluate with the most probable action instead of sampling.
    pub eval_greedy: bool,
    pub eval_seed: u64,
    /// Episodes per paired fitness evaluation of a CMA-ES candidate.
    pub fitness_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 0.99,
            actor_lr: 5e-4,
            critic_lr: 5e-4,
            ppo_epochs: 10,
            critic_epochs: 10,
            clip_param: 0.1,
            entropy_coef: 0.01,
            v_loss_coef: 1.0,
            q_loss_coef: 0.5,
            max_grad_norm: 10.0,
            rollout_length: 400,
            total_steps: 200_000,
            sigma: None,
            variant: Variant::Full,
            shared_psi: false,
            normalize_advantages: true,
            use_gae: false,
            gae_lambda: 0.95,
            actor_hidden: vec![64],
            critic: CriticConfig::default(),
            cmaes: CmaesConfig::default(),
            eval_interval: 2_000,
            eval_episodes: 32,
            eval_greedy: true,
            eval_seed: 12_345,
            fitness_episodes: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_param > 0.0) {
            return Err(MacaError::invalid("clip_param must be positive"));
        }
        if self.ppo_epochs == 0 || self.critic_epochs == 0 {
            return Err(MacaError::invalid("epoch counts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(MacaError::invalid("gamma and gae_lambda must lie in [0, 1]"));
        }
        if self.rollout_length == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(MacaError::invalid(
                "rollout length, eval interval and eval episodes must be positive",
            ));
        }
        if let Some(s) = self.sigma {
            if !(0.0..=1.0).contains(&s) {
                return Err(MacaError::invalid(format!("sigma {s} outside [0, 1]")));
            }
        }
        if self.use_gae && self.variant != Variant::Jnt {
            return Err(MacaError::invalid("GAE is only available for the Jnt variant"));
        }
        if self.variant.is_learned() && (self.cmaes.rounds_per_candidate == 0 || self.fitness_episodes == 0) {
            return Err(MacaError::invalid(
                "CMA-ES needs positive rounds per candidate and fitness episodes",
            ));
        }
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 || self.max_grad_norm <= 0.0 {
            return Err(MacaError::invalid("learning rates and gradient clip must be positive"));
        }
        Ok(())
    }
}

/// Complete episodes gathered by one collection call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub steps: Vec<Timestep>,
    pub episode_returns: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let dist: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
    sample_categorical(&dist, rng)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = k;
        }
    }
    best
}

fn check_rows(rows: &[Vec<f64>], sizes: &[usize]) -> Result<()> {
    if rows.len() != sizes.len() {
        return Err(MacaError::shape("one policy row per agent"));
    }
    for (agent, (r, &k)) in rows.iter().zip(sizes).enumerate() {
        let total: f64 = r.iter().sum();
        if r.len() != k || r.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(MacaError::invalid(format!(
                "agent {agent} produced an invalid categorical row"
            )));
        }
    }
    Ok(())
}

/// Runs whole episodes until at least `length` steps are stored. The rows
/// kept with each step are exactly the distributions actions were drawn from.
pub fn collect_rollouts<E, P, R>(env: &E, policy: &P, length: usize, rng: &mut R) -> Result<TrajectoryBatch>
where
    E: DecPomdp + ?Sized,
    P: JointPolicy + ?Sized,
    R: Rng + ?Sized,
{
    let mut batch = TrajectoryBatch::default();
    while batch.steps.len() < length {
        let (mut cur, mut obs) = reset(env, rng);
        let mut ret = 0.0;
        loop {
            let rows = policy.rows(&obs)?;
            check_rows(&rows, env.n_actions())?;
            let action: Vec<usize> = rows.iter().map(|r| sample_row(r, rng)).collect();
            let out = step(env, cur, &action, rng)?;
            ret += out.reward;
            batch.steps.push(Timestep {
                state: cur.state,
                observations: obs,
                joint_action: action,
                policy_rows: rows,
                reward: out.reward,
                done: out.done,
            });
            cur = out.next;
            obs = out.observations;
            if out.done {
                break;
            }
        }
        batch.episode_returns.push(ret);
    }
    Ok(batch)
}

/// Mean and population standard deviation of undiscounted episode returns.
pub fn evaluate<E, P, R>(env: &E, policy: &P, episodes: usize, greedy: bool, rng: &mut R) -> Result<(f64, f64)>
where
    E: DecPomdp + ?Sized,
    P: JointPolicy + ?Sized,
    R: Rng + ?Sized,
{
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (mut cur, mut obs) = reset(env, rng);
        let mut ret = 0.0;
        loop {
            let rows = policy.rows(&obs)?;
            check_rows(&rows, env.n_actions())?;
            let action: Vec<usize> = rows
                .iter()
                .map(|r| if greedy { argmax(r) } else { sample_row(r, rng) })
                .collect();
            let out = step(env, cur, &action, rng)?;
            ret += out.reward;
            cur = out.next;
            obs = out.observations;
            if out.done {
                break;
            }
        }
        returns.push(ret);
    }
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Critic inputs for a batch of contiguous episodes.
#[derive(Debug, Clone)]
pub struct CriticBatch {
    /// `(B·n) × obs_dim`.
    pub obs: Tensor<f64>,
    /// `B × Σ|A_i|` stored policy rows.
    pub policies: Tensor<f64>,
    /// `B × Σ|A_i|` one-hot taken actions.
    pub actions: Tensor<f64>,
    pub rewards: Vec<f64>,
    pub done: Vec<bool>,
}

impl CriticBatch {
    pub fn new(steps: &[Timestep], action_sizes: &[usize]) -> Result<Self> {
        if steps.is_empty() {
            return Err(MacaError::invalid("critic batch needs at least one step"));
        }
        if !steps.last().is_none_or(|s| s.done) {
            return Err(MacaError::invalid("critic batch must end on an episode boundary"));
        }
        let pol: Vec<Vec<f64>> = steps.iter().map(|s| s.policy_rows.concat()).collect();
        let act = steps
            .iter()
            .map(|s| one_hot_flat::<f64>(action_sizes, &s.joint_action))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            obs: stack_observations(steps)?,
            policies: Tensor::from_rows(&pol)?,
            actions: Tensor::from_rows(&act)?,
            rewards: steps.iter().map(|s| s.reward).collect(),
            done: steps.iter().map(|s| s.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Current `V(s_t) = Q(s_t, π_t)` and `Q(s_t, a_t)` for every step.
pub fn critic_values(critic: &Critic<f64>, batch: &CriticBatch) -> Result<(Vec<f64>, Vec<f64>)> {
    let enc = critic.encode_batch(&batch.obs)?;
    let mut v = Vec::with_capacity(batch.len());
    let mut q = Vec::with_capacity(batch.len());
    for t in 0..batch.len() {
        let z = enc.pooled_row(t);
        v.push(critic.q_value_flat(z, batch.policies.row(t))?);
        q.push(critic.q_value_flat(z, batch.actions.row(t))?);
    }
    Ok((v, q))
}

/// One-step bootstrapped targets; terminal steps use the reward alone.
pub fn td_targets(batch: &CriticBatch, v: &[f64], q: &[f64], gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let n = batch.len();
    let mut yv = Vec::with_capacity(n);
    let mut yq = Vec::with_capacity(n);
    for t in 0..n {
        let r = batch.rewards[t];
        if batch.done[t] || t + 1 >= n {
            yv.push(r);
            yq.push(r);
        } else {
            yv.push(r + gamma * v[t + 1]);
            yq.push(r + gamma * q[t + 1]);
        }
    }
    (yv, yq)
}

/// `c_V·mean((V − y_V)²) + c_Q·mean((Q − y_Q)²)` on the tape; targets are
/// constants so no gradient flows through them.
pub fn critic_loss(
    tape: &mut Tape<'_, f64>,
    critic: &Critic<f64>,
    batch: &CriticBatch,
    targets_v: &[f64],
    targets_q: &[f64],
    v_coef: f64,
    q_coef: f64,
) -> Result<(Var, Var, Var)> {
    let b = batch.len();
    if targets_v.len() != b || targets_q.len() != b {
        return Err(MacaError::shape("target length"));
    }
    let obs = tape.input(batch.obs.clone());
    let enc = critic.forward(tape, obs)?;
    let pol = tape.input(batch.policies.clone());
    let act = tape.input(batch.actions.clone());
    let v = critic.q_forward(tape, enc.pooled, pol)?;
    let q = critic.q_forward(tape, enc.pooled, act)?;
    let yv = tape.input(Tensor::matrix(b, 1, targets_v.to_vec())?);
    let yq = tape.input(Tensor::matrix(b, 1, targets_q.to_vec())?);
    let dv = tape.sub(v, yv)?;
    let dq = tape.sub(q, yq)?;
    let sv = tape.square(dv);
    let sq = tape.square(dq);
    let lv = tape.mean(sv);
    let lq = tape.mean(sq);
    let wv = tape.scale(lv, v_coef);
    let wq = tape.scale(lq, q_coef);
    let total = tape.add(wv, wq)?;
    Ok((total, lv, lq))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CriticLosses {
    pub loss_v: f64,
    pub loss_q: f64,
}

/// TD regression of the critic; targets are recomputed from the current
/// parameters before every epoch. Returns the losses of the first epoch.
pub fn critic_update(
    critic: &mut Critic<f64>,
    adam: &mut Adam<f64>,
    batch: &CriticBatch,
    config: &TrainConfig,
) -> Result<CriticLosses> {
    let mut first = None;
    for _ in 0..config.critic_epochs {
        let (v, q) = critic_values(critic, batch)?;
        let (yv, yq) = td_targets(batch, &v, &q, config.gamma);
        let grads;
        let losses;
        {
            let mut tape = Tape::new(&critic.store);
            let (total, lv, lq) = critic_loss(
                &mut tape,
                critic,
                batch,
                &yv,
                &yq,
                config.v_loss_coef,
                config.q_loss_coef,
            )?;
            losses = CriticLosses {
                loss_v: tape.value(lv).data()[0],
                loss_q: tape.value(lq).data()[0],
            };
            if !(losses.loss_v.is_finite() && losses.loss_q.is_finite()) {
                return Err(MacaError::NonFinite("critic loss".into()));
            }
            grads = tape.backward(total)?;
        }
        first.get_or_insert(losses);
        critic.store.zero_grads();
        grads.accumulate_into(&mut critic.store)?;
        critic.store.clip_grad_norm(config.max_grad_norm);
        adam.step(&mut critic.store);
    }
    Ok(first.unwrap_or_default())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ActorStats {
    /// Mean over agents of the first-epoch clipped surrogate loss.
    pub policy_loss: f64,
}

/// Zero-mean, unit-variance rescaling over every agent and timestep.
pub fn normalize_advantages(advantages: &mut [Vec<f64>]) {
    let all: Vec<f64> = advantages.iter().flatten().copied().collect();
    if all.is_empty() {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in advantages.iter_mut().flatten() {
        *a = (*a - mean) / std;
    }
}

/// Clipped policy-gradient epochs for all agents from the same batch.
/// `advantages[t][i]` belongs to agent `i` at step `t`.
pub fn actor_update(
    actors: &mut [Actor],
    steps: &[Timestep],
    advantages: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<ActorStats> {
    if advantages.len() != steps.len() || advantages.iter().any(|a| a.len() != actors.len()) {
        return Err(MacaError::shape("one advantage per agent per step"));
    }
    if advantages.iter().flatten().any(|a| !a.is_finite()) {
        return Err(MacaError::NonFinite("advantage".into()));
    }
    if steps.is_empty() {
        return Ok(ActorStats::default());
    }
    let mut adv = advantages.to_vec();
    if config.normalize_advantages {
        normalize_advantages(&mut adv);
    }
    let mut total_loss = 0.0;
    for (i, actor) in actors.iter_mut().enumerate() {
        let rows: Vec<Vec<f64>> = steps.iter().map(|s| s.observations[i].clone()).collect();
        let obs = Tensor::from_rows(&rows)?;
        let actions: Vec<usize> = steps.iter().map(|s| s.joint_action[i]).collect();
        let old: Vec<f64> = steps.iter().map(|s| s.policy_rows[i][s.joint_action[i]].ln()).collect();
        let a_i: Vec<f64> = adv.iter().map(|a| a[i]).collect();
        for epoch in 0..config.ppo_epochs {
            let grads;
            {
                let mut tape = Tape::new(&actor.store);
                let loss = actor_loss(
                    &mut tape,
                    actor,
                    &obs,
                    &actions,
                    &old,
                    &a_i,
                    config.clip_param,
                    config.entropy_coef,
                )?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(MacaError::NonFinite(format!("actor {i} loss")));
                }
                if epoch == 0 {
                    total_loss += value;
                }
                grads = tape.backward(loss)?;
            }
            actor.store.zero_grads();
            grads.accumulate_into(&mut actor.store)?;
            actor.store.clip_grad_norm(config.max_grad_norm);
            actor.adam.step(&mut actor.store);
        }
    }
    Ok(ActorStats {
        policy_loss: total_loss / actors.len() as f64,
    })
}

/// Generalized advantage estimate on the joint value, shared by all agents.
pub fn gae(rewards: &[f64], done: &[bool], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let terminal = done[t] || t + 1 >= n;
        let next = if terminal { 0.0 } else { values[t + 1] };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + if terminal { 0.0 } else { gamma * lambda * acc };
        out[t] = acc;
    }
    out
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub loss_v: f64,
    pub loss_q: f64,
    pub psi_mean: [f64; 3],
    pub corrset_mean_size: f64,
    pub policy_loss: f64,
    pub advantage_stats: AdvantageStats,
    pub cmaes_generation: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    pub metrics: Vec<MetricRecord>,
    pub final_return: f64,
    pub best_return: f64,
    pub env_steps: u64,
    /// Largest simplex violation of any ψ used for an update.
    pub max_psi_simplex_error: f64,
    pub cmaes_generations: u64,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct RoundDiagnostics {
    losses: CriticLosses,
    actor: ActorStats,
    psi_mean: [f64; 3],
    corrset_mean_size: f64,
    stats: AdvantageStats,
}

/// Training state for one run.
pub struct Trainer<'e, E: DecPomdp + ?Sized> {
    env: &'e E,
    pub config: TrainConfig,
    pub actors: Vec<Actor>,
    pub critic: Critic<f64>,
    critic_adam: Adam<f64>,
    pub head: CoeffHead,
    pub cmaes: Option<CoeffOptimState>,
    rng: ChaCha8Rng,
    env_steps: u64,
    next_eval: u64,
    sigma: f64,
    last: RoundDiagnostics,
    metrics: Vec<MetricRecord>,
    max_psi_error: f64,
}

impl<'e, E: DecPomdp + ?Sized> Trainer<'e, E> {
    pub fn new(env: &'e E, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = env.n_agents();
        let actors = env
            .n_actions()
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                Actor::new(
                    &format!("actor{i}"),
                    env.obs_dim(),
                    &config.actor_hidden,
                    k,
                    config.actor_lr,
                    &mut rng,
                )
            })
            .collect();
        let critic = Critic::new(
            config.critic.clone(),
            n,
            env.obs_dim(),
            env.n_actions().to_vec(),
            &mut rng,
        )?;
        let critic_adam = Adam::new(&critic.store, config.critic_lr);
        let head = CoeffHead::zeros(config.critic.z_dim, config.shared_psi);
        let cmaes = if config.variant.is_learned() {
            Some(CoeffOptimState::new(
                head.eta.clone(),
                config.cmaes.sigma0,
                config.cmaes.population,
            )?)
        } else {
            None
        };
        let sigma = config.sigma.unwrap_or_else(|| default_sigma(n));
        Ok(Self {
            env,
            actors,
            critic,
            critic_adam,
            head,
            cmaes,
            rng,
            env_steps: 0,
            next_eval: 0,
            sigma,
            last: RoundDiagnostics::default(),
            metrics: Vec::new(),
            max_psi_error: 0.0,
            config,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn metrics(&self) -> &[MetricRecord] {
        &self.metrics
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Advantage components for `steps` under the current critic and head.
    pub fn advantage_estimate(&self, steps: &[Timestep]) -> Result<AdvantageEstimate<f64>> {
        let enc = self.critic.encode_batch(&stack_observations(steps)?)?;
        let psi = PsiSource::Head {
            head: &self.head,
            variant: self.config.variant,
        };
        maca_advantage_encoded(steps, &enc, &self.critic, &psi, self.sigma)
    }

    /// collect → critic update → advantages → actor update.
    pub fn update_round(&mut self) -> Result<()> {
        let batch = collect_rollouts(self.env, &self.actors, self.config.rollout_length, &mut self.rng)?;
        self.env_steps += batch.len() as u64;
        let cb = CriticBatch::new(&batch.steps, self.env.n_actions())?;
        let losses =
            critic_update(&mut self.critic, &mut self.critic_adam, &cb, &self.config).map_err(|e| self.diverged(e))?;
        let est = self.advantage_estimate(&batch.steps)?;
        self.max_psi_error = self.max_psi_error.max(est.max_psi_simplex_error());
        let advantages: Vec<Vec<f64>> = if self.config.use_gae {
            let (v, _) = critic_values(&self.critic, &cb)?;
            let g = gae(&cb.rewards, &cb.done, &v, self.config.gamma, self.config.gae_lambda);
            g.into_iter().map(|a| vec![a; self.actors.len()]).collect()
        } else {
            est.rows
                .iter()
                .map(|r| r.iter().map(|x| x.advantage).collect())
                .collect()
        };
        let actor =
            actor_update(&mut self.actors, &batch.steps, &advantages, &self.config).map_err(|e| self.diverged(e))?;
        self.last = RoundDiagnostics {
            losses,
            actor,
            psi_mean: est.psi_mean(),
            corrset_mean_size: est.corrset_mean_size(),
            stats: est.stats(),
        };
        while self.env_steps >= self.next_eval {
            self.record_eval()?;
            self.next_eval += self.config.eval_interval;
        }
        Ok(())
    }

    fn diverged(&self, e: MacaError) -> MacaError {
        match e {
            MacaError::NonFinite(reason) => MacaError::Diverged {
                step: self.env_steps,
                reason,
            },
            other => other,
        }
    }

    fn record_eval(&mut self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.eval_seed);
        let (mean, std) = evaluate(
            self.env,
            &self.actors,
            self.config.eval_episodes,
            self.config.eval_greedy,
            &mut rng,
        )?;
        self.metrics.push(MetricRecord {
            step: self.env_steps,
            return_mean: mean,
            return_std: std,
            loss_v: self.last.losses.loss_v,
            loss_q: self.last.losses.loss_q,
            psi_mean: self.last.psi_mean,
            corrset_mean_size: self.last.corrset_mean_size,
            policy_loss: self.last.actor.policy_loss,
            advantage_stats: self.last.stats,
            cmaes_generation: self.cmaes.as_ref().map_or(0, |c| c.generation),
        });
        Ok(())
    }

    /// Stochastic return on the fixed fitness seed so before/after
    /// evaluations of a candidate are paired.
    fn fitness_return(&self) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.eval_seed ^ 0x9E37_79B9_7F4A_7C15);
        Ok(evaluate(self.env, &self.actors, self.config.fitness_episodes, false, &mut rng)?.0)
    }

    fn budget_left(&self) -> bool {
        self.env_steps < self.config.total_steps
    }

    /// One CMA-ES generation: every candidate head drives a fixed number of
    /// update rounds and is scored by `-(R_after - R_before)`. An incomplete
    /// generation (budget exhausted) is discarded.
    fn cmaes_generation(&mut self) -> Result<()> {
        let mut state = self.cmaes.take().expect("learned variant carries CMA-ES state");
        let candidates = state.ask(&mut self.rng);
        let mut fitness = Vec::with_capacity(candidates.len());
        let mut before = self.fitness_return()?;
        for cand in &candidates {
            self.head.set_eta(cand)?;
            for _ in 0..self.config.cmaes.rounds_per_candidate {
                if !self.budget_left() {
                    break;
                }
                if let Err(e) = self.update_round() {
                    self.cmaes = Some(state);
                    return Err(e);
                }
            }
            if !self.budget_left() && fitness.len() + 1 < candidates.len() {
                self.head.set_eta(state.mean.as_slice())?;
                self.cmaes = Some(state);
                return Ok(());
            }
            let after = self.fitness_return()?;
            fitness.push(-(after - before));
            before = after;
        }
        state.tell(&candidates, &fitness)?;
        self.head.set_eta(state.mean.as_slice())?;
        self.cmaes = Some(state);
        Ok(())
    }

    pub fn run(&mut self) -> Result<TrainResult> {
        if self.metrics.is_empty() {
            self.record_eval()?;
            self.next_eval = self.config.eval_interval;
        }
        while self.budget_left() {
            if self.cmaes.is_some() {
                self.cmaes_generation()?;
            } else {
                self.update_round()?;
            }
        }
        if self.metrics.last().is_none_or(|m| m.step != self.env_steps) {
            self.record_eval()?;
        }
        Ok(self.result())
    }

    pub fn result(&self) -> TrainResult {
        TrainResult {
            metrics: self.metrics.clone(),
            final_return: self.metrics.last().map_or(f64::NAN, |m| m.return_mean),
            best_return: self
                .metrics
                .iter()
                .map(|m| m.return_mean)
                .fold(f64::NEG_INFINITY, f64::max),
            env_steps: self.env_steps,
            max_psi_simplex_error: self.max_psi_error,
            cmaes_generations: self.cmaes.as_ref().map_or(0, |c| c.generation),
            eta: self.head.eta.clone(),
        }
    }

    /// Parameters and optimizer state for post-mortem inspection.
    pub fn state_dump(&self) -> serde_json::Value {
        serde_json::json!({
            "env_steps": self.env_steps,
            "config": self.config,
            "actors": self.actors.iter().map(|a| a.store.flat_values()).collect::<Vec<_>>(),
            "critic": self.critic.store.flat_values(),
            "eta": self.head.eta,
            "cmaes": self.cmaes,
        })
    }
}

/// Trains one run to completion.
pub fn train<E: DecPomdp + ?Sized>(env: &E, config: TrainConfig) -> Result<TrainResult> {
    Trainer::new(env, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{SubsetEntry, SubsetRewardTable, TabularGame};

    fn bandit() -> TabularGame {
        let table = SubsetRewardTable {
            entries: vec![SubsetEntry {
                state: None,
                agents: vec![0],
                actions: vec![0],
                reward: 1.0,
            }],
        };
        TabularGame::repeated(vec![2], table, 1, 0.99).unwrap()
    }

    #[test]
    fn zero_length_rollout_is_empty() {
        let env = bandit();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = collect_rollouts(&env, &UniformPolicy(vec![2]), 0, &mut rng).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn gamma_zero_targets_are_rewards() {
        let env = bandit();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut steps = collect_rollouts(&env, &UniformPolicy(vec![2]), 4, &mut rng)
            .unwrap()
            .steps;
        for s in steps.iter_mut() {
            s.done = false;
        }
        steps.last_mut().unwrap().done = true;
        let cb = CriticBatch::new(&steps, &[2]).unwrap();
        let (yv, yq) = td_targets(&cb, &[5.0; 4], &[7.0; 4], 0.0);
        assert_eq!(yv, cb.rewards);
        assert_eq!(yq, cb.rewards);
    }

    #[test]
    fn gae_with_unit_lambda_is_monte_carlo_minus_value() {
        let r = [1.0, 0.0, 2.0];
        let g = gae(&r, &[false, false, true], &[0.5, 0.25, 0.0], 1.0, 1.0);
        assert_eq!(g, vec![3.0 - 0.5, 2.0 - 0.25, 2.0]);
    }

    #[test]
    fn gae_requires_jnt() {
        let cfg = TrainConfig {
            use_gae: true,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
