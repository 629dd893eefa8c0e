//! Attention-rollout and correlated-set dumps.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::advantage::corrset;
use crate::critic::{attention_rollout, AttentionRollout, Critic};
use crate::envs::{reset, step, DecPomdp};
use crate::error::{MacaError, Result};
use crate::trainer::JointPolicy;

/// CSV with one block of `n` rows per state: `state,row,a_0..a_{n-1},corrset`
/// for rolled-out attention matrices, where `corrset` lists the members of
/// `C_row` separated by spaces.
pub fn attention_csv(rollouts: &[AttentionRollout<f64>], sigma: f64) -> Result<String> {
    let mut out = String::new();
    let n = rollouts.first().map_or(0, |a| a.n());
    out.push_str("state,row");
    for j in 0..n {
        let _ = write!(out, ",a{j}");
    }
    out.push_str(",corrset\n");
    for (s, r) in rollouts.iter().enumerate() {
        if r.n() != n {
            return Err(MacaError::shape(format!(
                "state {s} has {} agents, expected {n}",
                r.n()
            )));
        }
        for i in 0..n {
            let _ = write!(out, "{s},{i}");
            for j in 0..n {
                let _ = write!(out, ",{}", r.weight(i, j));
            }
            let c = corrset(r, i, sigma)?;
            let members: Vec<String> = c.members.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(out, ",{}", members.join(" "));
        }
    }
    Ok(out)
}

/// Observations of every state visited by one greedy episode.
pub fn greedy_episode<E, P>(env: &E, policy: &P, seed: u64) -> Result<Vec<Vec<Vec<f64>>>>
where
    E: DecPomdp + ?Sized,
    P: JointPolicy + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cur, mut obs) = reset(env, &mut rng);
    let mut visited = Vec::new();
    loop {
        let rows = policy.rows(&obs)?;
        let action: Vec<usize> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc },
                    )
                    .0
            })
            .collect();
        visited.push(std::mem::take(&mut obs));
        let out = step(env, cur, &action, &mut rng)?;
        cur = out.next;
        obs = out.observations;
        if out.done {
            return Ok(visited);
        }
    }
}

/// Writes the attention dump for the states of one greedy episode.
pub fn emit_attention<E, P>(env: &E, policy: &P, critic: &Critic<f64>, sigma: f64, seed: u64, path: &Path) -> Result<()>
where
    E: DecPomdp + ?Sized,
    P: JointPolicy + ?Sized,
{
    let states = greedy_episode(env, policy, seed)?
        .iter()
        .map(|obs| critic.encode(obs).and_then(|(_, attn)| attention_rollout(&attn)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, attention_csv(&states, sigma)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn parse(csv: &str) -> Vec<Vec<String>> {
        csv.lines()
            .skip(1)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn two_agents_give_stochastic_rows() {
        let a = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let csv = attention_csv(&[attention_rollout(&[a]).unwrap()], 0.5).unwrap();
        let rows = parse(&csv);
        assert_eq!(rows.len(), 2);
        for r in rows {
            let s: f64 = r[2..4].iter().map(|x| x.parse::<f64>().unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_attention_keeps_everyone() {
        let n = 4;
        let u = Tensor::from_rows(&vec![vec![0.25; n]; n]).unwrap();
        let r = AttentionRollout { matrix: u };
        let csv = attention_csv(&[r.clone(), r], 1.0 / n as f64).unwrap();
        for r in parse(&csv) {
            assert_eq!(r.last().unwrap(), "0 1 2 3");
        }
    }
}
