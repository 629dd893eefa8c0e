use maca::envs::{
    enumerate, grid_capture_env, make_subset_game, random_dense_game, reset, step, DecPomdp, GridCaptureConfig,
    JointActionSpace, LevelSpec, RewardModel, SubsetGameConfig, TabularGame,
};
use maca::oracle::optimal_return;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn levels(spec: &[(usize, usize)]) -> Vec<LevelSpec> {
    spec.iter()
        .map(|&(level, count)| LevelSpec {
            level,
            count,
            reward_min: 0.0,
            reward_max: 1.0,
        })
        .collect()
}

#[test]
fn generated_reward_equals_table_summation() {
    for seed in 0..10 {
        let mut cfg = SubsetGameConfig::new(4, levels(&[(1, 3), (2, 2), (3, 1)]), seed);
        cfg.n_actions = 3;
        cfg.n_states = 2;
        let game = make_subset_game(&cfg).unwrap();
        let RewardModel::Subset(table) = &game.rewards else {
            panic!("subset game without a subset table");
        };
        for s in 0..game.n_states {
            for a in JointActionSpace::new(game.actions.clone()).iter() {
                let mut expected = 0.0;
                for e in &table.entries {
                    let state_ok = e.state.is_none_or(|es| es == s);
                    if state_ok && e.agents.iter().zip(&e.actions).all(|(&i, &x)| a[i] == x) {
                        expected += e.reward;
                    }
                }
                let got = game.reward(s, &a, 0).unwrap();
                assert!((got - expected).abs() < 1e-12, "state {s} action {a:?}");
            }
        }
    }
}

#[test]
fn step_reward_matches_table_on_rollout() {
    let game = make_subset_game(&SubsetGameConfig::new(3, levels(&[(1, 2), (2, 2)]), 7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (cur, _) = reset(&game, &mut rng);
    for a in JointActionSpace::new(game.actions.clone()).iter() {
        let out = step(&game, cur, &a, &mut rng).unwrap();
        assert_eq!(out.reward, game.reward(cur.state, &a, out.next.state).unwrap());
    }
}

#[test]
fn single_state_game_stays_put_and_ends_at_horizon() {
    let game = make_subset_game(&SubsetGameConfig {
        horizon: 3,
        ..SubsetGameConfig::new(2, levels(&[(1, 1)]), 0)
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut cur, _) = reset(&game, &mut rng);
    for t in 0..3 {
        let out = step(&game, cur, &[0, 1], &mut rng).unwrap();
        assert_eq!(out.next.state, cur.state);
        assert_eq!(out.done, t == 2);
        cur = out.next;
    }
}

#[test]
fn sampled_transitions_match_probabilities() {
    let game: TabularGame = random_dense_game(vec![2, 2], 3, 2, 0.99, 11).unwrap();
    let action = [1, 0];
    let probs = game.transition(0, &action).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (cur, _) = reset(&game, &mut rng);
    assert_eq!(cur.state, 0);
    let samples = 100_000;
    let mut counts = vec![0usize; game.n_states];
    for _ in 0..samples {
        counts[step(&game, cur, &action, &mut rng).unwrap().next.state] += 1;
    }
    for (s, p) in probs {
        let freq = counts[s] as f64 / samples as f64;
        let se = (p * (1.0 - p) / samples as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * se, "state {s}: {freq} vs {p}");
    }
}

#[test]
fn joint_action_counts() {
    let two_by_three = random_dense_game(vec![3, 3], 1, 1, 0.99, 0).unwrap();
    assert_eq!(enumerate(&two_by_three, 1000).unwrap().joint_actions().count(), 9);
    let three_by_two = random_dense_game(vec![2, 2, 2], 1, 1, 0.99, 0).unwrap();
    assert_eq!(enumerate(&three_by_two, 1000).unwrap().joint_actions().count(), 8);
    let sixteen = random_dense_game(vec![2, 2, 2, 2], 1, 1, 0.99, 0).unwrap();
    assert!(enumerate(&sixteen, 10).is_err());
}

fn fixed_grid(agents: Vec<(usize, usize)>, targets: Vec<(usize, usize)>, required: Vec<usize>) -> GridCaptureConfig {
    GridCaptureConfig {
        agent_positions: Some(agents.clone()),
        target_positions: Some(targets.clone()),
        required: Some(required),
        ..GridCaptureConfig::new(3, 3, agents.len(), targets.len(), 0)
    }
}

#[test]
fn adjacent_single_target_is_captured_in_one_step() {
    let env = grid_capture_env(fixed_grid(vec![(0, 0)], vec![(1, 0)], vec![1])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (cur, _) = reset(&env, &mut rng);
    let out = step(&env, cur, &[0], &mut rng).unwrap();
    assert_eq!(out.reward, 1.0);
    assert!(out.done);
    assert_eq!(optimal_return(&env, 1.0).unwrap(), 1.0);
}

#[test]
fn two_agent_target_needs_both() {
    let env = grid_capture_env(fixed_grid(vec![(1, 0), (2, 2)], vec![(1, 1)], vec![2])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (cur, _) = reset(&env, &mut rng);
    let out = step(&env, cur, &[0, 0], &mut rng).unwrap();
    assert_eq!(out.reward, 0.0);
    assert!(!out.done);
    // moving the second agent up to (2, 1) puts both next to the target
    let out = step(&env, cur, &[0, 1], &mut rng).unwrap();
    assert_eq!(out.reward, 1.0);
}

/// Exhaustive search over joint-action sequences of a deterministic game.
fn brute_force<E: DecPomdp>(env: &E, state: usize, t: usize, gamma: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for a in env.action_space().iter() {
        let dist = env.transition(state, &a).unwrap();
        assert_eq!(dist.len(), 1);
        let next = dist[0].0;
        let mut ret = env.reward(state, &a, next).unwrap();
        if t + 1 < env.horizon() && !env.is_terminal(next) {
            ret += gamma * brute_force(env, next, t + 1, gamma);
        }
        best = best.max(ret);
    }
    best
}

#[test]
fn grid_optimal_return_matches_exhaustive_search() {
    for seed in 0..3 {
        let cfg = GridCaptureConfig {
            horizon: 3,
            ..GridCaptureConfig::new(3, 3, 2, 2, seed)
        };
        let env = grid_capture_env(cfg).unwrap();
        let dp = optimal_return(&env, 0.99).unwrap();
        let bf = brute_force(&env, env.start_state(), 0, 0.99);
        assert!((dp - bf).abs() < 1e-12, "seed {seed}: {dp} vs {bf}");
    }
}
