use maca::critic::{attention_rollout, marginalized_dist, one_hot_flat, Critic, CriticConfig};
use maca::envs::JointActionSpace;
use maca::numerics::{softmax, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn critic(seed: u64, sizes: Vec<usize>) -> Critic<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CriticConfig {
        width: 8,
        n_blocks: 2,
        z_dim: 6,
    };
    Critic::new(cfg, sizes.len(), 5, sizes, &mut rng).unwrap()
}

fn normal_vec(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_policy(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Vec<Vec<f64>> {
    sizes.iter().map(|&k| softmax(&normal_vec(rng, k)).unwrap()).collect()
}

fn stochastic(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| softmax(&normal_vec(rng, n)).unwrap()).collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn permuted_observations_permute_embeddings_and_attention() {
    let c = critic(0, vec![2, 2, 3, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let obs: Vec<Vec<f64>> = (0..4).map(|_| normal_vec(&mut rng, 5)).collect();
    let perm = [3, 1, 0, 2];
    let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| obs[p].clone()).collect();
    let (e, a) = c.encode(&obs).unwrap();
    let (ep, ap) = c.encode(&permuted).unwrap();
    for (i, &pi) in perm.iter().enumerate() {
        for (x, y) in ep.per_agent.row(i).iter().zip(e.per_agent.row(pi)) {
            assert!((x - y).abs() < 1e-12);
        }
        for (layer, layer_p) in a.iter().zip(&ap) {
            for (j, &pj) in perm.iter().enumerate() {
                assert!((layer_p.get(i, j) - layer.get(pi, pj)).abs() < 1e-12);
            }
        }
    }
    for (x, y) in ep.pooled.iter().zip(&e.pooled) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn rollout_of_two_layers_matches_direct_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 2..6 {
        let (a1, a2) = (stochastic(&mut rng, n), stochastic(&mut rng, n));
        let mix = |a: &Tensor<f64>| {
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    m[i][j] = 0.5 * a.get(i, j) + if i == j { 0.5 } else { 0.0 };
                }
            }
            m
        };
        let (m1, m2) = (mix(&a1), mix(&a2));
        let r = attention_rollout(&[a1, a2]).unwrap();
        for i in 0..n {
            for j in 0..n {
                let direct: f64 = (0..n).map(|k| m2[i][k] * m1[k][j]).sum();
                assert!((r.weight(i, j) - direct).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn expected_one_hot_q_equals_q_of_marginalized_policy() {
    let sizes = vec![3, 2, 2];
    let c = critic(3, sizes.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let space = JointActionSpace::new(sizes.clone());
    for _ in 0..20 {
        let z = normal_vec(&mut rng, 6);
        let pi = random_policy(&mut rng, &sizes);
        let taken: Vec<usize> = sizes.iter().map(|&k| rng.gen_range(0..k)).collect();
        for g in [vec![0], vec![1, 2], vec![0, 1, 2]] {
            let mut expect = 0.0;
            for a in space.iter() {
                if (0..3).any(|j| !g.contains(&j) && a[j] != taken[j]) {
                    continue;
                }
                let p: f64 = g.iter().map(|&j| pi[j][a[j]]).product();
                expect += p * c.q_value_flat(&z, &one_hot_flat(&sizes, &a).unwrap()).unwrap();
            }
            let direct = c.q_value(&z, &marginalized_dist(&pi, &taken, &g).unwrap()).unwrap();
            assert!((expect - direct).abs() <= 1e-10);
        }
    }
}

#[test]
fn value_is_q_of_full_marginalization_and_enumeration_average() {
    let sizes = vec![2, 3];
    let c = critic(5, sizes.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = normal_vec(&mut rng, 6);
    let pi = random_policy(&mut rng, &sizes);
    let v = c.v_value(&z, &pi).unwrap();
    let full = c
        .q_value(&z, &marginalized_dist(&pi, &[0, 0], &[0, 1]).unwrap())
        .unwrap();
    assert_eq!(v, full);
    let avg: f64 = JointActionSpace::new(sizes.clone())
        .iter()
        .map(|a| pi[0][a[0]] * pi[1][a[1]] * c.q_taken(&z, &a).unwrap())
        .sum();
    assert!((v - avg).abs() < 1e-12);
}

proptest! {
    #[test]
    fn q_head_is_affine_in_the_distribution(seed in 0u64..1000, w in 0.0f64..=1.0) {
        let sizes = vec![2, 3];
        let c = critic(seed % 7, sizes.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = normal_vec(&mut rng, 6);
        let p: Vec<f64> = random_policy(&mut rng, &sizes).concat();
        let q: Vec<f64> = random_policy(&mut rng, &sizes).concat();
        let mixed: Vec<f64> = p.iter().zip(&q).map(|(a, b)| w * a + (1.0 - w) * b).collect();
        let lhs = c.q_value_flat(&z, &mixed).unwrap();
        let rhs = w * c.q_value_flat(&z, &p).unwrap() + (1.0 - w) * c.q_value_flat(&z, &q).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }
}
