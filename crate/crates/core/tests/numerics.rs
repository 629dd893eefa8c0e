use maca::numerics::{
    grad_check, self_attention_forward, softmax, EncoderBlock, ParamStore, SelfAttention, Tape, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

#[test]
fn softmax_matches_ratio_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let l: Vec<f64> = (0..5).map(|_| 4.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let p = softmax(&l).unwrap();
        for k in 0..5 {
            // p_k = 1 / Σ_j exp(l_j − l_k), never forming the normalizer directly
            let reference = 1.0 / l.iter().map(|&lj| (lj - l[k]).exp()).sum::<f64>();
            assert!((p[k] - reference).abs() <= 1e-15, "{} vs {}", p[k], reference);
        }
    }
}

#[test]
fn single_token_attends_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let layer = SelfAttention::new(&mut store, "attn", 4, &mut rng);
    let (_, a) = self_attention_forward(&store, &layer, &random_matrix(&mut rng, 1, 4)).unwrap();
    assert_eq!(a.data(), &[1.0]);
}

#[test]
fn zero_query_key_weights_give_uniform_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let layer = SelfAttention::new(&mut store, "attn", 4, &mut rng);
    for id in [layer.query.weight, layer.key.weight] {
        store.value_mut(id).data_mut().fill(0.0);
    }
    let (_, a) = self_attention_forward(&store, &layer, &random_matrix(&mut rng, 5, 4)).unwrap();
    for &x in a.data() {
        assert!((x - 0.2).abs() < 1e-15);
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let layer = SelfAttention::new(&mut store, "attn", 6, &mut rng);
    let x = random_matrix(&mut rng, 4, 6);
    let perm = [2, 0, 3, 1];
    let xp = Tensor::from_rows(&perm.iter().map(|&r| x.row(r).to_vec()).collect::<Vec<_>>()).unwrap();
    let (y, a) = self_attention_forward(&store, &layer, &x).unwrap();
    let (yp, ap) = self_attention_forward(&store, &layer, &xp).unwrap();
    for (i, &pi) in perm.iter().enumerate() {
        for c in 0..6 {
            assert!((yp.get(i, c) - y.get(pi, c)).abs() < 1e-12);
        }
        for (j, &pj) in perm.iter().enumerate() {
            assert!((ap.get(i, j) - a.get(pi, pj)).abs() < 1e-12);
        }
    }
}

#[test]
fn encoder_block_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let block = EncoderBlock::new(&mut store, "enc", 6, &mut rng);
    let x = random_matrix(&mut rng, 8, 6);
    let report = grad_check(
        &mut store,
        |tape: &mut Tape<'_, f64>| {
            let xv = tape.input(x.clone());
            let (y, _) = block.forward(tape, xv, 4)?;
            let sq = tape.square(y);
            Ok(tape.mean(sq))
        },
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "max relative error {}", report.max_relative_error);
}
