use numcore::gradcheck::{check_gradients, GradCheckOptions};
use numcore::nn::{attention, causal_mask, key_padding_mask};
use numcore::{Graph, ParamStore, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.5..1.5))
}

/// Max relative error of `build` over parameters of the given shapes. The
/// loss is a random projection of the output so no coordinate is trivial.
fn max_error<F>(seed: u64, shapes: &[Vec<usize>], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    for (i, s) in shapes.iter().enumerate() {
        store.insert(format!("p{i}"), random_tensor(&mut rng, s)).unwrap();
    }
    let proj_seed: u64 = rng.gen();
    let report = check_gradients(
        &mut store,
        |store| {
            let mut g = Graph::new(true, 99);
            let vars: Vec<Var> = store.iter().map(|(id, _, _)| id).collect::<Vec<_>>().into_iter().map(|id| g.param(store, id)).collect();
            let y = build(&mut g, &vars)?;
            let shape = g.shape(y).to_vec();
            let mut prng = ChaCha8Rng::seed_from_u64(proj_seed);
            let r = g.constant(random_tensor(&mut prng, &shape));
            let weighted = g.mul(y, r)?;
            let loss = g.sum(weighted);
            Ok((g, loss))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    report.max_relative_error
}

fn dims(max: usize) -> impl Strategy<Value = usize> {
    1..=max
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn add_broadcast(seed in any::<u64>(), a in dims(3), b in dims(4)) {
        let e = max_error(seed, &[vec![a, b], vec![b]], |g, v| g.add(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
        let e = max_error(seed, &[vec![a, b], vec![a, 1]], |g, v| g.add(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn mul_broadcast(seed in any::<u64>(), a in dims(3), b in dims(4)) {
        let e = max_error(seed, &[vec![a, b], vec![a, b]], |g, v| g.mul(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
        let e = max_error(seed, &[vec![2, a, b], vec![2, 1, b]], |g, v| g.mul(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
        let e = max_error(seed, &[vec![a, b]], |g, v| Ok(g.mul(v[0], v[0])?));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn scale_and_sum(seed in any::<u64>(), a in dims(4)) {
        let e = max_error(seed, &[vec![a, 3]], |g, v| { let s = g.scale(v[0], -0.7); Ok(g.sum(s)) });
        prop_assert!(e < TOL, "{e}");
        let e = max_error(seed, &[vec![a, 3]], |g, v| Ok(g.mean(v[0])));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn matmul_shared_and_batched(seed in any::<u64>(), m in dims(4), k in dims(4), n in dims(4), b in dims(3)) {
        let e = max_error(seed, &[vec![b, m, k], vec![k, n]], |g, v| g.matmul(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
        let e = max_error(seed, &[vec![b, m, k], vec![b, k, n]], |g, v| g.matmul(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn permute_reshape_transpose(seed in any::<u64>(), a in dims(3), b in dims(3), c in dims(3)) {
        let e = max_error(seed, &[vec![a, b, c]], |g, v| g.permute(v[0], &[2, 0, 1]));
        prop_assert!(e < TOL, "{e}");
        let e = max_error(seed, &[vec![a, b, c]], |g, v| g.transpose_last(v[0]));
        prop_assert!(e < TOL, "{e}");
        let e = max_error(seed, &[vec![a, b, c]], |g, v| g.reshape(v[0], &[a * b, c]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn relu(seed in any::<u64>(), a in dims(4), b in dims(4)) {
        let e = max_error(seed, &[vec![a, b]], |g, v| Ok(g.relu(v[0])));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn softmax(seed in any::<u64>(), a in dims(4), b in dims(5)) {
        let e = max_error(seed, &[vec![a, b]], |g, v| Ok(g.softmax(v[0])));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn layer_norm(seed in any::<u64>(), a in dims(4), d in 2usize..=6) {
        let e = max_error(seed, &[vec![a, d], vec![d], vec![d]], |g, v| g.layer_norm(v[0], v[1], v[2]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn conv1d(seed in any::<u64>(), b in dims(2), t in 1usize..=7, cin in dims(3), cout in dims(3), stride in 1usize..=2) {
        let e = max_error(seed, &[vec![b, t, cin], vec![3, cin, cout], vec![cout]], |g, v| g.conv1d(v[0], v[1], v[2], stride, 1));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn embedding(seed in any::<u64>(), vocab in 2usize..=6, d in dims(4), n in dims(5)) {
        let ids: Vec<usize> = (0..n).map(|i| (seed as usize + i * 7) % vocab).collect();
        let e = max_error(seed, &[vec![vocab, d]], |g, v| g.embedding(v[0], &ids, &[n]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn dropout(seed in any::<u64>(), a in dims(4), b in dims(4)) {
        let e = max_error(seed, &[vec![a, b]], |g, v| Ok(g.dropout(v[0], 0.3)));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn smoothed_nll(seed in any::<u64>(), n in dims(4), vocab in 2usize..=6, eps in 0.0f64..0.3) {
        let targets: Vec<usize> = (0..n).map(|i| (seed as usize / 3 + i * 5) % vocab).collect();
        let ignore = if vocab > 2 && targets.iter().any(|&t| t != 0) { Some(0) } else { None };
        let e = max_error(seed, &[vec![n, vocab]], |g, v| Ok(g.smoothed_nll(v[0], &targets, ignore, eps)?.0));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn masked_attention(seed in any::<u64>(), b in dims(2), tq in dims(3), tk in dims(3), causal in any::<bool>()) {
        let heads = 2;
        let d = 4;
        let tk = if causal { tq } else { tk };
        let lengths: Vec<usize> = (0..b).map(|i| 1 + (seed as usize + i) % tk).collect();
        let e = max_error(seed, &[vec![b, tq, d], vec![b, tk, d], vec![b, tk, d]], |g, v| {
            let mask = if causal { causal_mask(tq) } else { key_padding_mask(&lengths, tk) };
            let m = g.constant(mask);
            attention(g, v[0], v[1], v[2], heads, Some(m))
        });
        prop_assert!(e < TOL, "{e}");
    }
}

#[test]
fn matmul_layernorm_softmax_chain() {
    for seed in 0..10 {
        let e = max_error(seed, &[vec![4, 4], vec![4, 4], vec![4], vec![4]], |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let n = g.layer_norm(h, v[2], v[3])?;
            Ok(g.softmax(n))
        });
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::<f32>::new(false, 0);
    let x = g.constant(Tensor::from_fn(&[16, 33], |_| rng.gen_range(-30.0..30.0)));
    let y = g.softmax(x);
    for row in g.value(y).data().chunks(33) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 64;
    let mut g = Graph::<f32>::new(false, 0);
    let x = g.constant(Tensor::from_fn(&[8, d], |_| rng.gen_range(-5.0..9.0)));
    let gain = g.constant(Tensor::full(&[d], 1.0));
    let bias = g.constant(Tensor::zeros(&[d]));
    let y = g.layer_norm(x, gain, bias).unwrap();
    for row in g.value(y).data().chunks(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
}

#[test]
fn smoothed_nll_reference_values() {
    let v = 10;
    // Uniform logits: every class has NLL log V.
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.constant(Tensor::zeros(&[3, v]));
    for eps in [0.0, 0.1, 0.5] {
        let (loss, count) = g.smoothed_nll(x, &[1, 4, 0], Some(0), eps).unwrap();
        assert_eq!(count, 2);
        assert!((g.value(loss).item() - (v as f64).ln()).abs() < 1e-12);
    }

    // One-hot-correct logits at +20 / -20, eps 0.1, no ignored class.
    let target = 3;
    let logits = Tensor::from_fn(&[1, v], |j| if j == target { 20.0 } else { -20.0 });
    let lse = (20f64.exp() + 9.0 * (-20f64).exp()).ln();
    let nll_t = lse - 20.0;
    let nll_o = lse + 20.0;
    let expect = 0.9 * nll_t + 0.1 * (nll_t + 9.0 * nll_o) / 10.0;
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.constant(logits);
    let (loss, _) = g.smoothed_nll(x, &[target], None, 0.1).unwrap();
    assert!((g.value(loss).item() - expect).abs() < 1e-5);

    // eps = 0 is plain token-averaged cross-entropy.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = Tensor::from_fn(&[4, v], |_| rng.gen_range(-2.0..2.0));
    let targets = [2usize, 7, 7, 0];
    let ce: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            let row = &logits.data()[r * v..(r + 1) * v];
            row.iter().map(|x: &f64| x.exp()).sum::<f64>().ln() - row[t]
        })
        .sum::<f64>()
        / 4.0;
    let mut g = Graph::<f64>::new(false, 0);
    let x = g.constant(logits);
    let (loss, _) = g.smoothed_nll(x, &targets, None, 0.0).unwrap();
    assert!((g.value(loss).item() - ce).abs() < 1e-12);

    let (ok, _) = (g.smoothed_nll(x, &[0, 0, 0, 0], Some(0), 0.1).is_err(), ());
    assert!(ok, "all-pad targets must be rejected");
}
