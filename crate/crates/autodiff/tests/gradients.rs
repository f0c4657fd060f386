use dipa_autodiff::gradcheck::{check_gradients, op_cases};
use dipa_autodiff::{Graph, ParamStore, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..50 {
        for case in op_cases(seed) {
            let rep = check_gradients(&case.inputs, case.expr.as_ref(), 1e-5).unwrap();
            assert!(
                rep.max_rel_error < 1e-4,
                "{} seed {seed}: rel err {:.3e} at input {} index {}",
                case.name,
                rep.max_rel_error,
                rep.worst_input,
                rep.worst_index
            );
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// tanh MLP with three affine layers; inputs are x, W1, b1, W2, b2, W3, b3.
fn three_layer(g: &mut Graph, v: &[Var]) -> dipa_autodiff::Result<Var> {
    let h1 = g.linear(v[0], v[1], v[2])?;
    let h1 = g.tanh(h1);
    let h2 = g.linear(h1, v[3], v[4])?;
    let h2 = g.softplus(h2);
    let out = g.linear(h2, v[5], v[6])?;
    let sq = g.square(out);
    Ok(g.mean_all(sq))
}

#[test]
fn three_layer_network_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            rand_tensor(&mut rng, &[4, 3], 1.0),
            rand_tensor(&mut rng, &[3, 6], 0.6),
            rand_tensor(&mut rng, &[6], 0.3),
            rand_tensor(&mut rng, &[6, 5], 0.4),
            rand_tensor(&mut rng, &[5], 0.3),
            rand_tensor(&mut rng, &[5, 2], 0.4),
            rand_tensor(&mut rng, &[2], 0.3),
        ];
        let rep = check_gradients(&inputs, &three_layer, 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-4, "seed {seed}: {rep:?}");
    }
}

#[test]
fn parameter_nodes_collect_gradients() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::vector(vec![3.0]));
    let mut g = Graph::with_params(&store);
    let x = g.param(w);
    let again = g.param(w);
    assert_eq!(x, again);
    let y = g.square(x);
    let root = g.sum_all(y);
    let grads = g.backward(root).unwrap();
    let mut acc = store.zeros_like();
    grads.accumulate_params(&mut acc);
    assert_eq!(acc[0].data(), &[6.0]);
}

#[test]
fn identical_inputs_give_bit_identical_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs: Vec<Tensor> = [[4usize, 3], [3, 6]]
            .iter()
            .map(|s| rand_tensor(&mut rng, s, 1.0))
            .collect();
        let mut g = Graph::new();
        let v: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let h = g.matmul(v[0], v[1]).unwrap();
        let h = g.tanh(h);
        let l = g.logsumexp(h, 1).unwrap();
        let root = g.sum_all(l);
        let grads = g.backward(root).unwrap();
        (0..2)
            .flat_map(|i| {
                grads
                    .get(v[i])
                    .unwrap()
                    .data()
                    .iter()
                    .map(|x| x.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_lie_on_simplex(vals in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3, 4], vals).unwrap());
        let y = g.softmax(x, 1).unwrap();
        for row in g.value(y).data().chunks(4) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_max_equals_filtered_max(vals in prop::collection::vec(-10.0f64..10.0, 6), mask in prop::collection::vec(any::<bool>(), 6)) {
        prop_assume!(mask.iter().any(|&m| m));
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vals.clone()));
        let y = g.masked_max(x, 0, &mask).unwrap();
        let want = vals.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(g.value(y).item(), want);
    }
}
