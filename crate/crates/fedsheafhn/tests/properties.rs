//! Property tests over the engine's structural invariants.

use proptest::prelude::*;

use fedsheafhn::autodiff::gradcheck::{central_diff, max_rel_err};
use fedsheafhn::autodiff::{Tape, Tensor};
use fedsheafhn::client::ClientParams;
use fedsheafhn::graph::{greedy_edge_cut, sbm_generate};
use fedsheafhn::rng::stream;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Reverse-mode gradients of a small matmul/tanh/softmax chain agree
    /// with central differences for arbitrary finite inputs.
    #[test]
    fn tape_gradients_match_finite_differences(
        a in proptest::collection::vec(-2.0f64..2.0, 6),
        b in proptest::collection::vec(-2.0f64..2.0, 6),
        c in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        let run = |flat: &[f64]| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new();
            let av = tape.leaf(Tensor::new(vec![2, 3], flat[..6].to_vec()).unwrap());
            let bv = tape.leaf(Tensor::new(vec![3, 2], flat[6..12].to_vec()).unwrap());
            let cv = tape.constant(Tensor::new(vec![2, 2], flat[12..].to_vec()).unwrap());
            let prod = tape.matmul(av, bv).unwrap();
            let act = tape.tanh(prod).unwrap();
            let soft = tape.row_softmax(act).unwrap();
            let loss = tape.inner(soft, cv).unwrap();
            let value = tape.value(loss).data()[0];
            let grads = tape.backward(loss).unwrap();
            let mut flat_grad = grads.wrt(av).into_data();
            flat_grad.extend(grads.wrt(bv).into_data());
            (value, Some(flat_grad))
        };
        let mut point: Vec<f64> = a.clone();
        point.extend(&b);
        point.extend(&c);
        let (_, analytic) = run(&point);
        let analytic = analytic.unwrap();
        let numeric = central_diff(|p| {
            let mut q = p.to_vec();
            q.extend(&c);
            run(&q).0
        }, &point[..12], 1e-5);
        prop_assert!(max_rel_err(&analytic, &numeric) <= 1e-4);
    }

    /// Backbone and head packing round-trips exactly.
    #[test]
    fn client_params_pack_roundtrip(seed in 0u64..500, f in 1usize..6, h in 1usize..6, c in 2usize..5) {
        let mut rng = stream(seed, &[2001]);
        let params = ClientParams::init(f, h, c, &mut rng);
        let mut other = ClientParams::init(f, h, c, &mut rng);
        other.set_backbone(&params.pack_backbone()).unwrap();
        other.set_head(&params.pack_head()).unwrap();
        prop_assert_eq!(other.pack_all(), params.pack_all());
    }

    /// The greedy partitioner always yields a disjoint cover, for any seeded
    /// SBM and client count.
    #[test]
    fn partition_law_disjoint_cover(seed in 0u64..200, k in 1usize..5) {
        let g = sbm_generate(&[8, 8, 8], 0.5, 0.1, 3, seed).unwrap();
        let assignment = greedy_edge_cut(&g, k);
        prop_assert_eq!(assignment.len(), g.num_nodes);
        prop_assert!(assignment.iter().all(|&r| r < k));
        for r in 0..k {
            prop_assert!(assignment.contains(&r), "region {} empty", r);
        }
    }

    /// Row softmax output rows are simplex points whatever the input.
    #[test]
    fn row_softmax_rows_are_distributions(
        rows in proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 4), 1..5),
    ) {
        let t = Tensor::from_rows(&rows).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(t);
        let s = tape.row_softmax(v).unwrap();
        let out = tape.value(s);
        for i in 0..rows.len() {
            let row = out.row(i);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
