use posecue_tensor::{fold_blocks, unfold_blocks, Graph, Tensor, Var};
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_is_linear_in_the_objective(
        x in prop::collection::vec(-2.0f64..2.0, 6),
        w1 in prop::collection::vec(-1.0f64..1.0, 6),
        w2 in prop::collection::vec(-1.0f64..1.0, 6),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let w1 = tensor(&[2, 3], w1);
        let w2 = tensor(&[2, 3], w2);
        fn f<'g>(v: Var<'g, f64>, w: &Tensor<f64>) -> Var<'g, f64> {
            v.sigmoid().mul_const(w).unwrap().sum()
        }
        fn gfun<'g>(v: Var<'g, f64>, w: &Tensor<f64>) -> Var<'g, f64> {
            v.square().exp().mul_const(w).unwrap().softmax(1).unwrap().max_axis(1).unwrap().sum()
        }

        let grad = |which: u8| {
            let g = Graph::new();
            let v = g.param(tensor(&[2, 3], x.clone()));
            let out = match which {
                0 => f(v, &w1),
                1 => gfun(v, &w2),
                _ => f(v, &w1).mul_scalar(a).add(gfun(v, &w2).mul_scalar(b)).unwrap(),
            };
            g.backward(out).unwrap().wrt(v).unwrap().clone()
        };
        let (gf, gg, gc) = (grad(0), grad(1), grad(2));
        for k in 0..6 {
            let expect = a * gf.data()[k] + b * gg.data()[k];
            prop_assert!((gc.data()[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn unfold_and_fold_are_adjoint(
        c in 1usize..4, h in 1usize..6, w in 1usize..6, half in 0usize..3, seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let d = 2 * half + 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::from_fn(&[c, h, w], |_| rng.random_range(-1.0..1.0));
        let y = Tensor::<f32>::from_fn(&[h, w, c, d * d], |_| rng.random_range(-1.0..1.0));
        let ux = unfold_blocks(&x, d).unwrap();
        let fy = fold_blocks(&y, d).unwrap();
        let lhs: f64 = ux.data().iter().zip(y.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.data().iter().zip(fy.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        prop_assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
    }

    #[test]
    fn tnsr_round_trip(shape in prop::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::<f32>::from_fn(&shape, |_| rng.random());
        let back = Tensor::<f32>::read_tnsr(&t.to_tnsr_bytes()[..]).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-50.0f64..50.0, 12)) {
        let g = Graph::<f64>::new();
        let s = g.constant(tensor(&[3, 4], data)).softmax(1).unwrap().value();
        for r in 0..3 {
            let total: f64 = s.data()[4 * r..4 * r + 4].iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
