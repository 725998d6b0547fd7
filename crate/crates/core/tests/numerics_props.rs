//! Algebraic properties of the tensor kernels and optimiser.

mod support;

use proptest::prelude::*;
use sspb_core::ops::{self, Padding};
use sspb_core::rng::rng_from;
use sspb_core::{AdamConfig, AdamState, Graph, ParamSet, Tensor};

fn shape4() -> impl Strategy<Value = [usize; 4]> {
    (1usize..3, 2usize..7, 2usize..7, 1usize..4).prop_map(|(n, h, w, c)| [n, h, w, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_its_input(s in shape4(), f in 1usize..4, a in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let x = support::rand_tensor(&mut rng, &s);
        let k = support::rand_tensor(&mut rng, &[3, 3, s[3], f]);
        let zero = Tensor::zeros(vec![f]);
        let ax = x.map(|v| v * a);
        let lhs = ops::conv2d(&ax, &k, &zero, 1, Padding::Same).unwrap();
        let rhs = ops::conv2d(&x, &k, &zero, 1, Padding::Same).unwrap().map(|v| v * a);
        for (p, q) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn pooling_ignores_nearest_upsampling(s in shape4(), k in 1usize..4, seed in any::<u64>()) {
        let x = support::rand_tensor(&mut rng_from(seed), &s);
        let up = ops::upsample_nearest(&x, k).unwrap();
        prop_assert_eq!(up.shape(), &[s[0], s[1] * k, s[2] * k, s[3]][..]);
        let a = ops::global_avg_pool(&up).unwrap();
        let b = ops::global_avg_pool(&x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn mse_is_zero_only_on_equality(n in 1usize..50, seed in any::<u64>(), bump in prop::option::of(0usize..50)) {
        let x = support::rand_tensor(&mut rng_from(seed), &[n]);
        prop_assert_eq!(ops::mse_loss(&x, &x).unwrap(), 0.0);
        if let Some(i) = bump {
            let mut y = x.clone();
            y.data_mut()[i % n] += 0.5;
            prop_assert!(ops::mse_loss(&x, &y).unwrap() > 0.0);
        }
    }

    #[test]
    fn adam_with_zero_gradient_never_moves(steps in 1usize..20, seed in any::<u64>()) {
        let mut params: ParamSet = ParamSet::new();
        params.insert("w", support::rand_tensor(&mut rng_from(seed), &[3, 2]).cast());
        let before = params.clone();
        let mut grads = ParamSet::new();
        grads.insert("w", Tensor::zeros(vec![3, 2]));
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..steps {
            adam.step(&mut params, &grads).unwrap();
        }
        prop_assert_eq!(params, before);
        prop_assert_eq!(adam.step_count(), steps as u64);
    }

    #[test]
    fn inference_dropout_is_bitwise_identity(n in 1usize..100, rate in 0.0f64..0.95, seed in any::<u64>()) {
        let x = support::rand_tensor(&mut rng_from(seed), &[n]).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let v = g.constant(x.clone());
        let y = g.dropout(v, rate, false, &mut rng_from(seed)).unwrap();
        prop_assert_eq!(g.value(y), &x);
        prop_assert_eq!(ops::dropout(&x, rate, false, &mut rng_from(seed)).unwrap(), x);
    }
}
