use proptest::prelude::*;

use stochgradadam::analysis::{entropy, histogram_of, pca_project};
use stochgradadam::data::{batches, gen_blobs};
use stochgradadam::nn::{Activation, MlpModel};
use stochgradadam::optim::{
    adam_step, rmsprop_step, sgd_momentum_step, stochgradadam_step, BetaSchedule, HyperParams, LrSchedule,
    OptimizerState,
};
use stochgradadam::sampling::{apply_mask, gen_mask, RngStream};
use stochgradadam::tensor::Tensor;
use stochgradadam::theory::{check_lemma43, random_gradient_trace, TraceSpec};

fn tensor(rng: &mut RngStream, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

fn schedules() -> impl Strategy<Value = (BetaSchedule, LrSchedule)> {
    (
        prop_oneof![
            Just(BetaSchedule::Constant),
            Just(BetaSchedule::Power),
            Just(BetaSchedule::Exponential)
        ],
        prop_oneof![Just(LrSchedule::Constant), Just(LrSchedule::InvSqrt)],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_matches_triple_loop(seed in any::<u64>(), r in 1usize..48, k in 1usize..48, c in 1usize..48) {
        let mut rng = RngStream::new(seed);
        let a = tensor(&mut rng, &[r, k], 2.0);
        let b = tensor(&mut rng, &[k, c], 2.0);
        let prod = a.matmul(&b).unwrap();
        for i in 0..r {
            for j in 0..c {
                let mut naive = 0.0;
                for x in 0..k {
                    naive += a.at(i, x) * b.at(x, j);
                }
                let got = prod.at(i, j);
                prop_assert!((got - naive).abs() <= 1e-12 * naive.abs().max(1.0));
            }
        }
    }

    #[test]
    fn squared_l2_norm_is_sum_of_squares(seed in any::<u64>(), n in 1usize..200) {
        let mut rng = RngStream::new(seed);
        let x = tensor(&mut rng, &[n], 5.0);
        let sq = x.mul(&x).unwrap().reduce_sum(0).unwrap().as_slice()[0];
        prop_assert!((x.l2_norm().powi(2) - sq).abs() <= 1e-12 * sq.max(1.0));
        let doubled = x.add(&x).unwrap();
        prop_assert_eq!(doubled.shape(), x.shape());
    }

    #[test]
    fn equal_seeds_give_equal_masks(seed in any::<u64>(), n in 1usize..500, s in 0.0f64..=1.0) {
        let (mut a, mut b) = (RngStream::new(seed), RngStream::new(seed));
        for _ in 0..3 {
            prop_assert_eq!(gen_mask(&mut a, &[n], s).unwrap(), gen_mask(&mut b, &[n], s).unwrap());
        }
    }

    #[test]
    fn masking_never_grows_anything(seed in any::<u64>(), n in 1usize..300, s in 0.0f64..=1.0) {
        let mut rng = RngStream::new(seed);
        let g = tensor(&mut rng, &[n], 10.0);
        let phi = apply_mask(&gen_mask(&mut rng, &[n], s).unwrap(), &g).unwrap();
        for (p, q) in phi.as_slice().iter().zip(g.as_slice()) {
            prop_assert!(p.abs() <= q.abs());
        }
        prop_assert!(phi.l2_norm() <= g.l2_norm());
        prop_assert!(phi.linf_norm() <= g.linf_norm());
    }

    #[test]
    fn full_rate_reduces_to_adam(
        seed in any::<u64>(),
        alpha in 1e-4f64..0.1,
        beta1 in 0.0f64..0.99,
        beta2 in 0.9f64..0.9999,
        (beta_schedule, lr_schedule) in schedules(),
    ) {
        let hp = HyperParams { alpha, beta1, beta2, s: 1.0, beta_schedule, lr_schedule, ..HyperParams::default() };
        let mut rng = RngStream::new(seed);
        let mut a = vec![tensor(&mut rng, &[3, 2], 1.0), tensor(&mut rng, &[2], 1.0)];
        let mut b = a.clone();
        let mut sa = OptimizerState::for_params(&a);
        let mut sb = sa.clone();
        for _ in 0..1000 {
            let g: Vec<Tensor> = a.iter().map(|p| p.map(|x| 2.0 * x + 0.1)).collect();
            stochgradadam_step(&mut sa, &mut a, &g, &hp, &mut rng).unwrap();
            adam_step(&mut sb, &mut b, &g, &hp).unwrap();
            prop_assert_eq!(&a, &b);
        }
        prop_assert_eq!(sa, sb);
    }

    #[test]
    fn masked_second_moment_is_dominated(seed in any::<u64>(), s in 0.0f64..=1.0, steps in 1usize..200) {
        let hp = HyperParams { s, ..HyperParams::default() };
        let mut rng = RngStream::new(seed);
        let mut masked = vec![Tensor::zeros(&[6])];
        let mut full = masked.clone();
        let mut sm = OptimizerState::for_params(&masked);
        let mut sf = sm.clone();
        for _ in 0..steps {
            let g = vec![tensor(&mut rng, &[6], 3.0)];
            stochgradadam_step(&mut sm, &mut masked, &g, &hp, &mut rng).unwrap();
            adam_step(&mut sf, &mut full, &g, &hp).unwrap();
            // Same gradients regardless of the iterate, so only the mask differs.
            masked = full.clone();
        }
        for (vm, vf) in sm.moments()[0].v.as_slice().iter().zip(sf.moments()[0].v.as_slice()) {
            prop_assert!(*vm >= 0.0 && vm <= vf);
        }
    }

    #[test]
    fn states_stay_finite_and_nonnegative(seed in any::<u64>(), s in 0.0f64..=1.0, scale in 1e-6f64..1e6) {
        let hp = HyperParams { s, ..HyperParams::default() };
        let mut rng = RngStream::new(seed);
        let mut params = vec![tensor(&mut rng, &[4], 1.0)];
        let mut states = [OptimizerState::for_params(&params), OptimizerState::for_params(&params), OptimizerState::for_params(&params)];
        let mut copies = [params.clone(), params.clone()];
        for _ in 0..50 {
            let g = vec![tensor(&mut rng, &[4], scale)];
            stochgradadam_step(&mut states[0], &mut params, &g, &hp, &mut rng).unwrap();
            rmsprop_step(&mut states[1], &mut copies[0], &g, &hp).unwrap();
            sgd_momentum_step(&mut states[2], &mut copies[1], &g, &hp).unwrap();
        }
        for st in &states[..2] {
            prop_assert!(st.moments()[0].v.as_slice().iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
        prop_assert!(params.iter().chain(&copies[0]).chain(&copies[1]).all(|p| p.as_slice().iter().all(|x| x.is_finite())));
    }

    #[test]
    fn forward_rows_are_distributions(seed in any::<u64>(), batch in 1usize..20, hidden in 1usize..12, tanh in any::<bool>()) {
        let mut rng = RngStream::new(seed);
        let act = if tanh { Activation::Tanh } else { Activation::Relu };
        let model = MlpModel::new(&[5, hidden, 3], act, &mut rng).unwrap();
        let x = tensor(&mut rng, &[batch, 5], 20.0);
        let probs = model.forward(&x).unwrap().probs;
        for r in 0..batch {
            prop_assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();
        prop_assert!(model.loss(&x, &labels).unwrap() >= 0.0);
    }

    #[test]
    fn epochs_cover_every_example_once(seed in any::<u64>(), n in 1usize..60, bs in 1usize..17, shuffle in any::<bool>()) {
        let mut rng = RngStream::new(seed);
        let ds = gen_blobs(&mut rng, n, 2, 2, 2.0, 0.5).unwrap();
        let mut seen: Vec<usize> = batches(&ds, bs, &mut rng, shuffle).unwrap().into_iter().flat_map(|b| b.indices).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..2 * n).collect::<Vec<_>>());
    }

    #[test]
    fn entropy_is_bounded_and_maximal_only_at_uniform(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = RngStream::new(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.next_f64() + 1e-3).collect();
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let h = entropy(&p).unwrap();
        let ln_n = (n as f64).ln();
        prop_assert!(h >= 0.0 && h <= ln_n + 1e-12);
        if p.iter().any(|x| (x - 1.0 / n as f64).abs() > 1e-3) {
            prop_assert!(h < ln_n - 1e-12);
        }
    }

    #[test]
    fn histogram_conserves_counts(values in proptest::collection::vec(0.0f64..=1.0, 0..300), bins in 1usize..20) {
        prop_assert_eq!(histogram_of(&values, bins).total(), values.len());
    }

    #[test]
    fn pca_axes_are_orthonormal(seed in any::<u64>(), n in 3usize..40, d in 2usize..6) {
        let mut rng = RngStream::new(seed);
        let x = tensor(&mut rng, &[n, d], 1.0);
        let pca = pca_project(&x, 2).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (c0, c1) = (&pca.components[0], &pca.components[1]);
        prop_assert!((dot(c0, c0) - 1.0).abs() <= 1e-10);
        prop_assert!((dot(c1, c1) - 1.0).abs() <= 1e-10);
        prop_assert!(dot(c0, c1).abs() <= 1e-8);
    }

    #[test]
    fn sampled_histories_are_dominated(seed in any::<u64>(), steps in 1usize..200, dim in 1usize..8, s in 0.0f64..=1.0) {
        let mut rng = RngStream::new(seed);
        let trace = random_gradient_trace(&mut rng, TraceSpec { steps, dim, s, g_inf: 3.0 });
        let l2 = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..dim {
            prop_assert!(l2(trace.sampled_history(i)) <= l2(trace.full_history(i)));
        }
        prop_assert!(check_lemma43(&trace).holds);
    }
}

#[test]
fn every_optimizer_descends_on_a_bowl() {
    for s in [0.5, 0.8, 1.0] {
        let hp = HyperParams { alpha: 0.01, s, ..HyperParams::default() };
        type Step = fn(&mut OptimizerState, &mut [Tensor], &[Tensor], &HyperParams, &mut RngStream);
        let steps: [(&str, Step); 4] = [
            ("stochgradadam", |st, p, g, hp, rng| {
                stochgradadam_step(st, p, g, hp, rng).unwrap();
            }),
            ("adam", |st, p, g, hp, _| adam_step(st, p, g, hp).unwrap()),
            ("rmsprop", |st, p, g, hp, _| rmsprop_step(st, p, g, hp).unwrap()),
            ("sgd_momentum", |st, p, g, hp, _| sgd_momentum_step(st, p, g, hp).unwrap()),
        ];
        for (name, step) in steps {
            let mut params = vec![Tensor::filled(&[5], 1.0)];
            let f0 = params[0].squared_norm();
            let mut state = OptimizerState::for_params(&params);
            let mut rng = RngStream::new(9);
            for _ in 0..200 {
                let g = vec![params[0].scale(2.0)];
                step(&mut state, &mut params, &g, &hp, &mut rng);
            }
            assert!(params[0].squared_norm() < f0, "{name} at s={s}");
        }
    }
}
