use std::sync::OnceLock;

use mpsgd::batch::{check_filter, q_eta};
use mpsgd::checks::convolution_quadrature;
use mpsgd::diagnostics::{effective_dimension, fit_alpha, fit_r, r_from_exponents};
use mpsgd::harness::{aggregate_runs, Aggregation, RunSummary};
use mpsgd::kernel::{KernelEvaluator, Strategy};
use mpsgd::problem::{DualModel, ProblemSpec, SyntheticProblem};
use mpsgd::semistoch::SemiStochSystem;
use mpsgd::sgd::{average_check, SamplingScheme, SgdEngine};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

const ORDERS: [f64; 4] = [1.5, 2.5, 3.0, 3.5];

fn tables() -> &'static Vec<KernelEvaluator> {
    static T: OnceLock<Vec<KernelEvaluator>> = OnceLock::new();
    T.get_or_init(|| ORDERS.iter().map(|&q| KernelEvaluator::new(q).unwrap()).collect())
}

fn directs() -> &'static Vec<KernelEvaluator> {
    static D: OnceLock<Vec<KernelEvaluator>> = OnceLock::new();
    D.get_or_init(|| {
        ORDERS
            .iter()
            .map(|&q| {
                KernelEvaluator::with_strategy(
                    q,
                    Strategy::Direct {
                        truncation: mpsgd::kernel::DEFAULT_TRUNCATION,
                    },
                )
                .unwrap()
            })
            .collect()
    })
}

fn problem(alpha: f64, r: f64) -> SyntheticProblem {
    SyntheticProblem::new(ProblemSpec::new(alpha, r, 0.5).unwrap()).unwrap()
}

fn hard() -> &'static SyntheticProblem {
    static P: OnceLock<SyntheticProblem> = OnceLock::new();
    P.get_or_init(|| problem(3.0, 1.0 / 6.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_symmetric_and_periodic(i in 0usize..4, u in 1e-4f64..0.9999, shift in -3i32..3) {
        let k = &tables()[i];
        let v = k.eval(u).unwrap();
        prop_assert!((v - k.eval(1.0 - u).unwrap()).abs() <= 1e-9);
        prop_assert!((v - k.eval(u + shift as f64).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn series_kernel_symmetric(q in 1.05f64..6.0, u in 1e-4f64..0.9999) {
        let k = KernelEvaluator::exact(q).unwrap();
        prop_assert!((k.eval(u).unwrap() - k.eval(1.0 - u).unwrap()).abs() <= 1e-9);
        prop_assert!((k.eval(u).unwrap() - k.eval(u - 1.0).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn origin_value_is_twice_zeta(q in 1.1f64..6.0) {
        let k = KernelEvaluator::exact(q).unwrap();
        let want = 2.0 * mpsgd::kernel::zeta(q).unwrap();
        prop_assert!((k.eval(0.0).unwrap() - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn excess_risk_is_nonnegative_and_convex(
        n in 1usize..12,
        seed in any::<u64>(),
        lambda in 0.0f64..1.0,
        scale in 0.01f64..3.0,
    ) {
        let p = hard();
        let d = p.sample_dataset(n, seed).unwrap();
        let mut rng = mpsgd::seeds::rng_from_seed(seed ^ 1);
        use rand::Rng;
        let a: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let risk = p.risk_evaluator(&d.xs).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        prop_assert!(risk.eval(&a) >= -1e-9);
        prop_assert!(risk.eval(&mix) <= lambda * risk.eval(&a) + (1.0 - lambda) * risk.eval(&b) + 1e-9);
        let model = DualModel::new(d.xs.clone(), a.clone(), 3.0).unwrap();
        prop_assert!((p.excess_risk(&model).unwrap() - risk.eval(&a)).abs() <= 1e-9);
    }

    #[test]
    fn recursive_average_is_the_mean(n in 1usize..8, steps in 1usize..400, seed in any::<u64>(), s in 0usize..3) {
        let scheme = [SamplingScheme::WithReplacement, SamplingScheme::WithoutReplacement, SamplingScheme::Cycle][s];
        let p = problem(2.0, 0.25);
        let d = p.sample_dataset(n, seed).unwrap();
        let g = p.kernel().gram(&d.xs).unwrap();
        let mut e = SgdEngine::new(&g, &d.ys, p.spec().default_gamma(), scheme, seed).unwrap();
        let mut raw = Vec::with_capacity(steps);
        for _ in 0..steps {
            e.step();
            raw.push(e.coeffs().to_vec());
        }
        let mean = average_check(&raw).unwrap();
        for (x, y) in mean.iter().zip(e.averaged()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn filter_definition_holds(gamma in 1e-3f64..1.0, t in 2usize..5000) {
        let c = check_filter(gamma, t, 1e-8, 1.0 / gamma, 400, 1.0);
        prop_assert!(c.pass, "{:?}", c);
        let x = 0.3 / gamma;
        let q = q_eta(x, gamma, t);
        prop_assert!(q >= 0.0 && q <= 1.0 / x + 1e-12);
    }

    #[test]
    fn effective_dimension_decreasing(eigs in prop::collection::vec(0.0f64..10.0, 1..40), l in 1e-6f64..10.0, f in 1.01f64..10.0) {
        let a = effective_dimension(&eigs, l).unwrap();
        let b = effective_dimension(&eigs, l * f).unwrap();
        prop_assert!(b <= a + 1e-15);
        prop_assert!(a <= eigs.iter().filter(|&&e| e > 0.0).count() as f64 + 1e-12);
    }

    #[test]
    fn alpha_fit_exact_and_scale_invariant(alpha in 0.5f64..5.0, c in 1e-3f64..1e3, len in 20usize..300) {
        let eigs: Vec<f64> = (1..=len).map(|m| (m as f64).powf(-alpha)).collect();
        let scaled: Vec<f64> = eigs.iter().map(|e| c * e).collect();
        let w = (2, len);
        let a = fit_alpha(&eigs, w).unwrap().alpha_hat;
        let b = fit_alpha(&scaled, w).unwrap().alpha_hat;
        prop_assert!((a - alpha).abs() < 1e-10);
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn r_fit_threshold_algebra(alpha in 1.1f64..5.0, beta in 0.1f64..6.0) {
        let eigs: Vec<f64> = (1..=200).map(|m| (m as f64).powf(-alpha)).collect();
        let coeffs: Vec<f64> = (1..=200).map(|m| (m as f64).powf(-beta / 2.0)).collect();
        let s = fit_r(&eigs, &coeffs, alpha, (2, 200)).unwrap();
        let want = ((alpha + beta - 1.0) / (2.0 * alpha)).clamp(0.0, 1.0);
        prop_assert!((s.beta_hat - beta).abs() < 1e-9);
        prop_assert!((s.r_hat - want).abs() < 1e-10);
        prop_assert_eq!(r_from_exponents(alpha, beta), want);
    }

    #[test]
    fn theory_slope_formula(alpha in 1.01f64..6.0, r in 0.01f64..1.0) {
        let s = ProblemSpec::new(alpha, r, 0.1).unwrap();
        let thr = (alpha - 1.0) / (2.0 * alpha);
        prop_assert_eq!(s.is_hard(), r <= thr);
        if r >= thr {
            prop_assert_eq!(s.theory_slope(), 1.0);
        } else {
            prop_assert_eq!(s.theory_slope(), alpha / (2.0 * r * alpha + 1.0));
        }
        prop_assert!((s.default_gamma() * s.r_squared() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn aggregate_between_extremes(ts in prop::collection::vec(1u64..100_000, 1..20), geo in any::<bool>()) {
        let runs: Vec<RunSummary> = ts.iter().enumerate().map(|(rep, &t)| RunSummary {
            n: 10, rep, seed: 0, t_star: t, min_excess: 0.0, t_max: 100_000, trajectory: vec![],
        }).collect();
        let rule = if geo { Aggregation::GeometricMean } else { Aggregation::ArithmeticMean };
        let a = aggregate_runs(&runs, 10, rule);
        prop_assert!(a.t_star >= a.t_star_min as f64 * (1.0 - 1e-12));
        prop_assert!(a.t_star <= a.t_star_max as f64 * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn tabulated_matches_direct(i in 0usize..4, u in 1e-3f64..0.5) {
        let t = tables()[i].eval(u).unwrap();
        let d = &directs()[i];
        let v = d.eval(u).unwrap();
        prop_assert!((t - v).abs() <= 1e-6 + d.tail_bound(u), "q={} u={u}: {t} vs {v}", ORDERS[i]);
    }

    #[test]
    fn gram_is_psd(n in 2usize..256, seed in any::<u64>(), i in 0usize..4) {
        let mut rng = mpsgd::seeds::rng_from_seed(seed);
        use rand::Rng;
        let xs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let g = tables()[i].gram(&xs).unwrap();
        prop_assert!((&g - g.transpose()).amax() == 0.0);
        let min = SymmetricEigen::new(g.clone()).eigenvalues.min();
        prop_assert!(min >= -1e-9 * g.trace(), "min eigenvalue {min}");
    }

    #[test]
    fn convolution_identity(x in 0.0f64..1.0, z in 0.0f64..1.0, q in 1.0f64..3.0, qp in 1.0f64..3.0) {
        let quad = convolution_quadrature(q, qp, x, z).unwrap();
        let want = KernelEvaluator::exact(q + qp).unwrap().eval(x - z).unwrap();
        prop_assert!((quad - want).abs() <= 1e-5, "{quad} vs {want}");
    }

    #[test]
    fn semistoch_closed_form(d in 1usize..=8, t in 1usize..=200, alpha in 1.1f64..4.0, seed in any::<u64>()) {
        let s = SemiStochSystem::power_law(d, alpha, 1.0).unwrap();
        let noises = s.sample_noises(t, seed);
        let a = s.iterate_semi(&noises).unwrap();
        let b = s.closed_form_avg(&noises).unwrap();
        prop_assert!((a - b).amax() <= 1e-12);
    }

    #[test]
    fn non_diagonal_semistoch_closed_form(d in 2usize..=6, t in 1usize..=100, seed in any::<u64>()) {
        let mut rng = mpsgd::seeds::rng_from_seed(seed);
        use rand::Rng;
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let h = &a * a.transpose();
        let lmax = SymmetricEigen::new(h.clone()).eigenvalues.max();
        let s = SemiStochSystem::new(h, 1.0 / lmax, 1.0, 2.0).unwrap();
        let noises: Vec<DVector<f64>> = (0..t).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))).collect();
        prop_assert!((s.iterate_semi(&noises).unwrap() - s.closed_form_avg(&noises).unwrap()).amax() <= 1e-12);
    }
}
