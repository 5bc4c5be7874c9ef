use logsum_amp::amp::{run, AmpState, Schedule, Status, StoppingRule};
use logsum_amp::model::{generate, ProblemSpec};
use logsum_amp::phase::bisect_threshold;
use logsum_amp::prox::{soft_threshold, threshold, LogSumParams, LogSumProx, Regime};
use logsum_amp::replica::{alpha_c, ccdf, rs_order_parameters, StabilityMap};
use logsum_amp::se::{se_step, Quadrature, SeState};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = LogSumParams> {
    (1e-3f64..10.0, 1e-2f64..10.0).prop_map(|(l, e)| LogSumParams::new(l, e).unwrap())
}

proptest! {
    #[test]
    fn prox_is_odd(p in params(), x in -20.0f64..20.0) {
        prop_assert_eq!(threshold(-x, &p).value, -threshold(x, &p).value);
    }

    #[test]
    fn prox_keeps_sign_and_zero_has_zero_slope(p in params(), x in -20.0f64..20.0) {
        let r = threshold(x, &p);
        prop_assert!(r.value == 0.0 || r.value.signum() == x.signum());
        prop_assert!(r.value.abs() <= x.abs());
        prop_assert!(r.derivative >= 0.0);
        if r.value == 0.0 {
            prop_assert_eq!(r.derivative, 0.0);
        }
    }

    #[test]
    fn prox_grows_past_the_cutoff(p in params(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let prox = LogSumProx::new(p);
        let c = prox.cutoff();
        let (lo, hi) = (c + 1e-6 + 10.0 * a.min(b), c + 2e-6 + 10.0 * a.max(b));
        prop_assert!(prox.apply(hi).value > prox.apply(lo).value);
    }

    #[test]
    fn regime_matches_sqrt_lambda(l in 1e-3f64..10.0, e in 1e-2f64..10.0) {
        let p = LogSumParams::new(l, e).unwrap();
        prop_assert_eq!(p.regime() == Regime::Convex, e >= l.sqrt());
    }

    #[test]
    fn adaptive_schedule_stays_convex(lambda in 1e-12f64..100.0, d in 0.0f64..2.0) {
        let eps = Schedule::Adaptive { delta_epsilon: d }.epsilon_at(lambda);
        prop_assert!(eps >= lambda.sqrt());
        prop_assert_eq!(LogSumParams::new(lambda, eps).unwrap().regime(), Regime::Convex);
    }

    #[test]
    fn soft_threshold_shrinks(x in -10.0f64..10.0, t in 0.0f64..5.0) {
        let (s, d) = soft_threshold(x, t);
        prop_assert_eq!(s, x.signum() * (x.abs() - t).max(0.0));
        prop_assert!(d == 0.0 || d == 1.0);
    }

    #[test]
    fn ccdf_is_a_tail_probability(x in -40.0f64..40.0, dx in 0.0f64..5.0) {
        let h = ccdf(x);
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!(ccdf(x + dx) <= h);
        prop_assert!((ccdf(-x) + h - 1.0).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stability_map_is_increasing(alpha in 0.05f64..1.0, rho in 0.01f64..0.99, eps in 1e-3f64..5.0, u in 1e-6f64..50.0, du in 1e-6f64..10.0) {
        prop_assume!(rho < alpha);
        let m = StabilityMap::new(alpha, rho, eps).unwrap();
        prop_assert!(m.f(u + du) >= m.f(u));
        prop_assert!(m.f_prime(u) >= 0.0);
    }

    #[test]
    fn alpha_c_lies_between_rho_and_one(rho in 0.01f64..0.95, eps in 1e-3f64..5.0) {
        let a = alpha_c(rho, eps).unwrap();
        prop_assert!(a > rho && a < 1.0);
    }

    #[test]
    fn bisection_brackets_a_step(t in 0.01f64..0.99, tol in 1e-6f64..1e-2) {
        let b = bisect_threshold(|a| a >= t, 0.0, 1.0, tol).unwrap();
        prop_assert!(b.below < t && t <= b.alpha);
        prop_assert!(b.alpha - b.below <= tol);
        prop_assert!(b.audit_violations.is_empty());
    }

    #[test]
    fn se_step_stays_physical(mse in 1e-8f64..2.0, chi in 1e-8f64..2.0, alpha in 0.1f64..1.0, rho in 0.05f64..0.9, d in 0.0f64..1.0) {
        let s = se_step(&SeState::new(mse, chi), alpha, rho, &Schedule::Adaptive { delta_epsilon: d }, &Quadrature::default());
        prop_assert!(!s.flagged);
        prop_assert!(s.mse >= 0.0 && s.mse.is_finite());
        prop_assert!(s.chi >= 0.0 && s.chi.is_finite());
    }

    #[test]
    fn rs_mse_matches_state_evolution(mse in 1e-6f64..1.0, chi in 1e-6f64..2.0, alpha in 0.1f64..1.0, rho in 0.05f64..0.9, eps in 0.05f64..5.0) {
        let quad = Quadrature::default();
        let fp = rs_order_parameters(mse, chi, alpha, rho, eps, &quad).unwrap();
        let s = se_step(&SeState::new(mse, chi), alpha, rho, &Schedule::Fixed { epsilon: eps }, &quad);
        prop_assert!((fp.q_hat * fp.chi - alpha).abs() <= 1e-10 * alpha);
        prop_assert!((fp.mse - s.mse).abs() <= 1e-9 * s.mse.max(1e-12), "{} vs {}", fp.mse, s.mse);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn instances_are_consistent(n in 20usize..200, alpha in 0.1f64..1.0, rho in 0.05f64..0.95, seed in any::<u64>()) {
        let spec = ProblemSpec::new(n, alpha, rho, seed).unwrap();
        prop_assert!(spec.m() >= 1);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        prop_assert_eq!(&a.y, &b.y);
        let mut y = vec![0.0; a.m()];
        a.a.mul_vec(&a.x0, &mut y);
        prop_assert_eq!(&y, &a.y);
    }

    #[test]
    fn run_status_matches_its_thresholds(n in 50usize..200, alpha in 0.2f64..1.0, rho in 0.05f64..0.6, seed in any::<u64>(), kind in 0usize..3) {
        let inst = generate(&ProblemSpec::new(n, alpha, rho, seed).unwrap()).unwrap();
        let sched = [Schedule::Adaptive { delta_epsilon: 0.0 }, Schedule::Fixed { epsilon: 0.5 }, Schedule::SoftThreshold][kind];
        let stop = StoppingRule { t_max: 300, ..StoppingRule::amp() };
        let r = run(&inst, &sched, AmpState::initial(&inst), &stop).unwrap();
        let last = r.final_mse();
        match r.status {
            Status::Converged => {
                prop_assert!(last < stop.mse_converge);
                prop_assert_eq!(r.k_clamped, 0);
            }
            Status::Diverged => {
                let chi = r.trajectory.last().unwrap().chi;
                prop_assert!(!(last <= stop.mse_diverge) || !(chi > 0.0));
            }
            _ => prop_assert!(last.is_finite()),
        }
        for p in &r.trajectory[..r.trajectory.len() - 1] {
            prop_assert!(p.chi > 0.0 && p.chi.is_finite(), "{:?}", p);
        }
    }
}
