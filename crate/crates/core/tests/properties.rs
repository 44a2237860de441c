use ldperm_core::approx::{
    bernstein_basis, bernstein_interpolate, build_derivative_poly, DerivativeKind, SmoothingParams,
};
use ldperm_core::losses::{sample_q, GenLinLoss};
use ldperm_core::math::norm;
use ldperm_core::oracle::{block_sum, copy_schedule, hinge_gradient, surrogate_hinge_gradient, Factor};
use ldperm_core::privacy::{
    clip_record, plan_noise, player_stream, randomize_player, AccountingMode, NoisePlan, PrivacyBudget,
};
use ldperm_core::solver::{project_ball, run_sigm, GradientOracle, SolverConfig};
use ldperm_core::{Result, StreamRng};
use proptest::prelude::*;

fn loss_strategy() -> impl Strategy<Value = GenLinLoss> {
    prop_oneof![
        Just(GenLinLoss::Hinge),
        Just(GenLinLoss::Plus),
        Just(GenLinLoss::Abs),
        Just(GenLinLoss::Logistic),
        (0.05f64..1.0).prop_map(|beta| GenLinLoss::SmoothedHinge { beta }),
    ]
}

fn unit_ball_vec(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, p).prop_map(|v| {
        let n = norm(&v);
        if n > 1.0 {
            v.iter().map(|x| x / n).collect()
        } else {
            v
        }
    })
}

proptest! {
    #[test]
    fn partition_of_unity(k in 1usize..=64, x in 0.0f64..=1.0) {
        let s: f64 = (0..=k).map(|v| bernstein_basis(v, k, x).unwrap()).sum();
        prop_assert!((s - 1.0).abs() <= 1e-10, "k={k} x={x} sum={s}");
    }

    #[test]
    fn affine_functions_are_reproduced(a in -5.0f64..5.0, b in -5.0f64..5.0, k in 1usize..300, x in 0.0f64..=1.0) {
        let poly = bernstein_interpolate(|t| a * t + b, k).unwrap();
        prop_assert!((poly.eval(x) - (a * x + b)).abs() <= 1e-10);
    }

    #[test]
    fn evaluation_routes_agree(beta in 0.05f64..1.0, d in 1usize..80, u in 0.0f64..=1.0) {
        let params = SmoothingParams::with_degree(beta, d).unwrap();
        let poly = build_derivative_poly(DerivativeKind::Plus, &params).unwrap().poly;
        prop_assert!((poly.eval(u) - poly.eval_de_casteljau(u)).abs() <= 1e-12);
    }

    #[test]
    fn q_samples_lie_in_the_subdifferential(loss in loss_strategy(), draw in 0.0f64..1.0) {
        let s = sample_q(&loss, draw).unwrap().value();
        prop_assert!((-1.0..=1.0).contains(&s));
        let u = loss.d_left() + draw * loss.spread();
        let lo = loss.derivative(s - 1e-6) - 1e-6;
        let hi = loss.derivative(s + 1e-6) + 1e-6;
        prop_assert!(lo <= u && u <= hi, "{}: s={s} u={u} [{lo}, {hi}]", loss.name());
    }

    #[test]
    fn projection_is_feasible_and_idempotent(w in prop::collection::vec(-10.0f64..10.0, 1..8), r in 0.1f64..3.0) {
        let once = project_ball(&w, r);
        prop_assert!(norm(&once) <= r + 1e-12);
        let twice = project_ball(&once, r);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
        if norm(&w) <= r {
            prop_assert_eq!(once, w);
        }
    }

    #[test]
    fn clipping_lands_in_the_feasible_region(x in prop::collection::vec(-5.0f64..5.0, 1..8), y in -3.0f64..3.0) {
        let (cx, cy) = clip_record(&x, y).unwrap();
        prop_assert!(norm(&cx) <= 1.0 + 1e-12);
        prop_assert!(cy.abs() <= 1.0);
        let (cx2, cy2) = clip_record(&cx, cy).unwrap();
        prop_assert_eq!(cy, cy2);
        for (a, b) in cx.iter().zip(&cx2) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn calibrated_budget_is_met(eps in 0.01f64..10.0, delta in 1e-9f64..0.1, d in 1usize..20) {
        let plan = plan_noise(&PrivacyBudget::new(eps, delta, AccountingMode::Calibrated).unwrap(), d).unwrap();
        prop_assert!((plan.composed_epsilon - eps).abs() <= 1e-12 * eps.max(1.0));
        prop_assert!((plan.composed_delta - delta).abs() <= 1e-12);
    }

    #[test]
    fn faithful_budget_composes_to_three_epsilon(eps in 0.01f64..10.0, delta in 1e-9f64..0.1, d in 1usize..20) {
        let plan = plan_noise(&PrivacyBudget::new(eps, delta, AccountingMode::PaperFaithful).unwrap(), d).unwrap();
        prop_assert!((plan.composed_epsilon / eps - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn every_copy_is_consumed_once(d in 1usize..40) {
        let m = d * (d + 1);
        let mut seen = vec![0u32; m];
        let weights = vec![1.0; d + 1];
        block_sum(&weights, |k| {
            seen[k] += 1;
            0.5
        });
        prop_assert!(seen.iter().all(|&c| c == 1));
        let mut powers = vec![0usize; d + 1];
        for (j, k, f) in copy_schedule(d) {
            prop_assert!(k >= j * d && k < (j + 1) * d);
            if f == Factor::Power {
                powers[j] += 1;
            }
        }
        for (j, &count) in powers.iter().enumerate() {
            prop_assert_eq!(count, j);
        }
    }

    #[test]
    fn zero_noise_gradient_is_the_surrogate(
        d in 1usize..12,
        x in unit_ball_vec(4),
        w in unit_ball_vec(4),
        y in -1.0f64..1.0,
        beta in 0.1f64..1.0,
    ) {
        let params = SmoothingParams::with_degree(beta, d).unwrap();
        let poly = build_derivative_poly(DerivativeKind::Hinge, &params).unwrap().poly;
        let report = randomize_player(&x, y, &NoisePlan::zero_noise(), d, 0, &mut player_stream(0, 0)).unwrap();
        let g = hinge_gradient(&w, &report, &poly).unwrap().gradient;
        let s = surrogate_hinge_gradient(&w, &x, y, &poly);
        for (a, b) in g.iter().zip(&s) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn reports_depend_only_on_seed_and_player(seed in any::<u64>(), id in any::<u64>(), x in unit_ball_vec(3)) {
        let plan = plan_noise(&PrivacyBudget::new(1.0, 1e-5, AccountingMode::Calibrated).unwrap(), 2).unwrap();
        let a = randomize_player(&x, 0.5, &plan, 2, id, &mut player_stream(seed, id)).unwrap();
        let b = randomize_player(&x, 0.5, &plan, 2, id, &mut player_stream(seed, id)).unwrap();
        prop_assert_eq!(&a, &b);
        let other = randomize_player(&x, 0.5, &plan, 2, id, &mut player_stream(seed, id.wrapping_add(1))).unwrap();
        prop_assert_ne!(a.x0(), other.x0());
    }
}

/// Linear objective `<g_player, w>` with a little noise.
struct Linear {
    gs: Vec<Vec<f64>>,
}

impl GradientOracle for Linear {
    fn dim(&self) -> usize {
        self.gs[0].len()
    }

    fn num_players(&self) -> usize {
        self.gs.len()
    }

    fn gradient(&mut self, _w: &[f64], player: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        use rand::Rng;
        Ok(self.gs[player].iter().map(|g| g + rng.random_range(-0.1..0.1)).collect())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solver_iterates_stay_in_the_ball_and_replay(
        gs in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..6),
        seed in any::<u64>(),
        radius in 0.2f64..2.0,
        iterations in 1usize..400,
    ) {
        let mut cfg = SolverConfig::new(iterations, seed);
        cfg.radius = radius;
        let mut oracle = Linear { gs };
        let a = run_sigm(&mut oracle, &cfg).unwrap();
        let b = run_sigm(&mut oracle, &cfg).unwrap();
        prop_assert_eq!(a.trace.len(), iterations);
        prop_assert!(a.trace.records.iter().all(|r| r.iterate_norm <= radius + 1e-12));
        prop_assert!(norm(&a.w) <= radius + 1e-12);
        prop_assert_eq!(a, b);
    }
}
