use losshedge::corrector::{solve_first_corrector, HConvention};
use losshedge::frictionless::{FrictionlessSolution, LossModel, PricingPath};
use losshedge::hedge_sim::{
    project_to_band, CapitalRule, Epsilon, Hedger, StopLevel, StrategySpec,
};
use losshedge::market::{bs_functionals, MarketParams, Payoff, RngSpec, TimeGrid};
use losshedge::second_corrector::u_power_closed;
use proptest::prelude::*;

fn market(lambda: f64, sigma: f64) -> MarketParams {
    MarketParams::new(lambda, sigma, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corrector_profile_bounds(
        pi_p in 0.05f64..20.0,
        pi_pp in 0.05f64..20.0,
        delta in prop_oneof![-5.0f64..-0.01, 0.01f64..5.0],
        sigma in 0.05f64..1.5,
        r in -3.0f64..3.0,
    ) {
        let c = solve_first_corrector(pi_p, pi_pp, delta, sigma).unwrap();
        let xi = r * c.xi_hat;
        prop_assert_eq!(c.varpi(0.0), 0.0);
        prop_assert!(c.varpi(xi) >= 0.0);
        prop_assert!(c.varpi(xi) <= xi.abs() + 1e-12 * c.xi_hat);
        prop_assert!(c.varpi_xi(xi).abs() <= 1.0 + 1e-12);
        if r.abs() >= 1.0 {
            prop_assert_eq!(c.varpi_xi(xi).abs(), 1.0);
        } else {
            let scale = c.h.max(1.0);
            prop_assert!(c.residual(xi, pi_pp / (pi_p * pi_p), sigma, delta).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn exponential_price_is_separable_and_increasing(
        s in 20.0f64..300.0,
        s2 in 20.0f64..300.0,
        t in 0.0f64..0.95,
        p in -10.0f64..-0.01,
        eta in 0.2f64..5.0,
    ) {
        let sol = FrictionlessSolution::new(market(0.3, 0.2), Payoff::put(100.0).unwrap(), LossModel::exponential(eta).unwrap()).unwrap();
        let gap = |s: f64| sol.price(t, s, p).unwrap() - sol.price(t, s, -1.0).unwrap();
        prop_assert!((gap(s) - gap(s2)).abs() <= 1e-10 * (1.0 + gap(s).abs()));
        let pt = sol.eval(t, s, p).unwrap();
        prop_assert!(pt.pi_p > 0.0 && pt.pi_pp > 0.0);
        prop_assert!(pt.relation_residual(0.2).abs() <= 1e-10 * (1.0 + pt.theta.abs()));
        prop_assert!(sol.price(t, s, p * 0.9).unwrap() > sol.price(t, s, p).unwrap());
    }

    #[test]
    fn power_quantities_scale_with_threshold(
        t in 0.0f64..0.95,
        p in -10.0f64..-0.01,
        beta in 0.3f64..4.0,
        kappa in 0.1f64..3.0,
    ) {
        let m = market(0.3, 0.2);
        let sol = FrictionlessSolution::new(m, Payoff::zero(), LossModel::power(beta, kappa).unwrap()).unwrap();
        let scale = (-p).powf(-1.0 / beta);
        let here = sol.eval(t, 100.0, p).unwrap();
        let unit = sol.eval(t, 100.0, -1.0).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + b.abs());
        prop_assert!(close(here.theta, unit.theta * scale));
        prop_assert!(close(here.delta, unit.delta * scale));
        prop_assert!(close(here.pi + kappa, (unit.pi + kappa) * scale));
        let u = u_power_closed(t, p, beta, kappa, &m).unwrap().value;
        let u1 = u_power_closed(t, -1.0, beta, kappa, &m).unwrap().value;
        prop_assert!(u >= 0.0);
        prop_assert!(close(u, u1 * scale));
    }

    #[test]
    fn duality_matches_closed_form(
        t in 0.0f64..0.9,
        p in -5.0f64..-0.05,
        eta in 0.3f64..3.0,
    ) {
        let closed = FrictionlessSolution::new(market(0.3, 0.2), Payoff::zero(), LossModel::exponential(eta).unwrap()).unwrap();
        let dual = closed.clone().with_path(PricingPath::Duality).unwrap();
        let a = closed.price(t, 100.0, p).unwrap();
        let b = dual.price(t, 100.0, p).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
    }

    #[test]
    fn put_price_is_bounded(s in 1.0f64..500.0, t in 0.0f64..0.999, k in 10.0f64..200.0) {
        let v = bs_functionals(&Payoff::put(k).unwrap(), &market(0.3, 0.4), t, s, 1).unwrap();
        prop_assert!(v.value >= (k - s).max(0.0) - 1e-9 && v.value <= k);
        prop_assert!((-1.0..=0.0).contains(&v.ds));
    }

    #[test]
    fn projection_lands_in_band_and_pays_cost(
        x in -10.0f64..10.0,
        y in -10.0f64..10.0,
        theta in -5.0f64..5.0,
        w in 0.0f64..2.0,
        eps in 0.01f64..0.5,
    ) {
        let e = Epsilon::new(eps).unwrap();
        let (x1, y1) = project_to_band(x, y, theta, w, e);
        prop_assert!(theta - w <= x1 && x1 <= theta + w);
        prop_assert!(y1 + x1 <= y + x + 1e-12);
        prop_assert!((y + x) - (y1 + x1) <= e.cost() * (x - x1).abs() + 1e-12);
    }

    #[test]
    fn increments_depend_only_on_seed_and_path(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let rng = RngSpec::new(seed);
        let (mut first, mut other, mut again) = (Vec::new(), Vec::new(), Vec::new());
        rng.brownian_increments(a, &grid, &mut first);
        rng.brownian_increments(b, &grid, &mut other);
        rng.brownian_increments(a, &grid, &mut again);
        prop_assert_eq!(&first, &again);
        prop_assert_eq!(a == b, first == other);
        let mut fine = Vec::new();
        rng.brownian_increments(a, &grid.refined(), &mut fine);
        for (k, dw) in first.iter().enumerate() {
            prop_assert!((dw - fine[2 * k] - fine[2 * k + 1]).abs() <= 1e-14);
        }
    }
}

fn exponential_hedger(eps: f64, cushion: f64) -> Hedger {
    let sol = FrictionlessSolution::new(
        market(0.3, 0.2),
        Payoff::put(100.0).unwrap(),
        LossModel::exponential(2.0).unwrap(),
    )
    .unwrap();
    let mut spec = StrategySpec::for_rule(CapitalRule::Prop62, cushion);
    spec.stop = StopLevel::Never;
    Hedger::new(
        sol,
        spec,
        Epsilon::new(eps).unwrap(),
        HConvention::Section6,
        TimeGrid::new(0.0, 1.0, 50).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reflected_path_keeps_ledger_and_band(
        dw in prop::collection::vec(-0.4f64..0.4, 50),
        eps in 0.05f64..0.3,
        x0 in -2.0f64..2.0,
    ) {
        let hedger = exponential_hedger(eps, 1.0);
        let mut rows = Vec::new();
        let out = hedger.simulate_increments(100.0, -1.0, x0, 0.0, &dw, Some(&mut rows)).unwrap();
        let c = hedger.cost();
        prop_assert_eq!(out.y_t, -(1.0 + c) * out.l_plus + (1.0 - c) * out.l_minus);
        prop_assert_eq!(out.band_violations, 0);
        for pair in rows.windows(2) {
            prop_assert!(pair[1].l_plus >= pair[0].l_plus && pair[1].l_minus >= pair[0].l_minus);
        }
        for r in &rows {
            prop_assert!(r.band_lo <= r.x && r.x <= r.band_hi);
        }
    }

    #[test]
    fn more_capital_never_lowers_expected_loss(
        seed in any::<u64>(),
        y0 in -1.0f64..1.0,
        extra in 0.0f64..1.0,
    ) {
        let hedger = exponential_hedger(0.1, 1.0);
        let rng = RngSpec::new(seed);
        let mean_loss = |y: f64| -> f64 {
            (0..64u64).map(|i| hedger.simulate(100.0, -1.0, 0.0, y, &rng, i).unwrap().loss).sum::<f64>() / 64.0
        };
        prop_assert!(mean_loss(y0 + extra) >= mean_loss(y0));
    }
}
