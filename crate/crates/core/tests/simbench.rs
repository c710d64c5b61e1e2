use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use windcast::rng::rng_from;
use windcast::simbench::*;

fn endpoint(y0: &[f64], forcing: f64, horizon: f64, dt: f64) -> Vec<f64> {
    let steps = (horizon / dt).round() as usize;
    lorenz::integrate(y0, forcing, dt, steps).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn fixed_point_holds_every_step() {
    let f = 4.5;
    let mut y = vec![f; 81];
    for _ in 0..1000 {
        lorenz::rk4_step(&mut y, f, 0.01);
        assert!(y.iter().all(|v| (v - f).abs() <= 1e-12));
    }
}

#[test]
fn rk4_is_fourth_order() {
    let mut rng = rng_from(17);
    let y0: Vec<f64> = (0..40).map(|_| 4.5 + rng.sample::<f64, _>(StandardNormal)).collect();
    let (h, horizon) = (0.04, 2.0);
    let reference = endpoint(&y0, 4.5, horizon, h / 20.0);
    let coarse = max_diff(&endpoint(&y0, 4.5, horizon, h), &reference);
    let fine = max_diff(&endpoint(&y0, 4.5, horizon, h / 2.0), &reference);
    let ratio = coarse / fine;
    assert!((8.0..=32.0).contains(&ratio), "error ratio {ratio}");
}

#[test]
fn lorenz_is_deterministic_and_has_moderate_correlation() {
    let spec = Lorenz96Spec::default();
    let a = simulate_lorenz96(&spec, 5).unwrap();
    let b = simulate_lorenz96(&spec, 5).unwrap();
    assert_eq!(a.values(), b.values());
    assert_eq!(a.values().shape(), (1000, 81));
    let rho: Vec<f64> = (0..5).map(|s| mean_abs_correlation(simulate_lorenz96(&spec, s).unwrap().values())).collect();
    let avg = rho.iter().sum::<f64>() / rho.len() as f64;
    assert!((avg - 0.42).abs() <= 0.1, "mean absolute correlation {avg} ({rho:?})");
}

#[test]
fn persistence_degrades_with_lead() {
    let spec = Lorenz96Spec::default();
    for seed in 0..20 {
        let y = simulate_lorenz96(&spec, seed).unwrap().into_values();
        let f = baseline_per(&y, spec.n_train, 3).unwrap();
        let m1 = forecast_set_mspe(&f[0], &y).unwrap();
        let m3 = forecast_set_mspe(&f[2], &y).unwrap();
        assert!(m3 > m1, "seed {seed}: lead 3 {m3} vs lead 1 {m1}");
    }
}

#[test]
fn var_recovers_a_known_coefficient() {
    let (t, n) = (5000, 4);
    let mut rng = rng_from(2);
    let mut y = DMatrix::zeros(t, n);
    for c in 0..n {
        y[(0, c)] = 1.0 + c as f64;
    }
    for r in 1..t {
        for c in 0..n {
            // Occasional kicks keep the process away from zero so the fit is well posed.
            let kick = if r % 50 == 0 { rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            y[(r, c)] = 0.5 * y[(r - 1, c)] + kick + 1e-6 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let m = fit_var1(&y).unwrap();
    assert_eq!(m.ridge, 0.0);
    let target = DMatrix::identity(n, n) * 0.5;
    assert!((&m.coef - target).abs().max() < 1e-3, "{}", m.coef);
}

#[test]
fn var_degrades_with_lead_on_lorenz() {
    let spec = Lorenz96Spec::default();
    let y = simulate_lorenz96(&spec, 3).unwrap().into_values();
    let f = baseline_var1(&y, spec.n_train, 3).unwrap();
    let m1 = forecast_set_mspe(&f[0], &y).unwrap();
    let m3 = forecast_set_mspe(&f[2], &y).unwrap();
    assert!(m3 > m1, "lead 3 {m3} vs lead 1 {m1}");
}

#[test]
fn rolling_origins_cover_the_test_period() {
    let o = baselines::rolling_origins(800, 1000, 3);
    assert_eq!(o.first(), Some(&799));
    assert_eq!(o.last(), Some(&996));
    assert_eq!(o.len(), 198);
}

#[test]
fn dense_simulation_limit() {
    let spec = BiResolutionSpec {
        n: spatial::MAX_DENSE_LOCATIONS + 1,
        ..Default::default()
    };
    assert!(simulate_biresolution(&spec, 1).is_err());
}

#[test]
fn biresolution_is_deterministic() {
    let spec = BiResolutionSpec {
        n: 300,
        ..Default::default()
    };
    let a = simulate_biresolution(&spec, 9).unwrap();
    let b = simulate_biresolution(&spec, 9).unwrap();
    assert_eq!(a.values(), b.values());
    assert_eq!(a.locations().coords(), b.locations().coords());
    assert!(a.locations().coords().iter().all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
}

#[test]
fn random_baseline_is_deterministic() {
    let locs = sample_scheme(Scheme::Chessboard, 400, [0.25, 0.5, 1.0], 4).unwrap();
    let a = knot_selector_baseline(&locs, 50, KnotBaseline::Rand, 8).unwrap();
    let b = knot_selector_baseline(&locs, 50, KnotBaseline::Rand, 8).unwrap();
    assert_eq!(a, b);
    for method in [KnotBaseline::Grid, KnotBaseline::Rand, KnotBaseline::Sf] {
        let k = knot_selector_baseline(&locs, 50, method, 8).unwrap();
        let mut idx = k.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 50, "{method:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_is_bounded_and_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..40), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (qa, qb) = (score::quantile(&v, lo), score::quantile(&v, hi));
        prop_assert!(qa <= qb);
        prop_assert!(qa >= min && qb <= max);
    }

    #[test]
    fn mspe_is_zero_only_for_equal_panels(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
        let mut rng = rng_from(seed);
        let truth = DMatrix::from_fn(r, c, |_, _| rng.random::<f64>());
        prop_assert_eq!(score_mspe(&truth, &truth).unwrap().mean, 0.0);
        let mut other = truth.clone();
        other[(r - 1, c - 1)] += 0.5;
        prop_assert!(score_mspe(&other, &truth).unwrap().mean > 0.0);
    }

    #[test]
    fn persistence_is_exact_on_constant_series(v in -10.0f64..10.0, lead in 1usize..5) {
        let y = DMatrix::from_element(30, 3, v);
        for f in baseline_per(&y, 20, lead).unwrap() {
            prop_assert_eq!(forecast_set_mspe(&f, &y).unwrap(), 0.0);
        }
    }
}
