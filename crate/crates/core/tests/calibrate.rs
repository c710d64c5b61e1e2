use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use windcast::calibrate::*;
use windcast::field::ForecastSet;
use windcast::rng::{rng_from, sub_seed};
use windcast::simbench::matern::{distance, spde_matern_covariance};

fn grid(k: usize) -> Vec<[f64; 2]> {
    (0..k)
        .flat_map(|j| (0..k).map(move |i| [i as f64 / (k - 1) as f64, j as f64 / (k - 1) as f64]))
        .collect()
}

/// Unit-variance Matern covariance with smoothness 1 and practical range `range`.
fn matern_cov(points: &[[f64; 2]], range: f64) -> DMatrix<f64> {
    let kappa = 8f64.sqrt() / range;
    let tau = 1.0 / (4.0 * std::f64::consts::PI * kappa * kappa).sqrt();
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| spde_matern_covariance(distance(points[i], points[j]), kappa, tau))
}

/// `n_draws` rows of N(0, cov).
fn draws(cov: &DMatrix<f64>, n_draws: usize, seed: u64) -> DMatrix<f64> {
    let n = cov.nrows();
    let l = (cov + DMatrix::identity(n, n) * 1e-10).cholesky().expect("covariance must be PD").l();
    let mut rng = rng_from(seed);
    let z = DMatrix::from_fn(n, n_draws, |_, _| rng.sample::<f64, _>(StandardNormal));
    (l * z).transpose()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

#[test]
fn residual_panel_groups_by_lead() {
    let truth = DMatrix::from_fn(6, 2, |r, c| (r * 10 + c) as f64);
    let f1 = ForecastSet::new(1, vec![1, 2, 3], DMatrix::from_fn(3, 2, |r, c| truth[(r + 2, c)] - 1.0)).unwrap();
    let f2 = ForecastSet::new(2, vec![1, 2, 3], DMatrix::from_fn(3, 2, |r, c| truth[(r + 3, c)] + r as f64)).unwrap();
    let panel = build_residual_panel(&[f1, f2], &truth).unwrap();
    let l1 = panel.lead(1).unwrap();
    assert!(l1.residuals.iter().all(|&r| r == 1.0));
    assert_eq!(l1.sd, vec![0.0, 0.0]);
    let l2 = panel.lead(2).unwrap();
    assert_eq!(l2.residuals.column(0).as_slice(), &[0.0, -1.0, -2.0]);
    assert!((l2.sd[1] - 1.0).abs() < 1e-15);
}

#[test]
fn misaligned_forecasts_are_rejected() {
    let truth = DMatrix::zeros(4, 2);
    let f = ForecastSet::new(2, vec![1, 2, 3], DMatrix::zeros(3, 2)).unwrap();
    assert!(build_residual_panel(&[f], &truth).is_err());
    let f = ForecastSet::new(1, vec![0], DMatrix::zeros(1, 3)).unwrap();
    assert!(build_residual_panel(&[f], &truth).is_err());
}

#[test]
fn marginal_coverage_on_gaussian_residuals() {
    // Spread estimated on one block of origins, coverage measured on a fresh block.
    let (n_origins, n_loc, sd) = (10_000, 4, 2.0);
    let mut rng = rng_from(sub_seed(3, "coverage", 0));
    let mut block = || DMatrix::from_fn(n_origins, n_loc, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let fit = LeadResiduals::new(1, block());
    let eval = block();
    for level in [0.60, 0.80, 0.95] {
        let hw = marginal_half_widths(&fit, level).unwrap();
        for (loc, cov) in location_coverage(&eval, &hw).into_iter().enumerate() {
            assert!((cov - level).abs() <= 0.02, "level {level} location {loc}: {cov}");
        }
    }
}

#[test]
fn shrinkage_is_psd_for_psd_parents() {
    let pts = grid(8);
    let spde = matern_cov(&pts, 0.3);
    let emp = empirical_covariance(&draws(&spde, 20, 5)).unwrap();
    for delta in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let s = shrink_covariance(&spde, &emp, delta).unwrap();
        assert_eq!(s, s.transpose());
        assert!((s + DMatrix::identity(64, 64) * 1e-9).cholesky().is_some(), "delta {delta}");
    }
}

fn psd(n: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from(seed);
    let a = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shrinkage_eigenvalue_floor(seed in any::<u64>(), n in 2usize..12, rank in 1usize..12, delta in 0.0f64..=1.0) {
        let a = psd(n, n, seed);
        let b = psd(n, rank.min(n), seed.wrapping_add(1));
        let s = shrink_covariance(&a, &b, delta).unwrap();
        let floor = (delta * min_eigenvalue(&a)).min(0.0);
        let scale = a.norm() + b.norm();
        prop_assert!(min_eigenvalue(&s) >= floor - 1e-10 * scale);
        prop_assert_eq!(&s, &s.transpose());
    }

    #[test]
    fn sd_ignores_constant_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = rng_from(seed);
        let r = DMatrix::from_fn(30, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = LeadResiduals::new(1, r.clone());
        let b = LeadResiduals::new(1, r.add_scalar(shift));
        for (x, y) in a.sd.iter().zip(&b.sd) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn half_widths_grow_with_level(lo in 0.05f64..0.5, gap in 0.01f64..0.45, sd in 0.1f64..5.0) {
        let l = LeadResiduals::new(1, DMatrix::from_row_slice(2, 1, &[sd, -sd]));
        let a = marginal_half_widths(&l, lo).unwrap()[0];
        let b = marginal_half_widths(&l, lo + gap).unwrap()[0];
        prop_assert!(b > a);
    }
}

const HALF_SIDES: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.5];

#[test]
fn weight_favors_the_correct_parent() {
    // Residuals follow the spatial covariance; the empirical one is a 50-sample estimate.
    let pts = grid(20);
    let spde = matern_cov(&pts, 0.1);
    let mut above = 0;
    for s in 0..20u64 {
        let emp = empirical_covariance(&draws(&spde, 50, sub_seed(s, "emp", 0))).unwrap();
        let resid = draws(&spde, 2000, sub_seed(s, "eval", 0));
        let p = DeltaProblem {
            residuals: &resid,
            spde: &spde,
            emp: &emp,
            locations: &pts,
            center: [0.5, 0.5],
        };
        let sel = select_delta(&p, &HALF_SIDES, &default_delta_grid(), 0.95).unwrap();
        if sel.delta > 0.5 {
            above += 1;
        }
    }
    assert!(above >= 16, "weight above 0.5 on {above} of 20 seeds");
}

#[test]
fn weight_decreases_as_the_square_expands() {
    // Truth adds a small domain-wide common component to the spatial covariance,
    // which the spatial model misses; the empirical covariance is inflated by 1.5.
    // Small squares are dominated by local variance and favor the spatial model,
    // large squares by the common component and favor the empirical one.
    let pts = grid(20);
    let n = pts.len();
    let spde = matern_cov(&pts, 0.1);
    let truth = &spde + DMatrix::from_element(n, n, 0.05);
    let emp = empirical_covariance(&draws(&(&truth * 1.5), 4000, 21)).unwrap();
    let resid = draws(&truth, 10_000, 22);
    let p = DeltaProblem {
        residuals: &resid,
        spde: &spde,
        emp: &emp,
        locations: &pts,
        center: [0.5, 0.5],
    };
    let sel = select_delta(&p, &HALF_SIDES, &default_delta_grid(), 0.95).unwrap();
    let deltas: Vec<f64> = sel.diagnostics.iter().map(|d| d.delta).collect();
    assert_eq!(deltas.len(), HALF_SIDES.len());
    for w in deltas.windows(2) {
        assert!(w[1] <= w[0], "weights {deltas:?}");
    }
    assert!(deltas[0] > deltas[deltas.len() - 1], "weights {deltas:?}");
}

#[test]
fn empty_squares_are_skipped() {
    let pts = vec![[0.0, 0.0], [1.0, 1.0], [0.9, 0.1]];
    let cov = DMatrix::identity(3, 3);
    let resid = draws(&cov, 100, 1);
    let p = DeltaProblem {
        residuals: &resid,
        spde: &cov,
        emp: &cov,
        locations: &pts,
        center: [0.5, 0.5],
    };
    let sel = select_delta(&p, &[0.1, 0.45, 0.6], &default_delta_grid(), 0.9).unwrap();
    assert_eq!(sel.skipped, vec![0.1]);
    assert_eq!(sel.diagnostics.len(), 2);
    assert!(select_delta(&p, &[0.1], &default_delta_grid(), 0.9).is_err());
}
