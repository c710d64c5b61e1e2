use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use windcast::container::Container;
use windcast::linalg::ridge_solve;
use windcast::reservoir::*;
use windcast::rng::rng_from;

fn small_hp(n_h: usize) -> EsnHyperParams {
    let mut hp = EsnHyperParams::single(n_h);
    hp.layers[0].pi_in = 0.3;
    hp.layers[0].eta_in = 0.2;
    hp.layers[0].pi_w = 0.2;
    hp.lambda = 1e-3;
    hp.burn_in = Some(20);
    hp
}

fn ar1(t: usize, n: usize, phi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from(seed);
    let mut y = DMatrix::zeros(t, n);
    for r in 1..t {
        for c in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            y[(r, c)] = phi * y[(r - 1, c)] + e;
        }
    }
    y
}

#[test]
fn zero_input_weights_keep_zero_state() {
    let mut hp = small_hp(10);
    hp.layers[0].pi_in = 0.0;
    let y = ar1(80, 2, 0.5, 1);
    let model = fit_esn(&hp, &y, 0).unwrap();
    let x = DMatrix::from_fn(30, 2, |r, c| (r + c) as f64);
    let raw = model.members[0].run_raw(&hp, &x, None).unwrap();
    assert!(raw.iter().all(|v| *v == 0.0));
}

#[test]
fn scalar_loop_oracle() {
    let mut hp = small_hp(3);
    hp.layers[0].pi_w = 1.0;
    hp.layers[0].pi_in = 1.0;
    hp.alpha = 0.7;
    hp.burn_in = Some(2);
    let y = ar1(12, 2, 0.3, 2);
    let model = fit_esn(&hp, &y, 5).unwrap();
    let member = &model.members[0];
    let lw = &member.reservoir.layers[0];
    let w = lw.w.to_dense();
    let win = lw.w_in.to_dense();
    let inputs = DMatrix::from_fn(5, 2, |r, c| ((r * 2 + c) as f64 * 0.37).sin());
    let raw = member.run_raw(&hp, &inputs, None).unwrap();
    let mut h = [0.0f64; 3];
    for t in 0..5 {
        let mut next = [0.0; 3];
        for i in 0..3 {
            let mut s = 0.0;
            for j in 0..3 {
                s += lw.scale * w[(i, j)] * h[j];
            }
            for j in 0..2 {
                s += win[(i, j)] * inputs[(t, j)];
            }
            next[i] = (1.0 - hp.alpha) * h[i] + hp.alpha * s.tanh();
        }
        h = next;
        for i in 0..3 {
            assert!((raw[(t, i)] - h[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn leak_one_single_layer_recursion() {
    let hp = small_hp(15);
    let y = ar1(60, 3, 0.3, 3);
    let model = fit_esn(&hp, &y, 1).unwrap();
    let m = &model.members[0];
    let inputs = DMatrix::from_fn(10, 3, |r, c| (r as f64 - c as f64) * 0.1);
    let raw = m.run_raw(&hp, &inputs, None).unwrap();
    // Re-running from the state at t = 4 reproduces the tail.
    let h4: Vec<f64> = raw.row(4).iter().copied().collect();
    let tail = m.run_raw(&hp, &inputs.rows(5, 5).into_owned(), Some(&[h4])).unwrap();
    for r in 0..5 {
        for c in 0..15 {
            assert_eq!(tail[(r, c)], raw[(r + 5, c)]);
        }
    }
}

#[test]
fn ridge_hand_case_and_orthonormal() {
    let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
    let y = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
    let b = ridge_solve(&h, &y, 1.0).unwrap();
    assert!((b[0] - 0.5).abs() < 1e-15 && (b[1] - 0.8).abs() < 1e-15);
    let q = DMatrix::<f64>::identity(4, 4);
    let y = DMatrix::from_fn(4, 2, |r, c| (r * 3 + c) as f64);
    let b = ridge_solve(&q, &y, 0.0).unwrap();
    assert!((b - q.transpose() * &y).abs().max() < 1e-14);
}

#[test]
fn ridge_matches_explicit_inverse() {
    let mut rng = rng_from(77);
    for _ in 0..20 {
        let h = DMatrix::from_fn(50, 20, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(50, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lambda = 0.01 + rng.random::<f64>();
        let b = ridge_solve(&h, &y, lambda).unwrap();
        let gram = h.transpose() * &h + DMatrix::identity(20, 20) * lambda;
        let oracle = gram.clone().try_inverse().unwrap() * h.transpose() * &y;
        assert!((&b - &oracle).abs().max() < 1e-10);
        let resid = gram * &b - h.transpose() * &y;
        assert!(resid.abs().max() < 1e-8);
    }
}

#[test]
fn training_states_are_standardized() {
    let hp = small_hp(40);
    let y = ar1(300, 4, 0.7, 4);
    let model = fit_esn(&hp, &y, 2).unwrap();
    let m = &model.members[0];
    let burn = hp.burn_in();
    let inputs = DMatrix::from_fn(300, 4, |r, c| if r == 0 { 0.0 } else { y[(r - 1, c)] });
    let st = m.run_states(&hp, &inputs, None).unwrap();
    let d = st.design();
    let rows = d.rows(burn, 300 - burn);
    for c in 0..d.ncols() {
        let col = rows.column(c);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() as f64 - 1.0)).sqrt();
        assert!(mean.abs() < 1e-8, "col {c} mean {mean}");
        if m.standardizer.scale[c] != 1.0 {
            assert!((sd - 1.0).abs() < 1e-6, "col {c} sd {sd}");
        }
    }
}

#[test]
fn echo_state_contraction() {
    let mut ok = 0;
    for seed in 0..20 {
        let mut hp = small_hp(50);
        hp.layers[0].nu = 0.9;
        hp.alpha = 1.0;
        let y = ar1(80, 3, 0.5, 100 + seed);
        let model = fit_esn(&hp, &y, seed).unwrap();
        let m = &model.members[0];
        let mut rng = rng_from(seed);
        let inputs = DMatrix::from_fn(500, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h0a: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let h0b: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let a = m.run_raw(&hp, &inputs, Some(&[h0a.clone()])).unwrap();
        let b = m.run_raw(&hp, &inputs, Some(&[h0b.clone()])).unwrap();
        let d0: f64 = h0a.iter().zip(&h0b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let dist = |r: usize| (a.row(r) - b.row(r)).norm();
        let mut prev = d0;
        for r in 0..500 {
            let d = dist(r);
            assert!(d <= d0 + 1e-12);
            prev = prev.min(d);
        }
        if dist(499) < 1e-6 {
            ok += 1;
        }
    }
    assert!(ok >= 19, "{ok} of 20 converged");
}

#[test]
fn constant_history_is_reproduced() {
    let hp = small_hp(20);
    let y = DMatrix::from_fn(150, 3, |_, c| 1.0 + c as f64);
    let model = fit_esn(&hp, &y.rows(0, 100).into_owned(), 0).unwrap();
    let sets = model.forecast(&y, 3).unwrap();
    for s in &sets {
        for (r, t) in s.targets().into_iter().enumerate() {
            for c in 0..3 {
                assert!((s.point[(r, c)] - y[(t, c)]).abs() < 1e-8);
            }
        }
    }
    let ahead = model.forecast_ahead(&y, 2).unwrap();
    assert!((ahead[(1, 2)] - 3.0).abs() < 1e-8);
}

#[test]
fn batch_window_degeneracy() {
    let mut hp = small_hp(30);
    hp.ensemble = 2;
    let y = ar1(260, 3, 0.8, 5);
    let model = fit_esn(&hp, &y.rows(0, 160).into_owned(), 3).unwrap();
    let plain = model.forecast(&y, 3).unwrap();
    let n_origins = 260 - 160;
    let same = model.forecast_batched(&y, 3, n_origins).unwrap();
    let longer = model.forecast_batched(&y, 3, 10_000).unwrap();
    for a in 0..3 {
        assert_eq!(plain[a], same[a]);
        assert_eq!(plain[a], longer[a]);
    }
    for b in [1usize, 25] {
        let batched = model.forecast_batched(&y, 3, b).unwrap();
        for a in 0..3 {
            let p = &plain[a].point;
            let q = &batched[a].point;
            for r in 0..p.nrows() {
                let equal = p.row(r) == q.row(r);
                if r < b {
                    assert!(equal, "lead {} origin {r} differs before the first boundary", a + 1);
                } else if r == b {
                    assert!(!equal, "lead {} origin {r} should use the refitted readout", a + 1);
                }
            }
        }
    }
}

#[test]
fn deterministic_and_round_trip() {
    let mut hp = small_hp(25);
    hp.ensemble = 3;
    let y = ar1(200, 2, 0.6, 6);
    let train = y.rows(0, 150).into_owned();
    let a = fit_esn(&hp, &train, 9).unwrap();
    let b = fit_esn(&hp, &train, 9).unwrap();
    assert_eq!(a, b);
    let fa = a.forecast(&y, 2).unwrap();
    assert_eq!(fa, b.forecast(&y, 2).unwrap());
    let bytes = a.to_container().to_bytes();
    let c = EsnModel::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(c, a);
    assert_eq!(c.forecast(&y, 2).unwrap(), fa);
    // members differ from each other
    assert_ne!(fa[0].ensemble[0], fa[0].ensemble[1]);
}

#[test]
fn deep_network_runs_and_round_trips() {
    let mut hp = small_hp(30);
    let mut second = hp.layers[0];
    second.n_h = 20;
    second.n_reduced = 20;
    hp.layers[0].n_reduced = 8;
    hp.layers.push(second);
    assert_eq!(hp.state_width(), 28);
    let y = ar1(200, 3, 0.6, 8);
    let model = fit_esn(&hp, &y.rows(0, 150).into_owned(), 1).unwrap();
    assert_eq!(model.members[0].pcas.len(), 1);
    let f = model.forecast(&y, 2).unwrap();
    assert!(f[0].point.iter().all(|v| v.is_finite()));
    let back = EsnModel::from_container(&model.to_container()).unwrap();
    assert_eq!(back.forecast(&y, 2).unwrap(), f);
}

#[test]
fn insufficient_history_and_shape_errors() {
    let hp = small_hp(10);
    let y = ar1(15, 2, 0.5, 9);
    assert!(fit_esn(&hp, &y, 0).is_err());
    let y = ar1(100, 2, 0.5, 9);
    let model = fit_esn(&hp, &y, 0).unwrap();
    assert!(model.forecast(&y, 1).is_err());
    assert!(model.forecast(&ar1(120, 3, 0.5, 1), 1).is_err());
}

#[test]
fn tune_prefers_lagged_inputs() {
    let y = ar1(400, 3, 0.9, 10);
    let train = y.rows(0, 300).into_owned();
    let valid = y.rows(300, 100).into_owned();
    let mut with = small_hp(30);
    with.m = 1;
    let mut without = with.clone();
    without.m = 0;
    let (best, scores) = tune(&[without.clone(), with.clone()], &train, &valid, 1, 0).unwrap();
    assert_eq!(best.m, 1);
    assert!(scores[1] < scores[0]);
    let (single, _) = tune(&[without.clone()], &train, &valid, 1, 0).unwrap();
    assert_eq!(single, without);
    assert!(tune(&[], &train, &valid, 1, 0).is_err());
}

#[test]
fn lambda_zero_rank_deficient_readout_errors() {
    let mut hp = small_hp(10);
    hp.lambda = 0.0;
    hp.layers[0].pi_in = 0.0;
    let y = ar1(100, 2, 0.5, 11);
    let err = fit_esn(&hp, &y, 0).unwrap_err();
    assert!(err.to_string().contains("lambda > 0"), "{err}");
}
