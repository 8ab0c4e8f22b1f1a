use vlstm_core::kernels::{approx_error, ema, fit_exp_sum, geometric_timescales, ExpSumKernel};

/// Sup relative error on a much denser grid than the fitter uses, with the
/// kernel summed by hand.
fn dense_error(k: &ExpSumKernel, alpha: f64) -> f64 {
    let (lo, hi) = k.valid_range();
    let m = 20_000;
    let eval = |x: f64| -> f64 {
        k.weights()
            .iter()
            .zip(k.timescales())
            .map(|(w, t)| w * (-x / t).exp())
            .sum()
    };
    let (k0, t0) = (eval(lo), lo.powf(-alpha));
    (0..=m)
        .map(|i| {
            let x = lo * (hi / lo).powf(i as f64 / m as f64);
            let t = x.powf(-alpha) / t0;
            ((eval(x) / k0) - t).abs() / t
        })
        .fold(0.0, f64::max)
}

#[test]
fn four_exponentials_cover_three_decades() {
    for alpha in [0.3, 0.5, 0.8] {
        let fit = fit_exp_sum(alpha, 1.0, 1000.0, 4).unwrap();
        let dense = dense_error(&fit.kernel, alpha);
        assert!(dense <= 0.10, "alpha {alpha}: {dense}");
        assert!((dense - fit.sup_error).abs() <= 0.01, "grid and dense disagree: {dense} vs {}", fit.sup_error);
        assert_eq!(fit.sup_error, approx_error(&fit.kernel));
        assert!((fit.kernel.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fit.kernel.timescales().windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn more_terms_never_hurt() {
    let e: Vec<f64> = (1..=5).map(|n| fit_exp_sum(0.5, 1.0, 1000.0, n).unwrap().sup_error).collect();
    for w in e.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{e:?}");
    }
}

#[test]
fn geometric_kernel_is_a_usable_starting_point() {
    let k = geometric_timescales(6.0, 4, 0.5).unwrap();
    assert_eq!(k.valid_range(), (6.0, 1296.0));
    let fit = fit_exp_sum(0.5, 6.0, 1296.0, 4).unwrap();
    assert!(fit.sup_error <= approx_error(&k));
}

#[test]
fn ema_of_a_step_approaches_the_step() {
    let e = ema(&[1.0; 200], 0.05, 0.0).unwrap();
    assert!((e[0] - 0.05).abs() < 1e-15);
    assert!((e[199] - (1.0 - 0.95f64.powi(200))).abs() < 1e-12);
    assert_eq!(ema(&[3.0, -1.0], 1.0, 7.0).unwrap(), vec![3.0, -1.0]);
    assert_eq!(ema(&[3.0, -1.0], 0.0, 7.0).unwrap(), vec![7.0, 7.0]);
}
