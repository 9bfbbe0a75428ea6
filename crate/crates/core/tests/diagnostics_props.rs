mod common;

use common::*;
use ldqn::diagnostics::{
    check_condition13, condition13_threshold, estimate_assumption2, fit_epoch_rate, literature_lambda_bounds,
    stepsize_window, theoretical_rate, RateVariant, SpectrumBounds,
};
use ldqn::simulator::{EpochIndex, Trace, TraceRow};
use ldqn::{DenseMatrix, Error};
use proptest::prelude::*;

fn sqrt_spd(h: &DenseMatrix) -> DenseMatrix {
    let eig = h.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(f64::sqrt);
    &eig.eigenvectors * DenseMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

fn trace_from(dist: &[f64]) -> Trace {
    Trace {
        rows: dist
            .iter()
            .enumerate()
            .map(|(t, &d)| TraceRow {
                t,
                epoch: 0,
                virtual_time: t as f64,
                worker_id: (t > 0).then_some(0),
                suboptimality: None,
                grad_norm: 0.0,
                dist_to_opt: Some(d),
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quality_scales_inversely_with_the_estimate(seed in any::<u64>(), d in 1usize..8) {
        let mut r = rng(seed);
        let h = random_spd(d, 0.5, 5.0, &mut r);
        let b = random_spd(d, 0.5, 5.0, &mut r);
        let base = estimate_assumption2(&b, &h).unwrap();
        prop_assert!(base.eps_d > 0.0 && base.eps_d <= base.eps_u * (1.0 + 1e-12));
        for c in [0.5, 2.0, 10.0] {
            let q = estimate_assumption2(&(&b * c), &h).unwrap();
            prop_assert!((q.eps_d - base.eps_d / c).abs() <= 1e-9 * base.eps_d / c);
            prop_assert!((q.eps_u - base.eps_u / c).abs() <= 1e-9 * base.eps_u / c);
            prop_assert!((q.eps - base.eps).abs() <= 1e-9 * base.eps);
        }
    }

    #[test]
    fn sandwiched_estimates_have_bounded_ratio(seed in any::<u64>(), d in 1usize..8, c in 0.0f64..3.0) {
        // B = H^{1/2} M H^{1/2} with spec(M) ⊂ [1/(1+c), 1+c] sits between
        // H/(1+c) and (1+c)H.
        let mut r = rng(seed);
        let h = random_spd(d, 0.3, 6.0, &mut r);
        let m = random_spd(d, 1.0 / (1.0 + c), 1.0 + c, &mut r);
        let root = sqrt_spd(&h);
        let b = &root * m * &root;
        let b = (&b + b.transpose()) * 0.5;
        let q = estimate_assumption2(&b, &h).unwrap();
        prop_assert!(q.eps <= (1.0 + c).powi(2) * (1.0 + 1e-8), "eps {} c {}", q.eps, c);
        prop_assert!(q.eps_d >= 1.0 / (1.0 + c) * (1.0 - 1e-8));
    }

    #[test]
    fn window_is_nonempty_exactly_when_admissible(eps in 1.0f64..3.0, kappa in 1.0f64..1e4, eps_d in 0.05f64..5.0) {
        let cond = check_condition13(eps, kappa);
        let w = stepsize_window(eps_d, eps * eps_d, kappa);
        if cond.holds {
            prop_assert!(!w.is_empty());
            let mid = w.midpoint().unwrap();
            prop_assert!(w.contains(mid));
        }
        if eps > cond.threshold * (1.0 + 1e-9) {
            prop_assert!(w.is_empty());
        }
    }

    #[test]
    fn exact_estimates_contract_inside_the_window(n in 1usize..9, kappa in 1.0f64..20.0, frac in 0.05f64..0.95) {
        let (mu, l) = (1.0, kappa);
        let w = stepsize_window(1.0, 1.0, kappa);
        let eta = w.lo + frac * (w.hi - w.lo);
        // Exact Hessian estimates on a single-component problem.
        let bounds = SpectrumBounds { lambda_d: l, lambda_u: l };
        let rho = theoretical_rate(n, bounds, eta, mu, l, RateVariant::Derivation);
        let expected = (n as f64).sqrt() / n as f64 * (1.0 - eta).abs().max((1.0 - eta * mu / l).abs());
        prop_assert!((rho - expected).abs() <= 1e-12);
        prop_assert!(rho < 1.0);
    }
}

#[test]
fn threshold_values_and_limits() {
    assert!((condition13_threshold(1.0) - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    assert!((condition13_threshold(2.0) - 1.780776).abs() < 1e-6);
    let far = condition13_threshold(1e9);
    assert!(far > 1.0 && far - 1.0 < 1e-8);
    assert!(!check_condition13(1.0 + 1e-6, 1e9).holds);
    assert!(check_condition13(1.0, 1e9).holds);
}

#[test]
fn window_endpoints() {
    let w = stepsize_window(1.0, 1.0, 2.0);
    assert!((w.lo - 0.5).abs() < 1e-15 && (w.hi - 1.0).abs() < 1e-15);
    let w = stepsize_window(1.0, 1.0, 1.0);
    assert!(w.lo.abs() < 1e-15 && (w.hi - 1.0).abs() < 1e-15);
    assert!(stepsize_window(1.0, 3.0, 10.0).is_empty());
}

#[test]
fn rate_variants_differ_only_in_the_mu_term() {
    let b = SpectrumBounds { lambda_d: 1.0, lambda_u: 4.0 };
    let derivation = theoretical_rate(2, b, 0.1, 1.0, 2.0, RateVariant::Derivation);
    let displayed = theoretical_rate(2, b, 0.1, 1.0, 2.0, RateVariant::Displayed);
    let pre = 2f64.sqrt() * 4.0 / 5.0;
    assert!((derivation - pre * 0.975f64.max(0.8)).abs() < 1e-12);
    assert!((displayed - pre * 0.9f64.max(0.8)).abs() < 1e-12);
}

#[test]
fn literature_bounds_stay_finite_in_log_space() {
    let b = literature_lambda_bounds(20, 1000, 1e-3, 10.0).unwrap();
    assert!((b.ln_lambda_u - (1020.0f64 * 10.0).ln()).abs() < 1e-9);
    assert!(b.ln_lambda_d.is_finite() && b.ln_lambda_d < -1e4);
    assert!(b.to_bounds().is_none());
    let small = literature_lambda_bounds(1, 1, 1.0, 1.0).unwrap().to_bounds().unwrap();
    assert!((small.lambda_u - 2.0).abs() < 1e-12 && (small.lambda_d - 0.5).abs() < 1e-12);
}

#[test]
fn stationary_trace_fits_zero_rate() {
    let trace = trace_from(&[0.0; 12]);
    let epochs = EpochIndex { starts: vec![0, 3, 6, 9] };
    let report = fit_epoch_rate(&trace, &epochs, Some(0.5), None).unwrap();
    assert_eq!(report.rho_fitted, 0.0);
    assert!(!report.violation);
}

#[test]
fn geometric_trace_recovers_its_rate() {
    // Rows E_m + 1 ..= E_{m+1} sit at 0.5^m.
    let dist: Vec<f64> = (0..=12).map(|t| if t == 0 { 1.0 } else { 0.5f64.powi((t - 1) / 3 + 1) }).collect();
    let epochs = EpochIndex { starts: vec![0, 3, 6, 9, 12] };
    let report = fit_epoch_rate(&trace_from(&dist), &epochs, Some(0.5), None).unwrap();
    assert_eq!(report.epochs_used, 4);
    assert!((report.rho_fitted - 0.5).abs() < 1e-12);
    assert!(!report.violation);
    let tight = fit_epoch_rate(&trace_from(&dist), &epochs, Some(0.3), None).unwrap();
    assert!(tight.violation);
}

#[test]
fn diverging_trace_is_flagged() {
    let dist: Vec<f64> = (0..=9).map(|t| 1.5f64.powi(t)).collect();
    let epochs = EpochIndex { starts: vec![0, 3, 6, 9] };
    let report = fit_epoch_rate(&trace_from(&dist), &epochs, None, None).unwrap();
    assert!(report.rho_fitted > 1.0);
    assert!(report.violation);
}

#[test]
fn short_traces_need_three_epochs() {
    let epochs = EpochIndex { starts: vec![0, 3, 6] };
    let err = fit_epoch_rate(&trace_from(&[1.0; 7]), &epochs, None, None).unwrap_err();
    assert!(matches!(err, Error::InsufficientEpochs { needed: 3, got: 2 }));
}
