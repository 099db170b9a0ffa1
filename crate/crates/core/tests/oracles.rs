//! Statistical checks against closed-form answers.

use std::sync::Arc;

use domsde_core::coeffs::ScalarFn;
use domsde_core::estimators::*;
use domsde_core::integrate::{simulate_path, StepPolicy};
use domsde_core::lyapunov::{check_elliptic_condition, Verdict};
use domsde_core::models::*;
use domsde_core::SpaceTimePoint;
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

fn fixed(n: usize, seed: u64, dt: f64) -> McSettings {
    McSettings::new(n, seed).with_policy(StepPolicy::fixed(dt))
}

#[test]
fn brownian_terminal_mean_is_zero() {
    let m = brownian_motion(1);
    let r = terminal_moments(&m, &m.default_start, 1.0, &fixed(10_000, 1, 0.01)).unwrap();
    assert!(r[0].estimate.abs() <= 3.0 * r[0].std_error);
    assert!((r[1].estimate - 1.0).abs() <= 3.0 * r[1].std_error + 0.01);
}

#[test]
fn ou_moments() {
    let m = ornstein_uhlenbeck(1);
    let r = terminal_moments(&m, &m.default_start, 1.0, &fixed(20_000, 2, 1e-3)).unwrap();
    let mean = (-1.0f64).exp();
    let var = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!(
        (r[0].estimate - mean).abs() <= 3.0 * r[0].std_error + 0.01,
        "{:?}",
        r[0]
    );
    assert!((r[1].estimate - var).abs() <= 3.0 * r[1].std_error + 0.01, "{:?}", r[1]);
}

#[test]
fn ou_weak_order_one() {
    // The drift bias scales with the start point, which keeps it well above
    // the Monte Carlo noise.
    let m = ornstein_uhlenbeck(1);
    let start = SpaceTimePoint::new(0.0, vec![10.0]);
    let exact = 10.0 * (-1.0f64).exp();
    let bias = |dt: f64| {
        let r = terminal_moments(&m, &start, 1.0, &fixed(40_000, 7, dt)).unwrap();
        r[0].estimate - exact
    };
    let ratio = bias(0.1) / bias(0.05);
    assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn bessel_stopped_lifetime_matches_gamma_law() {
    // ξ = x₀² / (2G) with G ~ Gamma(3/2, 1), so P(ξ > T) = P(G < 1/(2T)).
    let horizon = 20.0;
    let g = Gamma::new(1.5, 1.0).unwrap();
    let survive = g.cdf(1.0 / (2.0 * horizon));
    // E[ξ ∧ T] = ∫₀ᵀ P(ξ > u) du by the midpoint rule.
    let n = 200_000;
    let h = horizon / n as f64;
    let stopped: f64 = (0..n).map(|i| g.cdf(1.0 / (2.0 * (i as f64 + 0.5) * h)) * h).sum();
    let m = bessel_drift();
    let est = mean_lifetime(&m, &m.default_start, horizon, &McSettings::new(10_000, 3)).unwrap();
    let r = &est.report;
    assert!(r.valid);
    let frac = r.extras["exit_fraction"];
    assert!((frac - (1.0 - survive)).abs() <= 3.0 * r.extras["exit_fraction_se"] + 1e-3);
    let mean = r.extras["mean_stopped_lifetime"];
    let se = r.extras["mean_stopped_lifetime_se"];
    assert!(
        (mean - stopped).abs() <= 3.0 * se + 0.02,
        "{mean} vs {stopped} (se {se})"
    );
}

#[test]
fn girsanov_weights_have_mean_one() {
    let m = girsanov_toy(1, 0.7);
    let (_, b2) = girsanov_pair(0.7);
    let out = girsanov_expectation(
        &m,
        &*b2,
        &|x: &[f64]| x[0],
        &m.default_start,
        1.0,
        &fixed(10_000, 4, 0.01),
    )
    .unwrap();
    let w = &out.weights.report;
    assert!((w.estimate - 1.0).abs() <= 3.0 * w.std_error, "{w:?}");
    // Under the shifted drift E[X_T] = θT.
    let f = &out.reweighted.report;
    assert!((f.estimate - 0.7).abs() <= 3.0 * f.std_error, "{f:?}");
    assert!(w.effective_sample_size.unwrap() <= 10_000.0);
}

#[test]
fn girsanov_reweighting_matches_direct_ou() {
    let bm = brownian_motion(1);
    let ou = ornstein_uhlenbeck(1);
    let start = SpaceTimePoint::new(0.0, vec![1.0]);
    let b2 = |_: f64, x: &[f64], out: &mut [f64]| out[0] = -x[0];
    let s = fixed(10_000, 5, 0.01);
    let rew = girsanov_expectation(&bm, &b2, &|x: &[f64]| x[0], &start, 0.5, &s).unwrap();
    let direct = terminal_moments(&ou, &start, 0.5, &fixed(10_000, 6, 0.01)).unwrap();
    let (a, b) = (&rew.reweighted.report, &direct[0]);
    let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!(
        (a.estimate - b.estimate).abs() <= 3.0 * combined,
        "{} vs {}",
        a.estimate,
        b.estimate
    );
}

#[test]
fn krylov_numerator_matches_gaussian_quadrature() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = 100_000;
    let h = 1.0 / n as f64;
    let oracle: f64 = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) * h;
            (2.0 * normal.cdf(1.0 / t.sqrt()) - 1.0) * h
        })
        .sum();
    let m = brownian_motion(1);
    let ind: ScalarFn = Arc::new(|t: f64, x: &[f64]| if t < 1.0 && x[0].abs() < 1.0 { 1.0 } else { 0.0 });
    let fam = vec![KrylovFunction {
        name: "box".into(),
        f: ind,
        lo: vec![-1.0],
        hi: vec![1.0],
    }];
    let out = krylov_ratio(
        &m,
        &fam,
        &m.default_start,
        0.0,
        1.0,
        4.0,
        4.0,
        64,
        &fixed(10_000, 8, 1e-3),
    )
    .unwrap();
    let r = &out.reports[0];
    let num = r.extras["numerator"];
    assert!(
        (num - oracle).abs() <= 3.0 * r.extras["numerator_se"],
        "{num} vs {oracle}"
    );
    assert!((r.extras["norm"] - 2f64.powf(0.25)).abs() < 1e-12);
}

#[test]
fn exp_functional_ball_indicator_refines() {
    let m = brownian_motion(1);
    let g: ScalarFn = Arc::new(|_, x: &[f64]| if x[0].abs() < 0.5 { 1.0 } else { 0.0 });
    let coarse = exp_functional(&m, &g, 1.0, &m.default_start, 1.0, &fixed(5_000, 9, 1e-2)).unwrap();
    let fine = exp_functional(&m, &g, 1.0, &m.default_start, 1.0, &fixed(10_000, 10, 1e-3)).unwrap();
    let (a, b) = (&coarse.report, &fine.report);
    let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.estimate - b.estimate).abs() <= 3.0 * combined);
    assert!(b.estimate <= 1f64.exp());
}

#[test]
fn sup_exp_ou_matches_finer_reference() {
    let m = ornstein_uhlenbeck(1);
    let c = domsde_core::lyapunov::TheoremConstants {
        mu: 0.1,
        nu: 0.1,
        ..domsde_core::lyapunov::theorem_constants(0.0, 0.0, 1.0, 1.0).unwrap()
    };
    let start = SpaceTimePoint::new(0.0, vec![0.0]);
    let base = sup_exp_moment(&m, &c, &start, 1.0, &fixed(2_000, 11, 1e-2)).unwrap();
    let fine = sup_exp_moment(&m, &c, &start, 1.0, &fixed(20_000, 12, 1e-3)).unwrap();
    let (a, b) = (&base.report, &fine.report);
    let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!(
        (a.estimate - b.estimate).abs() <= 3.0 * combined,
        "{} vs {}",
        a.estimate,
        b.estimate
    );
}

#[test]
fn sin_family_sup_moment_is_stable() {
    let m = make_example_62(0.5).unwrap();
    let c = domsde_core::lyapunov::theorem_constants(1.5, 0.0, 9.0, 1.0).unwrap();
    let s1 = McSettings::new(1_000, 13);
    let s2 = McSettings::new(2_000, 13);
    let a = sup_exp_moment(&m, &c, &m.default_start, 1.0, &s1).unwrap().report;
    let b = sup_exp_moment(&m, &c, &m.default_start, 1.0, &s2).unwrap().report;
    assert!(a.estimate.is_finite() && b.estimate.is_finite());
    let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.estimate - b.estimate).abs() <= 2.0 * combined + 1e-12);
}

#[test]
fn sin_family_elliptic_condition_with_grid_constant() {
    let m = make_example_62(0.5).unwrap();
    let region = m.domain.exhaustion_level(2);
    let pot = m.potential().unwrap();
    let diff = m.coeffs.diffusion();
    let probe = domsde_core::coeffs::LyapunovData::constant_h(0.0, 1.5, 0.0).unwrap();
    let scan = check_elliptic_condition(pot, diff, &m.domain, &region, 64, 1e-3, &probe).unwrap();
    let c = scan.tightest_constant.unwrap();
    let lyap = domsde_core::coeffs::LyapunovData::constant_h(c, 1.5, 0.0).unwrap();
    let cert = check_elliptic_condition(pot, diff, &m.domain, &region, 64, 1e-3, &lyap).unwrap();
    assert_eq!(cert.verdict, Verdict::Pass);
    let half = check_elliptic_condition(pot, diff, &m.domain, &region, 64, 5e-4, &lyap).unwrap();
    assert_eq!(half.verdict, Verdict::Pass);
    let c_half = half.tightest_constant.unwrap();
    assert!((c_half - c).abs() < 0.05 * c.abs());
    // The builtin constant is global, so it also passes.
    let builtin = check_elliptic_condition(pot, diff, &m.domain, &region, 64, 1e-3, m.lyapunov().unwrap()).unwrap();
    assert_eq!(builtin.verdict, Verdict::Pass);
}

#[test]
fn sin_family_non_explosion_refines() {
    let m = make_example_62(0.5).unwrap();
    let mut prev: Option<(f64, f64)> = None;
    for dt in [1e-2, 1e-3] {
        let s = McSettings::new(1_000, 14).with_policy(StepPolicy::default().with_dt_max(dt));
        let r = explosion_probability(&m, &m.default_start, 1.0, &s).unwrap().report;
        assert!(r.valid);
        if let Some((p, se)) = prev {
            assert!(r.estimate <= p + 2.0 * (se * se + r.std_error * r.std_error).sqrt());
        }
        prev = Some((r.estimate, r.std_error));
    }
}

#[test]
fn run_moment_stable_under_doubling() {
    let m = ornstein_uhlenbeck(1);
    let a = run_moment(&m, &m.default_start, 1.0, 1, 0.25, &fixed(2_500, 15, 1e-2))
        .unwrap()
        .report;
    let b = run_moment(&m, &m.default_start, 1.0, 1, 0.25, &fixed(5_000, 15, 1e-2))
        .unwrap()
        .report;
    let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.estimate - b.estimate).abs() <= 2.0 * combined + 1e-12);
    assert!(b.extras["max_runs"].is_finite());
}

#[test]
fn bessel_drift_is_killed_often() {
    let m = bessel_drift();
    let rec = simulate_path(
        &m.coeffs,
        &m.domain,
        &m.default_start,
        4.0,
        &StepPolicy::default(),
        1,
        0,
    )
    .unwrap();
    assert!(rec.is_resolved());
    let p = explosion_probability(&m, &m.default_start, 4.0, &McSettings::new(2_000, 2))
        .unwrap()
        .report;
    // P(ξ <= 4) = 1 - P(G < 1/8) for G ~ Gamma(3/2).
    let oracle = 1.0 - Gamma::new(1.5, 1.0).unwrap().cdf(0.125);
    assert!(
        (p.estimate - oracle).abs() <= 3.0 * p.std_error + 1e-3,
        "{} vs {oracle}",
        p.estimate
    );
}
