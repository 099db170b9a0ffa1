use std::sync::Arc;

use domsde_core::coeffs::{divergence_correction, localize, smooth_cutoff, DiffusionField};
use domsde_core::domain::SpaceTimeDomain;
use domsde_core::integrate::{first_exit_time, simulate_path, StepPolicy};
use domsde_core::lyapunov::{lp_lq_norm, theorem_constants};
use domsde_core::models::{bessel_drift, make_example_611, make_random_media, RandomMediaParams, SigmaFamily};
use domsde_core::SpaceTimePoint;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exhaustion_levels_are_nested(t in 0.0f64..4.0, x in -5.0f64..5.0, y in -5.0f64..5.0, n in 1u32..5) {
        let dom = SpaceTimeDomain::punctured_plane(2, 0).unwrap();
        let inner = dom.exhaustion_level(n);
        let outer = dom.exhaustion_level(n + 1);
        if inner.contains_closed(t, &[x, y]) {
            prop_assert!(outer.contains(t, &[x, y]));
        }
        if outer.contains(t, &[x, y]) {
            prop_assert!(dom.contains_raw(t, &[x, y]));
        }
    }

    #[test]
    fn boundary_distance_ball_is_free(t in 0.01f64..3.0, x in 0.01f64..3.0, u in -1.0f64..1.0) {
        let dom = SpaceTimeDomain::half_line();
        let p = SpaceTimePoint::new(t, vec![x]);
        let r = dom.boundary_distance(&p).unwrap();
        // Any point closer than r stays inside.
        let q = (t + 0.99 * r * u, x + 0.99 * r * (1.0 - u * u).sqrt());
        prop_assert!(dom.contains_raw(q.0, &[q.1]));
    }

    #[test]
    fn cutoff_in_unit_interval(t in 0.0f64..3.0, x in -4.0f64..4.0) {
        let dom = SpaceTimeDomain::slab(1, 0, -3.0, 3.0).unwrap();
        let v = smooth_cutoff(&dom.exhaustion_level(1), &dom.exhaustion_level(2), t, &[x]);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn diffusion_is_symmetric(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        for fam in [SigmaFamily::SinShift, SigmaFamily::Rational, SigmaFamily::LogRadial] {
            let a = fam.field(2).a(0.0, &[x, y]);
            prop_assert!((&a - a.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn analytic_and_fd_divergence_agree(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let field = SigmaFamily::LogRadial.field(2);
        let p = SpaceTimePoint::new(0.0, vec![x, y]);
        let analytic = divergence_correction(&field, &p, 1e-4);
        let bare = DiffusionField::new(2, Arc::new(move |t, x: &[f64], m: &mut nalgebra::DMatrix<f64>| {
            SigmaFamily::LogRadial.field(2).sigma_into(t, x, m)
        }));
        let fd = divergence_correction(&bare, &p, 1e-4);
        for i in 0..2 {
            prop_assert!((analytic[i] - fd[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn constants_positive(eps in 0.0f64..1.999, k1 in 0.0f64..5.0, k in 0.1f64..10.0, t in 0.1f64..5.0) {
        let c = theorem_constants(eps, k1, k, t).unwrap();
        prop_assert!(c.delta > 0.0 && c.delta <= 0.5);
        prop_assert!(c.mu > 0.0 && c.nu > 0.0);
    }

    #[test]
    fn norm_scales(c in -10.0f64..10.0, p in 1.0f64..6.0, q in 1.0f64..6.0) {
        let f = |t: f64, x: &[f64]| (1.0 + t) * (x[0] - 0.3).abs().sqrt();
        let g = move |t: f64, x: &[f64]| c * f(t, x);
        let a = lp_lq_norm(&f, 0.0, 1.0, &[0.0], &[1.0], p, q, 32).unwrap().value;
        let b = lp_lq_norm(&g, 0.0, 1.0, &[0.0], &[1.0], p, q, 32).unwrap().value;
        prop_assert!((b - c.abs() * a).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn random_media_excludes_balls(x in -2.0f64..2.0, y in -2.0f64..2.0, t in 0.001f64..5.0) {
        let gamma = vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![-1.2, -0.7]];
        let m = make_random_media(&RandomMediaParams {
            points: gamma.clone(),
            rho: 0.3,
            ..RandomMediaParams::default()
        }).unwrap();
        let dist = gamma
            .iter()
            .map(|g| ((x - g[0]).powi(2) + (y - g[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(m.domain.contains_raw(t, &[x, y]), dist > 0.3);
    }

    #[test]
    fn paths_are_deterministic_and_alive_before_death(seed in 0u64..1000, index in 0u64..1000) {
        let m = bessel_drift();
        let policy = StepPolicy::default();
        let a = simulate_path(&m.coeffs, &m.domain, &m.default_start, 2.0, &policy, seed, index).unwrap();
        let b = simulate_path(&m.coeffs, &m.domain, &m.default_start, 2.0, &policy, seed, index).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.times.windows(2).all(|w| w[1] > w[0]));
        let end = a.lifetime.end();
        for k in 0..a.len() {
            prop_assert!(a.times[k] < end || (!a.is_cemetery() && a.times[k] == end));
            prop_assert!(m.domain.contains_raw(a.abs_time(k), a.state(k)));
        }
        if let Some(xi) = a.lifetime.exit_time() {
            prop_assert!(xi <= 2.0);
        }
    }

    #[test]
    fn nested_level_exit_times_increase(seed in 0u64..200) {
        let m = bessel_drift();
        let rec = simulate_path(&m.coeffs, &m.domain, &m.default_start, 3.0, &StepPolicy::default(), seed, 0).unwrap();
        let mut prev = 0.0;
        for n in 2..6 {
            let e = first_exit_time(&rec, &m.domain.exhaustion_level(n)).unwrap_or(f64::INFINITY);
            prop_assert!(e >= prev);
            prev = e;
        }
    }
}

#[test]
fn localized_coefficients_agree_on_level() {
    let m = make_example_611();
    for n in [2u32, 3] {
        let loc = localize(&m.coeffs, &m.domain, n, 0.0);
        let region = m.domain.exhaustion_level(n);
        let mut checked = 0;
        let mut i = 0u64;
        while checked < 1000 {
            i += 1;
            let t = (i as f64 * 0.618_033_988_75).fract() * n as f64;
            let x = (i as f64 * 0.414_213_562_37).fract() * (n as f64 + 1.0);
            if !region.contains(t, &[x]) {
                continue;
            }
            let p = SpaceTimePoint::new(t, vec![x]);
            assert_eq!(loc.drift(&p).unwrap(), m.coeffs.drift(&p).unwrap());
            assert_eq!(loc.diffusion().sigma(t, &[x]), m.coeffs.diffusion().sigma(t, &[x]));
            checked += 1;
        }
    }
}

#[test]
fn localized_paths_agree_until_level_exit() {
    let m = make_example_611();
    let n = 3;
    let start = SpaceTimePoint::new(0.0, vec![1.0]);
    let loc = localize(&m.coeffs, &m.domain, n, start.t);
    let region = m.domain.exhaustion_level(n);
    let policy = StepPolicy::default();
    for i in 0..200 {
        let a = simulate_path(&m.coeffs, &m.domain, &start, 1.0, &policy, 21, i).unwrap();
        let b = simulate_path(&loc, &m.domain, &start, 1.0, &policy, 21, i).unwrap();
        let mut k = 0;
        while k < a.len() && k < b.len() {
            assert_eq!(a.times[k], b.times[k]);
            assert_eq!(a.state(k), b.state(k));
            if !region.contains(a.abs_time(k), a.state(k)) {
                break;
            }
            k += 1;
        }
    }
}
