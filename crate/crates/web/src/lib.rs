//! Browser bindings. Every export returns a JSON string; the page in `www/`
//! draws it on a canvas.

use domsde_core::estimators::{mean_lifetime, McSettings};
use domsde_core::integrate::{map_paths, StepPolicy};
use domsde_core::lyapunov::{check_elliptic_condition, elliptic_lhs, LyapunovCertificate};
use domsde_core::models::{make_example_62, ModelConfig, ModelSpec};
use domsde_core::SpaceTimePoint;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Points kept per path when drawing.
const MAX_POINTS: usize = 400;

fn model(name: &str) -> Result<ModelSpec, String> {
    let cfg = ModelConfig::from_name(name).ok_or_else(|| format!("unknown model {name}"))?;
    cfg.build().map_err(|e| e.to_string())
}

fn start_point(m: &ModelSpec, start: &[f64]) -> Result<SpaceTimePoint, String> {
    let x = if start.is_empty() {
        m.default_start.x.clone()
    } else if start.len() == m.dim {
        start.to_vec()
    } else {
        return Err(format!("{} needs a start with {} coordinates", m.name, m.dim));
    };
    let p = SpaceTimePoint::new(m.default_start.t, x);
    if m.domain.contains_raw(p.t, &p.x) {
        Ok(p)
    } else {
        Err(format!("start {:?} lies outside the domain of {}", p.x, m.name))
    }
}

fn policy(dt_max: f64) -> Result<StepPolicy, String> {
    let p = StepPolicy::default().with_dt_max(dt_max);
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}

#[derive(Serialize)]
struct DrawnPath {
    t: Vec<f64>,
    /// Row-major, `dim` values per time.
    x: Vec<f64>,
    exit: Option<f64>,
    unresolved: bool,
}

#[derive(Serialize)]
struct PathsOut {
    model: String,
    dim: usize,
    horizon: f64,
    paths: Vec<DrawnPath>,
}

/// Simulates paths and thins each to at most a few hundred points.
pub fn sample_paths(
    model_name: &str,
    start: &[f64],
    n_paths: u32,
    horizon: f64,
    dt_max: f64,
    seed: u32,
) -> Result<String, String> {
    let m = model(model_name)?;
    let start = start_point(&m, start)?;
    let policy = policy(dt_max)?;
    let paths = map_paths(
        &m.coeffs,
        &m.domain,
        &start,
        horizon,
        &policy,
        seed as u64,
        n_paths as usize,
        1,
        |rec| {
            let stride = rec.len().div_ceil(MAX_POINTS).max(1);
            let mut t = Vec::new();
            let mut x = Vec::new();
            for k in (0..rec.len()).filter(|k| k % stride == 0 || k + 1 == rec.len()) {
                t.push(rec.abs_time(k));
                x.extend_from_slice(rec.state(k));
            }
            DrawnPath {
                t,
                x,
                exit: rec.lifetime.exit_time().map(|xi| start.t + xi),
                unresolved: rec.unresolved.is_some(),
            }
        },
    )
    .map_err(|e| e.to_string())?;
    let out = PathsOut {
        model: m.name,
        dim: m.dim,
        horizon,
        paths,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct HistogramOut {
    model: String,
    edges: Vec<f64>,
    counts: Vec<u64>,
    survived: u64,
    unresolved: usize,
    exit_fraction: f64,
    mean_exited: Option<f64>,
    mean_exited_se: f64,
}

/// Histogram of the observed lifetimes of paths killed before `horizon`.
pub fn histogram(
    model_name: &str,
    start: &[f64],
    n_paths: u32,
    horizon: f64,
    bins: u32,
    seed: u32,
) -> Result<String, String> {
    if bins == 0 {
        return Err("need at least one bin".into());
    }
    let m = model(model_name)?;
    let start = start_point(&m, start)?;
    let s = McSettings::new(n_paths as usize, seed as u64).with_workers(1);
    let est = mean_lifetime(&m, &start, horizon, &s).map_err(|e| e.to_string())?;
    let width = horizon / bins as f64;
    let mut counts = vec![0u64; bins as usize];
    let mut survived = 0;
    for end in est.per_path.iter().flatten() {
        if *end >= horizon {
            survived += 1;
        } else {
            let b = ((end / width) as usize).min(bins as usize - 1);
            counts[b] += 1;
        }
    }
    let r = &est.report;
    let out = HistogramOut {
        model: m.name,
        edges: (0..=bins).map(|i| i as f64 * width).collect(),
        counts,
        survived,
        unresolved: r.n_unresolved,
        exit_fraction: r.extras.get("exit_fraction").copied().unwrap_or(f64::NAN),
        mean_exited: r.estimate.is_finite().then_some(r.estimate),
        mean_exited_se: r.std_error,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ScanOut {
    delta: f64,
    constant: f64,
    epsilon: f64,
    /// Points where `LHS·e^{-εφ}` was sampled, and its values.
    x: Vec<f64>,
    ratio: Vec<f64>,
    certificate: LyapunovCertificate,
}

/// Elliptic Lyapunov inequality for the `sin`-diffusion family with
/// `φ = x^{-δ} + x`: the profile `LHS·e^{-εφ}` against `h ≡ C`, plus the
/// certificate on the second exhaustion level.
pub fn scan(delta: f64, grid: u32, moll_width: f64) -> Result<String, String> {
    let m = make_example_62(delta).map_err(|e| e.to_string())?;
    let pot = m.potential().ok_or("model has no potential")?;
    let lyap = m.lyapunov().ok_or("model has no Lyapunov data")?;
    let diff = m.coeffs.diffusion();
    let region = m.domain.exhaustion_level(2);
    let certificate = check_elliptic_condition(pot, diff, &m.domain, &region, grid as usize, moll_width, lyap)
        .map_err(|e| e.to_string())?;
    let n = 300;
    let (lo, hi) = (0.02f64.ln(), 10f64.ln());
    let mut xs = Vec::with_capacity(n);
    let mut ratio = Vec::with_capacity(n);
    for i in 0..n {
        let x = (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp();
        let h = moll_width.min(x / 4.0);
        let lhs = elliptic_lhs(pot, diff, 1.0, &[x], h).map_err(|e| e.to_string())?;
        xs.push(x);
        ratio.push(lhs * (-lyap.epsilon * pot.phi(1.0, &[x])).exp());
    }
    let out = ScanOut {
        delta,
        constant: (lyap.h)(1.0, &[1.0]),
        epsilon: lyap.epsilon,
        x: xs,
        ratio,
        certificate,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Model names accepted by the other exports.
#[wasm_bindgen]
pub fn model_names() -> String {
    serde_json::to_string(&ModelConfig::NAMES).unwrap_or_default()
}

#[wasm_bindgen]
pub fn simulate_paths(
    model_name: &str,
    start: Vec<f64>,
    n_paths: u32,
    horizon: f64,
    dt_max: f64,
    seed: u32,
) -> Result<String, String> {
    sample_paths(model_name, &start, n_paths, horizon, dt_max, seed)
}

#[wasm_bindgen]
pub fn lifetime_histogram(
    model_name: &str,
    start: Vec<f64>,
    n_paths: u32,
    horizon: f64,
    bins: u32,
    seed: u32,
) -> Result<String, String> {
    histogram(model_name, &start, n_paths, horizon, bins, seed)
}

#[wasm_bindgen]
pub fn lyapunov_scan(delta: f64, grid: u32, moll_width: f64) -> Result<String, String> {
    scan(delta, grid, moll_width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn paths_are_thinned_and_start_at_origin_time() {
        let s = sample_paths("ou", &[1.0], 3, 1.0, 1e-4, 1).unwrap();
        let v: Value = serde_json::from_str(&s).unwrap();
        let paths = v["paths"].as_array().unwrap();
        assert_eq!(paths.len(), 3);
        for p in paths {
            let t = p["t"].as_array().unwrap();
            assert!(t.len() <= MAX_POINTS + 1);
            assert_eq!(t[0].as_f64(), Some(0.0));
            assert_eq!(t.last().unwrap().as_f64(), Some(1.0));
        }
    }

    #[test]
    fn same_seed_same_paths() {
        let a = sample_paths("bessel-drift", &[], 5, 2.0, 1e-2, 9).unwrap();
        let b = sample_paths("bessel-drift", &[], 5, 2.0, 1e-2, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(sample_paths("nope", &[], 1, 1.0, 1e-2, 0).is_err());
        assert!(sample_paths("bessel-drift", &[-1.0], 1, 1.0, 1e-2, 0).is_err());
        assert!(sample_paths("ou", &[1.0, 2.0], 1, 1.0, 1e-2, 0).is_err());
        assert!(histogram("ou", &[], 1, 1.0, 0, 0).is_err());
    }

    #[test]
    fn histogram_counts_every_resolved_path() {
        let s = histogram("bessel-drift", &[1.0], 500, 4.0, 20, 3).unwrap();
        let v: Value = serde_json::from_str(&s).unwrap();
        let counted: u64 = v["counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_u64().unwrap())
            .sum();
        let survived = v["survived"].as_u64().unwrap();
        let unresolved = v["unresolved"].as_u64().unwrap();
        assert_eq!(counted + survived + unresolved, 500);
        let frac = v["exit_fraction"].as_f64().unwrap();
        assert!((frac - counted as f64 / (counted + survived) as f64).abs() < 1e-12);
    }

    #[test]
    fn scan_stays_below_constant() {
        let s = scan(0.5, 32, 1e-3).unwrap();
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["certificate"]["verdict"], "pass");
        let c = v["constant"].as_f64().unwrap();
        let max = v["ratio"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r.as_f64().unwrap())
            .fold(f64::MIN, f64::max);
        assert!(max <= c, "{max} > {c}");
        assert!(max > 0.5 * c);
    }
}
