//! Grid checkers for the Lyapunov-type conditions on a potential, the
//! constants of the sub-Gaussian moment bound, and mixed `L^q_p` norms.

use serde::{Deserialize, Serialize};

use crate::coeffs::{eigen_range, DiffusionField, LyapunovData, PotentialField, ScalarFn};
use crate::domain::{BoundingBox, Region, SpaceTimeDomain};
use crate::error::{Result, SdeError};
use crate::grid::{midpoints, TensorGrid};
use crate::point::SpaceTimePoint;
use crate::rng::PathStream;
use crate::stats::{default_workers, map_indexed, mean_and_se};

/// Relative slack allowed when comparing the two sides of an inequality.
pub const INEQUALITY_TOL: f64 = 1e-8;
/// Skipped-point fraction above which a certificate is inconclusive.
pub const MAX_SKIPPED_FRACTION: f64 = 0.10;
/// Violation points stored per certificate; the full count is kept separately.
pub const MAX_STORED_VIOLATIONS: usize = 10_000;

fn within_tol(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + INEQUALITY_TOL * (1.0 + rhs.abs())
}

/// `δ = 1/2 - ε/4`, `μ = (δ/2) e^{-T K₁ / (2δ)}`, `ν = μ / (12 K T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub delta: f64,
    pub mu: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub k1: f64,
    pub k: f64,
    pub horizon: f64,
}

pub fn theorem_constants(epsilon: f64, k1: f64, k: f64, horizon: f64) -> Result<TheoremConstants> {
    if !(0.0..2.0).contains(&epsilon) {
        return Err(SdeError::Parameter(format!(
            "epsilon must lie in [0, 2), got {epsilon}"
        )));
    }
    if !(k1 >= 0.0) || !(k > 0.0) || !(horizon > 0.0) {
        return Err(SdeError::Parameter(format!(
            "need K1 >= 0, K > 0, T > 0 (got K1={k1}, K={k}, T={horizon})"
        )));
    }
    let delta = 0.5 - epsilon / 4.0;
    let mu = (delta / 2.0) * (-horizon * k1 / (2.0 * delta)).exp();
    let nu = mu / (12.0 * k * horizon);
    Ok(TheoremConstants {
        delta,
        mu,
        nu,
        epsilon,
        k1,
        k,
        horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InequalityId {
    DriftCondition,
    EllipticCondition,
    ConditionH,
    Ellipticity,
    LipschitzA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub resolution: usize,
    pub moll_width: Option<f64>,
    pub points_checked: usize,
    pub points_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub inequality: InequalityId,
    pub verdict: Verdict,
    /// Tightest constant the grid supports (smallest feasible `K₁`, `C`, `K`, ...).
    pub tightest_constant: Option<f64>,
    /// Largest `LHS - RHS` seen, positive when some point violates.
    pub max_slack: Option<f64>,
    pub violation_count: usize,
    pub violations: Vec<SpaceTimePoint>,
    pub grid: GridMeta,
    pub notes: Vec<String>,
}

impl LyapunovCertificate {
    fn new(inequality: InequalityId, grid: GridMeta) -> Self {
        Self {
            inequality,
            verdict: Verdict::Pass,
            tightest_constant: None,
            max_slack: None,
            violation_count: 0,
            violations: Vec::new(),
            grid,
            notes: Vec::new(),
        }
    }

    fn push_violation(&mut self, p: SpaceTimePoint) {
        self.violation_count += 1;
        if self.violations.len() < MAX_STORED_VIOLATIONS {
            self.violations.push(p);
        }
    }

    fn settle(&mut self, inconclusive: bool) {
        self.verdict = if !self.violations.is_empty() {
            Verdict::Fail
        } else if inconclusive {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
    }
}

enum PointEval<T> {
    Outside,
    Skipped,
    Value(T),
}

/// Evaluates `f` on the cell-centred grid points lying in `region`.
fn scan<T: Send>(
    region: &Region,
    resolution: usize,
    f: impl Fn(f64, &[f64]) -> PointEval<T> + Sync + Send,
) -> Result<Vec<(SpaceTimePoint, PointEval<T>)>> {
    if region.is_degenerate() {
        return Err(SdeError::EmptyRegion);
    }
    let grid = TensorGrid::cell_centred(region.bbox(), resolution);
    let dim = region.dim();
    let out = map_indexed(grid.len(), default_workers(), |i| {
        let mut x = vec![0.0; dim];
        let t = grid.point(i, &mut x);
        let v = if region.contains(t, &x) {
            f(t, &x)
        } else {
            PointEval::Outside
        };
        (SpaceTimePoint::new(t, x), v)
    });
    if out.iter().all(|(_, v)| matches!(v, PointEval::Outside)) {
        return Err(SdeError::EmptyRegion);
    }
    Ok(out)
}

/// Checks `2 ∂ₜφ <= K₁ φ` on the grid and reports the smallest feasible `K₁`.
///
/// Points with `φ = 0` and `∂ₜφ > 0` are infeasible for every `K₁`. When
/// `declared_k1` is given, points violating it are reported as well.
pub fn check_drift_condition(
    pot: &PotentialField,
    region: &Region,
    grid_resolution: usize,
    declared_k1: Option<f64>,
) -> Result<LyapunovCertificate> {
    let evals = scan(region, grid_resolution, |t, x| {
        PointEval::Value((pot.phi(t, x), pot.dt(t, x)))
    })?;
    let mut cert = LyapunovCertificate::new(
        InequalityId::DriftCondition,
        GridMeta {
            resolution: grid_resolution,
            moll_width: None,
            points_checked: 0,
            points_skipped: 0,
        },
    );
    let mut tightest: f64 = 0.0;
    let mut max_slack = f64::NEG_INFINITY;
    for (p, e) in evals {
        let PointEval::Value((phi, dt)) = e else {
            continue;
        };
        cert.grid.points_checked += 1;
        let lhs = 2.0 * dt;
        if phi > 0.0 {
            tightest = tightest.max(lhs / phi);
        } else if dt > 0.0 {
            cert.notes
                .push(format!("phi vanishes with positive time derivative at t={}", p.t));
            cert.push_violation(p);
            continue;
        }
        if let Some(k1) = declared_k1 {
            let rhs = k1 * phi;
            max_slack = max_slack.max(lhs - rhs);
            if !within_tol(lhs, rhs) {
                cert.push_violation(p);
            }
        }
    }
    cert.tightest_constant = Some(tightest);
    if declared_k1.is_some() {
        cert.max_slack = Some(max_slack);
    }
    cert.settle(false);
    Ok(cert)
}

/// Mollified left-hand side `2∂ₜφ + Σᵢⱼ ∂ⱼ(aᵢⱼ ∂ᵢφ)` with stencil width `h`.
pub fn elliptic_lhs(pot: &PotentialField, diff: &DiffusionField, t: f64, x: &[f64], h: f64) -> Result<f64> {
    let d = x.len();
    let mut y = x.to_vec();
    let mut g = vec![0.0; d];
    let mut flux = |y: &[f64], j: usize| -> Result<f64> {
        pot.grad_into(t, y, h, &mut g)?;
        let a = diff.a(t, y);
        Ok((0..d).map(|i| a[(i, j)] * g[i]).sum())
    };
    let mut div = 0.0;
    for j in 0..d {
        y[j] = x[j] + h;
        let fp = flux(&y, j)?;
        y[j] = x[j] - h;
        let fm = flux(&y, j)?;
        y[j] = x[j];
        div += (fp - fm) / (2.0 * h);
    }
    Ok(2.0 * pot.dt(t, x) + div)
}

/// Checks `2∂ₜφ + Σᵢⱼ ∂ⱼ(aᵢⱼ ∂ᵢφ) <= h e^{εφ}` with central differences of
/// width `moll_width`.
///
/// Grid points closer than `2·moll_width` to `∂Q` are skipped; more than 10%
/// skipped, or any non-finite left-hand side, makes the verdict inconclusive.
/// The tightest constant is `max LHS·e^{-εφ}`, the smallest `C` for which
/// `h ≡ C` would pass.
pub fn check_elliptic_condition(
    pot: &PotentialField,
    diff: &DiffusionField,
    domain: &SpaceTimeDomain,
    region: &Region,
    grid_resolution: usize,
    moll_width: f64,
    lyap: &LyapunovData,
) -> Result<LyapunovCertificate> {
    if !(moll_width > 0.0) {
        return Err(SdeError::Parameter("mollification width must be positive".into()));
    }
    let evals = scan(region, grid_resolution, |t, x| {
        if domain.clearance(t, x) < 2.0 * moll_width {
            return PointEval::Skipped;
        }
        match elliptic_lhs(pot, diff, t, x, moll_width) {
            Ok(lhs) if lhs.is_finite() => PointEval::Value((lhs, pot.phi(t, x), (lyap.h)(t, x))),
            _ => PointEval::Skipped,
        }
    })?;
    let mut cert = LyapunovCertificate::new(
        InequalityId::EllipticCondition,
        GridMeta {
            resolution: grid_resolution,
            moll_width: Some(moll_width),
            points_checked: 0,
            points_skipped: 0,
        },
    );
    let mut tightest = f64::NEG_INFINITY;
    let mut max_slack = f64::NEG_INFINITY;
    for (p, e) in evals {
        match e {
            PointEval::Outside => {}
            PointEval::Skipped => cert.grid.points_skipped += 1,
            PointEval::Value((lhs, phi, h)) => {
                cert.grid.points_checked += 1;
                let growth = (lyap.epsilon * phi).exp();
                let rhs = h * growth;
                tightest = tightest.max(lhs / growth);
                max_slack = max_slack.max(lhs - rhs);
                if !within_tol(lhs, rhs) {
                    cert.push_violation(p);
                }
            }
        }
    }
    let total = cert.grid.points_checked + cert.grid.points_skipped;
    let skipped_fraction = cert.grid.points_skipped as f64 / total as f64;
    if skipped_fraction > MAX_SKIPPED_FRACTION {
        cert.notes.push(format!(
            "{:.1}% of grid points skipped near the boundary or a singularity",
            100.0 * skipped_fraction
        ));
    }
    if cert.grid.points_checked > 0 {
        cert.tightest_constant = Some(tightest.max(0.0));
        cert.max_slack = Some(max_slack);
    }
    cert.settle(skipped_fraction > MAX_SKIPPED_FRACTION || cert.grid.points_checked == 0);
    Ok(cert)
}

/// Checks `1/K <= eig(σσ*) <= K` on the closed grid of `region`.
pub fn check_ellipticity(
    diff: &DiffusionField,
    region: &Region,
    grid_resolution: usize,
    k: Option<f64>,
) -> Result<LyapunovCertificate> {
    let evals = scan(region, grid_resolution, |t, x| {
        PointEval::Value(eigen_range(&diff.a(t, x)))
    })?;
    let mut cert = LyapunovCertificate::new(
        InequalityId::Ellipticity,
        GridMeta {
            resolution: grid_resolution,
            moll_width: None,
            points_checked: 0,
            points_skipped: 0,
        },
    );
    let mut tightest: f64 = 1.0;
    for (p, e) in evals {
        let PointEval::Value((lo, hi)) = e else {
            continue;
        };
        cert.grid.points_checked += 1;
        tightest = tightest.max(hi).max(1.0 / lo);
        if let Some(k) = k {
            if !within_tol(1.0 / k, lo) || !within_tol(hi, k) {
                cert.push_violation(p);
            }
        }
    }
    cert.tightest_constant = Some(tightest);
    cert.settle(false);
    Ok(cert)
}

/// Estimates the Lipschitz constant of `a = σσ*` in the parabolic metric
/// `|x - y| ∨ |t - s|^{1/2}` from neighbouring grid points.
pub fn check_lipschitz_a(
    diff: &DiffusionField,
    region: &Region,
    grid_resolution: usize,
    k: Option<f64>,
) -> Result<LyapunovCertificate> {
    if region.is_degenerate() {
        return Err(SdeError::EmptyRegion);
    }
    let grid = TensorGrid::cell_centred(region.bbox(), grid_resolution);
    let dim = region.dim();
    let steps: Vec<f64> = std::iter::once(&grid.times)
        .chain(grid.axes.iter())
        .map(|a| if a.len() > 1 { a[1] - a[0] } else { 0.0 })
        .collect();
    let evals = map_indexed(grid.len(), default_workers(), |i| {
        let mut x = vec![0.0; dim];
        let t = grid.point(i, &mut x);
        if !region.contains(t, &x) {
            return None;
        }
        let a0 = diff.a(t, &x);
        let mut worst: f64 = 0.0;
        for (axis, &h) in steps.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let (t1, mut x1) = (t, x.clone());
            let metric = if axis == 0 {
                h.sqrt()
            } else {
                x1[axis - 1] += h;
                h
            };
            let t1 = if axis == 0 { t1 + h } else { t1 };
            if !region.contains(t1, &x1) {
                continue;
            }
            let a1 = diff.a(t1, &x1);
            let jump = (&a1 - &a0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(jump / metric);
        }
        Some((SpaceTimePoint::new(t, x), worst))
    });
    let mut cert = LyapunovCertificate::new(
        InequalityId::LipschitzA,
        GridMeta {
            resolution: grid_resolution,
            moll_width: None,
            points_checked: 0,
            points_skipped: 0,
        },
    );
    let mut tightest: f64 = 0.0;
    for (p, worst) in evals.into_iter().flatten() {
        cert.grid.points_checked += 1;
        tightest = tightest.max(worst);
        if let Some(k) = k {
            if !within_tol(worst, k) {
                cert.push_violation(p);
            }
        }
    }
    if cert.grid.points_checked == 0 {
        return Err(SdeError::EmptyRegion);
    }
    cert.tightest_constant = Some(tightest);
    cert.notes
        .push("sampled estimate on neighbouring grid points, not a proof".into());
    cert.settle(false);
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HIntegralEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// Set when the sample looks divergent (non-finite or huge relative error).
    pub divergent: bool,
}

/// Monte Carlo estimate of `∫_Q hʳ(t,x) 1_{(0,T)}(t) e^{-a|x|²} dt dx`.
///
/// Samples `t ~ U(0,T)` and `x ~ N(0, I/(2a))`, so every sample carries the
/// weight `T (π/a)^{d/2} hʳ 1_Q`.
pub fn h_integral(
    h: &ScalarFn,
    domain: &SpaceTimeDomain,
    horizon: f64,
    a: f64,
    r: f64,
    n_samples: usize,
    seed: u64,
) -> Result<HIntegralEstimate> {
    if !(horizon > 0.0) || !(a > 0.0) || !(r > 1.0) || n_samples == 0 {
        return Err(SdeError::Parameter(
            "condition (H) needs T > 0, a > 0, r > 1 and at least one sample".into(),
        ));
    }
    let d = domain.dim();
    let scale = horizon * (std::f64::consts::PI / a).powf(d as f64 / 2.0);
    let sd = (1.0 / (2.0 * a)).sqrt();
    let mut stream = PathStream::new(seed, 0);
    let mut x = vec![0.0; d];
    let samples: Vec<f64> = (0..n_samples)
        .map(|_| {
            let t = horizon * stream.uniform();
            stream.fill_normal(&mut x);
            for v in x.iter_mut() {
                *v *= sd;
            }
            if domain.contains_raw(t, &x) {
                scale * h(t, &x).abs().powf(r)
            } else {
                0.0
            }
        })
        .collect();
    let (estimate, std_error) = mean_and_se(&samples);
    let divergent =
        !estimate.is_finite() || !std_error.is_finite() || (estimate != 0.0 && std_error / estimate.abs() > 0.25);
    Ok(HIntegralEstimate {
        estimate,
        std_error,
        n_samples,
        divergent,
    })
}

/// Wraps [`h_integral`] into a certificate: pass when the estimate is finite
/// and well resolved, inconclusive otherwise. Finiteness can never be refuted
/// by sampling, so this certificate never fails.
pub fn check_condition_h(
    h: &ScalarFn,
    domain: &SpaceTimeDomain,
    horizon: f64,
    a: f64,
    r: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LyapunovCertificate> {
    let est = h_integral(h, domain, horizon, a, r, n_samples, seed)?;
    let mut cert = LyapunovCertificate::new(
        InequalityId::ConditionH,
        GridMeta {
            resolution: n_samples,
            moll_width: None,
            points_checked: n_samples,
            points_skipped: 0,
        },
    );
    cert.tightest_constant = Some(est.estimate);
    cert.notes.push(format!(
        "H(T={horizon}, a={a}, r={r}) = {} ± {}",
        est.estimate, est.std_error
    ));
    cert.settle(est.divergent);
    Ok(cert)
}

/// How `φ` behaves along rays from grid points towards the boundary.
///
/// Only a spot check: a black-box potential cannot be certified to blow up,
/// so this reports what was seen and nothing more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub rays: usize,
    /// Rays that met the boundary within the probe length.
    pub reached: usize,
    /// Reached rays along which `φ` was nondecreasing.
    pub monotone: usize,
    /// Smallest `φ(closest) / φ(seed)` over reached rays.
    pub min_ratio: f64,
    /// Largest `φ` seen at the point closest to the boundary.
    pub max_near_boundary: f64,
}

/// Probes `φ` along rays from up to `max_seeds` grid points of `region`.
///
/// Rays go along each spatial axis in both directions and backwards in time.
/// A ray that leaves the domain within `reach` is bisected to its exit point
/// and `φ` is sampled at gaps `r 2^{-k}`, `k = 1..=depth`, before it.
pub fn potential_growth(
    pot: &PotentialField,
    domain: &SpaceTimeDomain,
    region: &Region,
    grid_resolution: usize,
    max_seeds: usize,
    reach: f64,
    depth: u32,
) -> Result<GrowthReport> {
    if !(reach > 0.0) || depth == 0 || max_seeds == 0 {
        return Err(SdeError::Parameter(
            "growth probe needs reach > 0, depth >= 1 and seeds >= 1".into(),
        ));
    }
    let seeds: Vec<SpaceTimePoint> = scan(region, grid_resolution, |_, _| PointEval::Value(()))?
        .into_iter()
        .filter(|(_, e)| matches!(e, PointEval::Value(())))
        .map(|(p, _)| p)
        .collect();
    let stride = seeds.len().div_ceil(max_seeds).max(1);
    let dim = domain.dim();
    let mut rep = GrowthReport {
        rays: 0,
        reached: 0,
        monotone: 0,
        min_ratio: f64::INFINITY,
        max_near_boundary: f64::NEG_INFINITY,
    };
    let at = |p: &SpaceTimePoint, dir: usize, sign: f64, r: f64| {
        let mut q = p.clone();
        if dir == dim {
            q.t -= r;
        } else {
            q.x[dir] += sign * r;
        }
        q
    };
    for seed in seeds.iter().step_by(stride) {
        let base = pot.phi(seed.t, &seed.x);
        let rays = (0..dim).flat_map(|i| [(i, 1.0), (i, -1.0)]).chain([(dim, 1.0)]);
        for (dir, sign) in rays {
            rep.rays += 1;
            let inside = |r: f64| {
                let q = at(seed, dir, sign, r);
                domain.contains_raw(q.t, &q.x)
            };
            let (mut lo, mut hi) = (0.0, domain.clearance(seed.t, &seed.x).max(1e-6));
            while inside(hi) {
                if hi >= reach {
                    break;
                }
                lo = hi;
                hi = (2.0 * hi).min(reach);
            }
            if inside(hi) {
                continue;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            rep.reached += 1;
            let mut prev = base;
            let mut monotone = true;
            for k in 1..=depth {
                let r = lo - lo * 0.5f64.powi(k as i32);
                let q = at(seed, dir, sign, r);
                let v = pot.phi(q.t, &q.x);
                monotone &= v >= prev - INEQUALITY_TOL * (1.0 + prev.abs());
                prev = v;
            }
            if monotone {
                rep.monotone += 1;
            }
            if base > 0.0 {
                rep.min_ratio = rep.min_ratio.min(prev / base);
            }
            rep.max_near_boundary = rep.max_near_boundary.max(prev);
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    pub s: f64,
    pub t: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub p: f64,
    pub q: f64,
    pub resolution: usize,
}

fn p_norm_finish(sum_or_max: f64, p: f64) -> f64 {
    if p.is_infinite() {
        sum_or_max
    } else {
        sum_or_max.powf(1.0 / p)
    }
}

/// Midpoint-rule approximation of
/// `‖f‖_{L^q_p(S,T)} = (∫_S^T (∫ |f|^p dx)^{q/p} dt)^{1/q}` over a truncation box.
/// `p` or `q` may be infinite.
pub fn lp_lq_norm(
    f: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    s: f64,
    t: f64,
    lo: &[f64],
    hi: &[f64],
    p: f64,
    q: f64,
    grid_resolution: usize,
) -> Result<NormReport> {
    if !(s < t) || !(p >= 1.0) || !(q >= 1.0) || lo.len() != hi.len() || grid_resolution == 0 {
        return Err(SdeError::Parameter(
            "L^q_p norm needs S < T, p, q >= 1 and a matching box".into(),
        ));
    }
    let d = lo.len();
    let bbox = BoundingBox {
        t_lo: s,
        t_hi: t,
        lo: lo.to_vec(),
        hi: hi.to_vec(),
    };
    let space = TensorGrid {
        times: vec![0.0],
        axes: (0..d)
            .map(|i| midpoints(bbox.lo[i], bbox.hi[i], grid_resolution))
            .collect(),
    };
    let cell: f64 = (0..d).map(|i| (hi[i] - lo[i]) / grid_resolution as f64).product();
    let times = midpoints(s, t, grid_resolution);
    let dt = (t - s) / grid_resolution as f64;
    let inner: Vec<f64> = map_indexed(times.len(), default_workers(), |k| {
        let tk = times[k];
        let mut x = vec![0.0; d];
        let mut acc = 0.0;
        let mut acc_max: f64 = 0.0;
        for i in 0..space.len() {
            space.point(i, &mut x);
            let v = f(tk, &x).abs();
            if p.is_infinite() {
                acc_max = acc_max.max(v);
            } else {
                acc += v.powf(p) * cell;
            }
        }
        if p.is_infinite() {
            acc_max
        } else {
            p_norm_finish(acc, p)
        }
    });
    let value = if q.is_infinite() {
        inner.iter().fold(0.0f64, |m, v| m.max(*v))
    } else {
        let acc: f64 = inner.iter().map(|v| v.powf(q) * dt).sum();
        p_norm_finish(acc, q)
    };
    Ok(NormReport {
        value,
        s,
        t,
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        p,
        q,
        resolution: grid_resolution,
    })
}
