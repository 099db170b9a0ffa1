//! Euler–Maruyama paths killed at the first exit from the domain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientSet;
use crate::domain::{Region, SpaceTimeDomain};
use crate::error::{Result, SdeError};
use crate::point::{norm, SpaceTimePoint};
use crate::rng::PathStream;
use crate::stats::map_indexed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepPolicy {
    pub dt_max: f64,
    pub dt_min: f64,
    /// Coefficient of the `clearance² / K_est` bound.
    pub c_boundary: f64,
    /// Coefficient of the `1 / (1 + |b|²)` bound.
    pub c_drift: f64,
    /// Width of the exit-time bracket after bisection.
    pub tol_xi: f64,
    /// Drift magnitudes above this are clipped.
    pub drift_cap: f64,
    /// Paths clipping more often than this are marked unresolved.
    pub clip_cap: u64,
    pub max_steps: u64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            dt_max: 1e-2,
            dt_min: 1e-9,
            c_boundary: 0.1,
            c_drift: 1.0,
            tol_xi: 1e-9,
            drift_cap: 1e6,
            clip_cap: 100,
            max_steps: 10_000_000,
        }
    }
}

impl StepPolicy {
    /// Fixed step `dt`: the adaptive bounds are switched off.
    pub fn fixed(dt: f64) -> Self {
        Self {
            dt_max: dt,
            dt_min: dt,
            c_boundary: f64::INFINITY,
            c_drift: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn with_dt_max(mut self, dt_max: f64) -> Self {
        self.dt_max = dt_max;
        self.dt_min = self.dt_min.min(dt_max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt_max
            && self.dt_max.is_finite()
            && self.tol_xi > 0.0
            && self.c_boundary > 0.0
            && self.c_drift > 0.0
            && self.drift_cap > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SdeError::Parameter(
                "step policy needs 0 < dt_min <= dt_max < inf and positive tol_xi, c_boundary, c_drift, drift_cap"
                    .into(),
            ))
        }
    }
}

/// `clamp(min(dt_max, c₁·clearance²/K_est, c₂/(1+|b|²)), dt_min, dt_max)`.
pub fn step_size_raw(policy: &StepPolicy, clearance: f64, drift_norm: f64, k_est: f64) -> f64 {
    let boundary = if k_est > 0.0 {
        policy.c_boundary * clearance * clearance / k_est
    } else {
        f64::INFINITY
    };
    let drift = policy.c_drift / (1.0 + drift_norm * drift_norm);
    let dt = policy.dt_max.min(boundary).min(drift);
    if dt.is_nan() {
        return policy.dt_min;
    }
    dt.clamp(policy.dt_min, policy.dt_max)
}

/// Step size at `p`, with `K_est = |σ(p)|²_F`.
pub fn step_size(
    policy: &StepPolicy,
    p: &SpaceTimePoint,
    coeffs: &CoefficientSet,
    domain: &SpaceTimeDomain,
) -> Result<f64> {
    if !domain.contains(p)? {
        return Err(SdeError::OutsideDomain { t: p.t, x: p.x.clone() });
    }
    let clearance = domain.clearance(p.t, &p.x);
    let mut b = vec![0.0; p.dim()];
    coeffs.drift_into(p.t, &p.x, Some(clearance), &mut b)?;
    let s = coeffs.diffusion().sigma(p.t, &p.x);
    Ok(step_size_raw(policy, clearance, norm(&b), s.norm_squared()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "time", rename_all = "kebab-case")]
pub enum Lifetime {
    /// Left the domain at this path-clock time.
    Exited(f64),
    /// Still alive at the horizon; only `ξ > T` is known.
    Survived(f64),
}

impl Lifetime {
    pub fn exited(&self) -> bool {
        matches!(self, Lifetime::Exited(_))
    }

    pub fn exit_time(&self) -> Option<f64> {
        match self {
            Lifetime::Exited(t) => Some(*t),
            Lifetime::Survived(_) => None,
        }
    }

    /// `ξ ∧ T`.
    pub fn end(&self) -> f64 {
        match self {
            Lifetime::Exited(t) | Lifetime::Survived(t) => *t,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathCounters {
    pub steps: u64,
    pub drift_clips: u64,
    pub bisections: u64,
    pub min_clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub start: SpaceTimePoint,
    pub dim: usize,
    /// Path-clock times of the recorded states, `times[0] = 0`.
    pub times: Vec<f64>,
    /// States flattened row by row, `dim` values per time.
    pub states: Vec<f64>,
    /// Brownian increments of each completed step, `dim` values per step.
    pub increments: Vec<f64>,
    pub lifetime: Lifetime,
    pub unresolved: Option<String>,
    pub counters: PathCounters,
    pub seed: u64,
    pub path_index: u64,
}

impl PathRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn is_cemetery(&self) -> bool {
        self.lifetime.exited()
    }

    pub fn is_resolved(&self) -> bool {
        self.unresolved.is_none()
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Largest step taken.
    pub fn max_step(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Absolute time of the `k`-th recorded state.
    pub fn abs_time(&self, k: usize) -> f64 {
        self.start.t + self.times[k]
    }
}

/// Simulates one path of `dX = b dt + σ dW` from `start` up to `T ∧ ξ`.
///
/// Coefficients are evaluated at the absolute time `s + t`, unless the set
/// expects path-clock times (see [`crate::coeffs::localize`]), in which case
/// it must have been built for this start time. Membership in the domain is
/// always tested at the absolute time.
pub fn simulate_path(
    coeffs: &CoefficientSet,
    domain: &SpaceTimeDomain,
    start: &SpaceTimePoint,
    horizon: f64,
    policy: &StepPolicy,
    seed: u64,
    path_index: u64,
) -> Result<PathRecord> {
    let d = domain.dim();
    if start.dim() != d || coeffs.dim() != d {
        return Err(SdeError::DimensionMismatch {
            expected: d,
            got: if start.dim() != d { start.dim() } else { coeffs.dim() },
        });
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SdeError::Parameter(format!("horizon must be positive, got {horizon}")));
    }
    policy.validate()?;
    if !domain.contains_raw(start.t, &start.x) {
        return Err(SdeError::OutsideDomain {
            t: start.t,
            x: start.x.clone(),
        });
    }
    let s = start.t;
    let path_clock = match coeffs.clock_shift() {
        Some(s0) if s0 == s => true,
        Some(s0) => {
            return Err(SdeError::Parameter(format!(
                "coefficients were localized for start time {s0}, path starts at {s}"
            )))
        }
        None => false,
    };
    let coef_time = |t: f64| if path_clock { t } else { s + t };

    let mut stream = PathStream::new(seed, path_index);
    let mut rec = PathRecord {
        start: start.clone(),
        dim: d,
        times: vec![0.0],
        states: start.x.clone(),
        increments: Vec::new(),
        lifetime: Lifetime::Survived(horizon),
        unresolved: None,
        counters: PathCounters {
            min_clearance: f64::INFINITY,
            ..PathCounters::default()
        },
        seed,
        path_index,
    };

    let mut t = 0.0;
    let mut x = start.x.clone();
    let mut b = vec![0.0; d];
    let mut zeta = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut dx = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut probe = vec![0.0; d];
    let mut sigma = DMatrix::zeros(d, d);
    let mut cached_clearance: Option<f64> = None;

    while t < horizon {
        if rec.counters.steps >= policy.max_steps {
            rec.unresolved = Some(format!("step budget {} exhausted", policy.max_steps));
            break;
        }
        let abs_t = s + t;
        let clearance = cached_clearance.take().unwrap_or_else(|| domain.clearance(abs_t, &x));
        rec.counters.min_clearance = rec.counters.min_clearance.min(clearance);
        if let Err(e) = coeffs.drift_into(coef_time(t), &x, Some(clearance), &mut b) {
            rec.unresolved = Some(e.to_string());
            break;
        }
        if b.iter().any(|v| !v.is_finite()) {
            rec.unresolved = Some(format!("non-finite drift at t={abs_t}"));
            break;
        }
        let mut bn = norm(&b);
        if bn > policy.drift_cap {
            let scale = policy.drift_cap / bn;
            for v in b.iter_mut() {
                *v *= scale;
            }
            bn = policy.drift_cap;
            rec.counters.drift_clips += 1;
            if rec.counters.drift_clips > policy.clip_cap {
                rec.unresolved = Some(format!("drift clipped more than {} times", policy.clip_cap));
                break;
            }
        }
        coeffs.diffusion().sigma_into(coef_time(t), &x, &mut sigma);
        let dt = step_size_raw(policy, clearance, bn, sigma.norm_squared()).min(horizon - t);
        let sq = dt.sqrt();
        stream.fill_normal(&mut zeta);
        for i in 0..d {
            dw[i] = sq * zeta[i];
        }
        for i in 0..d {
            let mut noise = 0.0;
            for k in 0..d {
                noise += sigma[(i, k)] * dw[k];
            }
            dx[i] = b[i] * dt + noise;
            next[i] = x[i] + dx[i];
        }
        rec.counters.steps += 1;
        // Land exactly on the horizon at the last step.
        let t_next = if horizon - t <= dt { horizon } else { t + dt };
        if next.iter().any(|v| !v.is_finite()) {
            rec.unresolved = Some(format!("non-finite state at t={}", s + t_next));
            break;
        }
        let span = t_next - t;
        let breach = if domain.contains_raw(s + t_next, &next) {
            let c_next = domain.clearance(s + t_next, &next);
            let chord = Chord {
                domain,
                t0: s + t,
                span,
                x: &x,
                dx: &dx,
                len: (span * span + norm(&dx).powi(2)).sqrt(),
                tol: policy.tol_xi,
            };
            let mut budget = CHORD_PROBES;
            let found = chord.breach(0.0, 1.0, clearance, c_next, &mut probe, &mut budget);
            rec.counters.bisections += (CHORD_PROBES - budget) as u64;
            if found.is_none() {
                cached_clearance = Some(c_next);
            }
            found
        } else {
            Some(Breach::Bracket(0.0, 1.0))
        };
        let Some(breach) = breach else {
            t = t_next;
            x.copy_from_slice(&next);
            rec.times.push(t);
            rec.states.extend_from_slice(&x);
            rec.increments.extend_from_slice(&dw);
            continue;
        };
        // Exit during this step: bisect along the chord.
        let (mut lo, mut hi) = match breach {
            Breach::At(m) => (m, m),
            Breach::Bracket(a, b) => (a, b),
        };
        while hi > lo && (hi - lo) * span > policy.tol_xi {
            let mid = 0.5 * (lo + hi);
            for i in 0..d {
                probe[i] = x[i] + mid * dx[i];
            }
            rec.counters.bisections += 1;
            if domain.contains_raw(s + t + mid * span, &probe) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON {
                break;
            }
        }
        let xi = t + 0.5 * (lo + hi) * span;
        rec.lifetime = Lifetime::Exited(xi);
        break;
    }
    if rec.counters.min_clearance.is_infinite() {
        rec.counters.min_clearance = f64::MAX;
    }
    Ok(rec)
}

/// Probe budget for certifying that a step's chord stays inside the domain.
const CHORD_PROBES: usize = 256;

/// Where a step's chord leaves the domain, in chord parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Breach {
    /// Inside at the first value, outside at the second.
    Bracket(f64, f64),
    /// Within the exit tolerance of the boundary.
    At(f64),
}

/// The space-time segment of one step, from `(t0, x)` to `(t0 + span, x + dx)`.
struct Chord<'a> {
    domain: &'a SpaceTimeDomain,
    t0: f64,
    span: f64,
    x: &'a [f64],
    dx: &'a [f64],
    len: f64,
    tol: f64,
}

impl Chord<'_> {
    /// First breach between `a` and `b`, searching left to right. Clearance
    /// is 1-Lipschitz, so a sub-segment whose end clearances sum to more than
    /// its length lies inside. Sets removed from the domain may have no
    /// interior (a punctured line), so a sub-segment shorter than `tol` that
    /// cannot be certified counts as touching the boundary. Whatever is left
    /// when the budget runs out is taken to be inside.
    fn breach(&self, a: f64, b: f64, ca: f64, cb: f64, probe: &mut [f64], budget: &mut usize) -> Option<Breach> {
        let l = (b - a) * self.len;
        if ca + cb > l || *budget == 0 {
            return None;
        }
        let m = 0.5 * (a + b);
        if l < self.tol {
            return Some(Breach::At(m));
        }
        *budget -= 1;
        for (i, p) in probe.iter_mut().enumerate() {
            *p = self.x[i] + m * self.dx[i];
        }
        let tm = self.t0 + m * self.span;
        if !self.domain.contains_raw(tm, probe) {
            return Some(Breach::Bracket(a, m));
        }
        let cm = self.domain.clearance(tm, probe);
        self.breach(a, m, ca, cm, probe, budget)
            .or_else(|| self.breach(m, b, cm, cb, probe, budget))
    }
}

/// Simulates `n_paths` paths with indices `0..n_paths` and maps each through
/// `f` before the record is dropped. Results are in path order.
#[allow(clippy::too_many_arguments)]
pub fn map_paths<R, F>(
    coeffs: &CoefficientSet,
    domain: &SpaceTimeDomain,
    start: &SpaceTimePoint,
    horizon: f64,
    policy: &StepPolicy,
    seed: u64,
    n_paths: usize,
    workers: usize,
    f: F,
) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(PathRecord) -> R + Sync + Send,
{
    map_indexed(n_paths, workers, |i| {
        simulate_path(coeffs, domain, start, horizon, policy, seed, i as u64).map(&f)
    })
    .into_iter()
    .collect()
}

/// First recorded time at which the path is outside `region`, or `ξ` when the
/// path dies while still inside. `None` if it stays inside until the end.
pub fn first_exit_time(path: &PathRecord, region: &Region) -> Option<f64> {
    for k in 0..path.len() {
        if !region.contains(path.abs_time(k), path.state(k)) {
            return Some(path.times[k]);
        }
    }
    path.lifetime.exit_time()
}

/// Number of completed runs from `closure(Qⁿ)` to the complement of `Qⁿ⁺¹`.
///
/// A run starts when the discrete path is in `closure(Qⁿ)` and completes at the
/// next recorded state outside `Qⁿ⁺¹`; dying counts as leaving `Qⁿ⁺¹`.
pub fn run_counter(path: &PathRecord, domain: &SpaceTimeDomain, n: u32) -> u64 {
    let inner = domain.exhaustion_level(n);
    let outer = domain.exhaustion_level(n + 1);
    let mut seeking_exit = false;
    let mut runs = 0;
    for k in 0..path.len() {
        let (t, x) = (path.abs_time(k), path.state(k));
        if seeking_exit {
            if !outer.contains(t, x) {
                runs += 1;
                seeking_exit = false;
            }
        } else if inner.contains_closed(t, x) {
            seeking_exit = true;
        }
    }
    if seeking_exit && path.is_cemetery() {
        runs += 1;
    }
    runs
}
