//! Monte Carlo estimators over batches of simulated paths.
//!
//! Per-path values are collected in path order and reduced with pairwise
//! summation, so a report depends only on the seed and the configuration,
//! never on the number of workers.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coeffs::{DiffusionField, ScalarFn};
use crate::error::{Result, SdeError};
use crate::integrate::{map_paths, run_counter, PathRecord, StepPolicy};
use crate::lyapunov::{lp_lq_norm, TheoremConstants};
use crate::models::ModelSpec;
use crate::point::{norm_sq, SpaceTimePoint};
use crate::stats::{mean_and_se, pairwise_sum, variance_and_se};

/// Fraction of unresolved paths above which a report is marked invalid.
pub const MAX_UNRESOLVED_FRACTION: f64 = 0.01;

/// Drift given as a plain function of `(t, x)`.
pub type DriftFn<'a> = dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub estimand: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_used: usize,
    pub n_unresolved: usize,
    pub effective_sample_size: Option<f64>,
    pub seed: u64,
    pub config_digest: Option<String>,
    pub valid: bool,
    pub warnings: Vec<String>,
    /// Largest step over all paths, for refinement studies.
    pub max_step: f64,
    pub extras: BTreeMap<String, f64>,
}

/// Shared Monte Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct McSettings {
    pub n_paths: usize,
    pub seed: u64,
    pub workers: usize,
    pub policy: StepPolicy,
    pub config_digest: Option<String>,
}

impl McSettings {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            workers: 1,
            policy: StepPolicy::default(),
            config_digest: None,
        }
    }

    pub fn with_policy(mut self, policy: StepPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// A report together with the per-path values behind it (`None` for
/// unresolved paths).
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub report: MonteCarloReport,
    pub per_path: Vec<Option<f64>>,
}

struct Batch<T> {
    values: Vec<Option<T>>,
    n_unresolved: usize,
    unresolved_reasons: Vec<String>,
    max_step: f64,
    drift_clips: u64,
}

impl<T> Batch<T> {
    fn resolved(&self) -> impl Iterator<Item = &T> {
        self.values.iter().flatten()
    }
}

fn run_batch<T, F>(model: &ModelSpec, start: &SpaceTimePoint, horizon: f64, s: &McSettings, f: F) -> Result<Batch<T>>
where
    T: Send,
    F: Fn(&PathRecord) -> Result<T> + Sync + Send,
{
    if s.n_paths == 0 {
        return Err(SdeError::Parameter("n_paths must be positive".into()));
    }
    let raw = map_paths(
        &model.coeffs,
        &model.domain,
        start,
        horizon,
        &s.policy,
        s.seed,
        s.n_paths,
        s.workers,
        |rec| {
            let value = if rec.is_resolved() { Some(f(&rec)) } else { None };
            (
                value.transpose(),
                rec.unresolved.clone(),
                rec.max_step(),
                rec.counters.drift_clips,
            )
        },
    )?;
    let mut batch = Batch {
        values: Vec::with_capacity(raw.len()),
        n_unresolved: 0,
        unresolved_reasons: Vec::new(),
        max_step: 0.0,
        drift_clips: 0,
    };
    for (value, reason, max_step, clips) in raw {
        batch.values.push(value?);
        batch.max_step = batch.max_step.max(max_step);
        batch.drift_clips += clips;
        if let Some(r) = reason {
            batch.n_unresolved += 1;
            if batch.unresolved_reasons.len() < 3 {
                batch.unresolved_reasons.push(r);
            }
        }
    }
    Ok(batch)
}

fn base_report<T>(estimand: &str, s: &McSettings, batch: &Batch<T>) -> MonteCarloReport {
    let n_used = batch.values.len() - batch.n_unresolved;
    let frac = batch.n_unresolved as f64 / s.n_paths as f64;
    let mut warnings = Vec::new();
    let valid = frac <= MAX_UNRESOLVED_FRACTION && n_used > 0;
    if batch.n_unresolved > 0 {
        warnings.push(format!(
            "{} of {} paths unresolved and excluded ({})",
            batch.n_unresolved,
            s.n_paths,
            batch.unresolved_reasons.join("; ")
        ));
    }
    if !valid {
        warnings.push("estimate unreliable: more than 1% of paths unresolved".into());
    }
    if batch.drift_clips > 0 {
        warnings.push(format!("drift clipped {} times", batch.drift_clips));
    }
    MonteCarloReport {
        estimand: estimand.into(),
        estimate: f64::NAN,
        std_error: f64::NAN,
        n_paths: s.n_paths,
        n_used,
        n_unresolved: batch.n_unresolved,
        effective_sample_size: None,
        seed: s.seed,
        config_digest: s.config_digest.clone(),
        valid,
        warnings,
        max_step: batch.max_step,
        extras: BTreeMap::new(),
    }
}

fn scalar_estimate(estimand: &str, s: &McSettings, batch: Batch<f64>) -> Estimate {
    let mut report = base_report(estimand, s, &batch);
    let vals: Vec<f64> = batch.resolved().copied().collect();
    let (m, se) = mean_and_se(&vals);
    report.estimate = m;
    report.std_error = se;
    Estimate {
        report,
        per_path: batch.values,
    }
}

/// `P(ξ <= T)`: the fraction of paths killed before the horizon.
pub fn explosion_probability(
    model: &ModelSpec,
    start: &SpaceTimePoint,
    horizon: f64,
    s: &McSettings,
) -> Result<Estimate> {
    let batch = run_batch(model, start, horizon, s, |rec| {
        Ok(if rec.is_cemetery() { 1.0 } else { 0.0 })
    })?;
    let mut est = scalar_estimate("explosion-probability", s, batch);
    let p = est.report.estimate;
    est.report.std_error = (p * (1.0 - p) / est.report.n_used as f64).sqrt();
    Ok(est)
}

/// Mean of the observed lifetimes `ξ` over the paths that exit before the
/// horizon. Extras carry the exit fraction and `E[ξ ∧ T]`.
pub fn mean_lifetime(model: &ModelSpec, start: &SpaceTimePoint, horizon: f64, s: &McSettings) -> Result<Estimate> {
    let batch = run_batch(model, start, horizon, s, |rec| Ok(rec.lifetime))?;
    let mut report = base_report("mean-lifetime", s, &batch);
    let exited: Vec<f64> = batch.resolved().filter_map(|l| l.exit_time()).collect();
    let ends: Vec<f64> = batch.resolved().map(|l| l.end()).collect();
    let (m, se) = mean_and_se(&exited);
    report.estimate = m;
    report.std_error = se;
    let n = ends.len() as f64;
    let frac = exited.len() as f64 / n;
    let (m_end, se_end) = mean_and_se(&ends);
    report.extras.insert("exit_fraction".into(), frac);
    report
        .extras
        .insert("exit_fraction_se".into(), (frac * (1.0 - frac) / n).sqrt());
    report.extras.insert("mean_stopped_lifetime".into(), m_end);
    report.extras.insert("mean_stopped_lifetime_se".into(), se_end);
    if exited.len() < ends.len() {
        report.warnings.push(format!(
            "{} paths survived the horizon; the mean covers exited paths only",
            ends.len() - exited.len()
        ));
    }
    let per_path = batch.values.iter().map(|l| l.map(|l| l.end())).collect();
    Ok(Estimate { report, per_path })
}

/// `E sup_{t} exp(μφ(s+t, X_t) + μν|X_t|²)` over the recorded grid before `ξ ∧ T`.
pub fn sup_exp_moment(
    model: &ModelSpec,
    constants: &TheoremConstants,
    start: &SpaceTimePoint,
    horizon: f64,
    s: &McSettings,
) -> Result<Estimate> {
    let pot = model
        .potential()
        .ok_or_else(|| SdeError::Parameter(format!("model {} has no potential", model.name)))?;
    let (mu, nu) = (constants.mu, constants.nu);
    let batch = run_batch(model, start, horizon, s, |rec| {
        let mut log_sup = f64::NEG_INFINITY;
        for k in 0..rec.len() {
            let x = rec.state(k);
            let v = mu * pot.phi(rec.abs_time(k), x) + mu * nu * norm_sq(x);
            log_sup = log_sup.max(if v.is_nan() { f64::INFINITY } else { v });
        }
        Ok(log_sup.exp())
    })?;
    let mut est = scalar_estimate("sup-exp-moment", s, batch);
    let non_finite = est.per_path.iter().flatten().filter(|v| !v.is_finite()).count();
    est.report.extras.insert("mu".into(), mu);
    est.report.extras.insert("nu".into(), nu);
    est.report.extras.insert("non_finite_paths".into(), non_finite as f64);
    if non_finite > 0 {
        est.report.estimate = f64::INFINITY;
        est.report.std_error = f64::INFINITY;
        est.report.valid = false;
        est.report.warnings.push(format!(
            "{non_finite} paths overflowed exp(mu*phi + mu*nu*|x|^2); check the constants or the model"
        ));
    }
    Ok(est)
}

/// Left-endpoint quadrature of `∫_{S}^{T ∧ ξ} g(s + t, X_t) dt` along a path,
/// including the last interval up to `ξ` for killed paths.
pub fn path_integral(rec: &PathRecord, from: f64, g: impl Fn(f64, &[f64]) -> f64) -> f64 {
    let end = rec.lifetime.end();
    let n = rec.len();
    let terms: Vec<f64> = (0..n)
        .filter_map(|k| {
            let lo = rec.times[k].max(from);
            let hi = if k + 1 < n { rec.times[k + 1] } else { end }.min(end);
            (hi > lo).then(|| g(rec.abs_time(k), rec.state(k)) * (hi - lo))
        })
        .collect();
    pairwise_sum(&terms)
}

/// A test function for the occupation-time ratio, supported in `[lo, hi]`.
#[derive(Clone)]
pub struct KrylovFunction {
    pub name: String,
    pub f: ScalarFn,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovOutput {
    pub reports: Vec<MonteCarloReport>,
    pub max_ratio: f64,
}

/// For each `f`, `E ∫_S^{T∧ξ} |f(s+t, X_t)| dt / ‖f‖_{L^q_p(s+S, s+T)}`.
///
/// A function with zero norm is reported with ratio 0 when its numerator is
/// also zero and skipped with a warning otherwise.
#[allow(clippy::too_many_arguments)]
pub fn krylov_ratio(
    model: &ModelSpec,
    family: &[KrylovFunction],
    start: &SpaceTimePoint,
    from: f64,
    horizon: f64,
    p: f64,
    q: f64,
    grid_resolution: usize,
    s: &McSettings,
) -> Result<KrylovOutput> {
    if !(from >= 0.0 && from < horizon) {
        return Err(SdeError::Parameter("krylov ratio needs 0 <= S < T".into()));
    }
    let batch = run_batch(model, start, horizon, s, |rec| {
        Ok(family
            .iter()
            .map(|kf| path_integral(rec, from, |t, x| (kf.f)(t, x).abs()))
            .collect::<Vec<f64>>())
    })?;
    let mut reports = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for (i, kf) in family.iter().enumerate() {
        let vals: Vec<f64> = batch.resolved().map(|v| v[i]).collect();
        let (num, num_se) = mean_and_se(&vals);
        let f = kf.f.clone();
        let nrm = lp_lq_norm(
            &move |t: f64, x: &[f64]| f(t, x),
            start.t + from,
            start.t + horizon,
            &kf.lo,
            &kf.hi,
            p,
            q,
            grid_resolution,
        )?;
        let mut report = base_report(&format!("krylov-ratio:{}", kf.name), s, &batch);
        report.extras.insert("numerator".into(), num);
        report.extras.insert("numerator_se".into(), num_se);
        report.extras.insert("norm".into(), nrm.value);
        report.extras.insert("p".into(), p);
        report.extras.insert("q".into(), q);
        if nrm.value > 0.0 {
            report.estimate = num / nrm.value;
            report.std_error = num_se / nrm.value;
        } else if num == 0.0 {
            report.estimate = 0.0;
            report.std_error = 0.0;
            report.warnings.push("f has zero norm; ratio set to 0".into());
        } else {
            report.valid = false;
            report
                .warnings
                .push("f has zero norm on the grid but a nonzero numerator; skipped".into());
            reports.push(report);
            continue;
        }
        max_ratio = max_ratio.max(report.estimate);
        reports.push(report);
    }
    Ok(KrylovOutput { reports, max_ratio })
}

/// `E exp(κ ∫_0^{T∧ξ} |g(s+t, X_t)|² dt)`.
pub fn exp_functional(
    model: &ModelSpec,
    g: &ScalarFn,
    kappa: f64,
    start: &SpaceTimePoint,
    horizon: f64,
    s: &McSettings,
) -> Result<Estimate> {
    let batch = run_batch(model, start, horizon, s, |rec| {
        let integral = path_integral(rec, 0.0, |t, x| {
            let v = g(t, x);
            v * v
        });
        Ok((kappa * integral).exp())
    })?;
    let mut est = scalar_estimate("exp-functional", s, batch);
    let mut vals: Vec<f64> = est.per_path.iter().flatten().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let top = vals.len().div_ceil(100);
    let total = pairwise_sum(&vals);
    let head = pairwise_sum(&vals[..top]);
    if total > 0.0 && head > 0.5 * total {
        est.report.warnings.push(format!(
            "heavy tail: top 1% of paths carry {:.0}% of the mass",
            100.0 * head / total
        ));
    }
    est.report.extras.insert("kappa".into(), kappa);
    Ok(est)
}

/// `E ν^α` for the number `ν` of runs from `closure(Qⁿ)` out of `Qⁿ⁺¹` before
/// `S ∧ ξ`, with `0^α := 0` (so `α = 0` estimates `P(ν >= 1)`).
pub fn run_moment(
    model: &ModelSpec,
    start: &SpaceTimePoint,
    until: f64,
    level: u32,
    alpha: f64,
    s: &McSettings,
) -> Result<Estimate> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(SdeError::Parameter(format!("alpha must lie in [0, 1/2), got {alpha}")));
    }
    if level == 0 {
        return Err(SdeError::Parameter("exhaustion level must be at least 1".into()));
    }
    let batch = run_batch(model, start, until, s, |rec| Ok(run_counter(rec, &model.domain, level)))?;
    let counts: Vec<f64> = batch.resolved().map(|&c| c as f64).collect();
    let mut report = base_report("run-moment", s, &batch);
    let vals: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0.0 { 0.0 } else { c.powf(alpha) })
        .collect();
    let (m, se) = mean_and_se(&vals);
    report.estimate = m;
    report.std_error = se;
    let (mean_runs, _) = mean_and_se(&counts);
    report.extras.insert("alpha".into(), alpha);
    report.extras.insert("level".into(), level as f64);
    report.extras.insert("mean_runs".into(), mean_runs);
    report
        .extras
        .insert("max_runs".into(), counts.iter().fold(0.0, |a, b| a.max(*b)));
    let per_path = batch
        .values
        .iter()
        .map(|c| c.map(|c| if c == 0 { 0.0 } else { (c as f64).powf(alpha) }))
        .collect();
    Ok(Estimate { report, per_path })
}

/// Log of the discrete Girsanov density of drift `b2` against drift `b1`
/// along a path generated under `b1`:
/// `Σₖ uₖ·ΔWₖ - ½|uₖ|²Δtₖ` with `σ(tₖ, Xₖ) uₖ = b2 - b1` at left endpoints.
pub fn girsanov_log_weight(
    path: &PathRecord,
    b1: &DriftFn<'_>,
    b2: &DriftFn<'_>,
    diff: &DiffusionField,
) -> Result<f64> {
    let d = path.dim;
    let mut v1 = vec![0.0; d];
    let mut v2 = vec![0.0; d];
    let mut sigma = DMatrix::zeros(d, d);
    let mut terms = Vec::with_capacity(path.len());
    for k in 0..path.len().saturating_sub(1) {
        let (t, x) = (path.abs_time(k), path.state(k));
        b1(t, x, &mut v1);
        b2(t, x, &mut v2);
        let db = DVector::from_iterator(d, v1.iter().zip(&v2).map(|(a, b)| b - a));
        if db.iter().all(|v| *v == 0.0) {
            continue;
        }
        diff.sigma_into(t, x, &mut sigma);
        let u = sigma
            .clone()
            .lu()
            .solve(&db)
            .filter(|u| u.iter().all(|v| v.is_finite()))
            .ok_or_else(|| SdeError::SingularDiffusion { t, x: x.to_vec() })?;
        let dt = path.times[k + 1] - path.times[k];
        let dw = path.increment(k);
        let drive: f64 = u.iter().zip(dw).map(|(a, b)| a * b).sum();
        terms.push(drive - 0.5 * u.norm_squared() * dt);
    }
    Ok(pairwise_sum(&terms))
}

pub fn girsanov_weight(path: &PathRecord, b1: &DriftFn<'_>, b2: &DriftFn<'_>, diff: &DiffusionField) -> Result<f64> {
    girsanov_log_weight(path, b1, b2, diff).map(f64::exp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovOutput {
    /// Mean of the weights, which should be 1.
    pub weights: Estimate,
    /// `E[f(X_T) ρ]` with killed paths contributing 0.
    pub reweighted: Estimate,
}

/// Reweights paths of `model` (drift `b1`) into expectations under `b2`.
pub fn girsanov_expectation(
    model: &ModelSpec,
    b2: &DriftFn<'_>,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    start: &SpaceTimePoint,
    horizon: f64,
    s: &McSettings,
) -> Result<GirsanovOutput> {
    let coeffs = &model.coeffs;
    let b1 = |t: f64, x: &[f64], out: &mut [f64]| {
        if coeffs.drift_into(t, x, None, out).is_err() {
            out.fill(f64::NAN);
        }
    };
    let diff = coeffs.diffusion();
    let batch = run_batch(model, start, horizon, s, |rec| {
        let w = girsanov_weight(rec, &b1, b2, diff)?;
        let fx = if rec.is_cemetery() { 0.0 } else { f(rec.final_state()) };
        Ok((w, fx * w))
    })?;
    let ws: Vec<f64> = batch.resolved().map(|v| v.0).collect();
    let fws: Vec<f64> = batch.resolved().map(|v| v.1).collect();
    let sum_w = pairwise_sum(&ws);
    let sum_w2 = pairwise_sum(&ws.iter().map(|w| w * w).collect::<Vec<_>>());
    let ess = if sum_w2 > 0.0 {
        (sum_w * sum_w / sum_w2).min(ws.len() as f64)
    } else {
        0.0
    };
    let mut wr = base_report("girsanov-weight-mean", s, &batch);
    let (m, se) = mean_and_se(&ws);
    let (var_w, _) = variance_and_se(&ws);
    wr.estimate = m;
    wr.std_error = se;
    wr.effective_sample_size = Some(ess);
    wr.extras.insert("weight_variance".into(), var_w);
    let mut fr = base_report("girsanov-reweighted-mean", s, &batch);
    let (m, se) = mean_and_se(&fws);
    fr.estimate = m;
    fr.std_error = se;
    fr.effective_sample_size = Some(ess);
    if ess < 0.1 * ws.len() as f64 {
        fr.warnings
            .push(format!("effective sample size {ess:.0} is below 10% of the paths"));
    }
    let w_pp = batch.values.iter().map(|v| v.map(|v| v.0)).collect();
    let f_pp = batch.values.iter().map(|v| v.map(|v| v.1)).collect();
    Ok(GirsanovOutput {
        weights: Estimate {
            report: wr,
            per_path: w_pp,
        },
        reweighted: Estimate {
            report: fr,
            per_path: f_pp,
        },
    })
}

/// Sample mean and variance of `X_T` per coordinate, over surviving paths.
pub fn terminal_moments(
    model: &ModelSpec,
    start: &SpaceTimePoint,
    horizon: f64,
    s: &McSettings,
) -> Result<Vec<MonteCarloReport>> {
    let batch = run_batch(model, start, horizon, s, |rec| {
        Ok((!rec.is_cemetery()).then(|| rec.final_state().to_vec()))
    })?;
    let alive: Vec<&Vec<f64>> = batch.resolved().flatten().collect();
    let mut out = Vec::new();
    for i in 0..model.dim {
        let xs: Vec<f64> = alive.iter().map(|x| x[i]).collect();
        let (m, se) = mean_and_se(&xs);
        let (v, vse) = variance_and_se(&xs);
        let mut r = base_report(&format!("terminal-mean:x{}", i + 1), s, &batch);
        r.estimate = m;
        r.std_error = se;
        r.extras.insert("survivors".into(), xs.len() as f64);
        out.push(r);
        let mut r = base_report(&format!("terminal-variance:x{}", i + 1), s, &batch);
        r.estimate = v;
        r.std_error = vse;
        r.extras.insert("survivors".into(), xs.len() as f64);
        out.push(r);
    }
    Ok(out)
}
