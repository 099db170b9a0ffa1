//! Subcommand execution and artifact writing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use domsde_core::coeffs::{ellipticity_bounds, LyapunovData};
use domsde_core::estimators::{
    exp_functional, explosion_probability, girsanov_expectation, krylov_ratio, mean_lifetime, run_moment,
    sup_exp_moment, terminal_moments, Estimate, KrylovFunction, McSettings, MonteCarloReport, MAX_UNRESOLVED_FRACTION,
};
use domsde_core::integrate::{map_paths, Lifetime, PathCounters, PathRecord};
use domsde_core::lyapunov::{
    check_condition_h, check_drift_condition, check_elliptic_condition, check_ellipticity, check_lipschitz_a,
    lp_lq_norm, potential_growth, theorem_constants, GrowthReport, LyapunovCertificate, NormReport, TheoremConstants,
};
use domsde_core::models::ModelSpec;
use domsde_core::stats::default_workers;
use domsde_core::SpaceTimePoint;
use serde::Serialize;

use crate::config::{AltDrift, Exponents, RunConfig};
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA: &str = "domsde-report/1";

/// Exit status when a report is flagged invalid.
pub const EXIT_INVALID: i32 = 2;

/// Grid points used as ray origins when probing the potential near the boundary.
const GROWTH_SEEDS: usize = 64;
/// Rays longer than this are treated as never reaching the boundary.
const GROWTH_REACH: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Lifetime,
    Moments,
    CheckLyapunov,
    Krylov,
    Runs,
    Girsanov,
    Norm,
    Constants,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Simulate,
        Command::Lifetime,
        Command::Moments,
        Command::CheckLyapunov,
        Command::Krylov,
        Command::Runs,
        Command::Girsanov,
        Command::Norm,
        Command::Constants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Lifetime => "lifetime",
            Command::Moments => "moments",
            Command::CheckLyapunov => "check-lyapunov",
            Command::Krylov => "krylov",
            Command::Runs => "runs",
            Command::Girsanov => "girsanov",
            Command::Norm => "norm",
            Command::Constants => "constants",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedNorm {
    pub name: String,
    #[serde(flatten)]
    pub norm: NormReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub path_id: u64,
    pub lifetime: Lifetime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unresolved: Option<String>,
    pub counters: PathCounters,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_state: Option<Vec<f64>>,
}

/// Contents of report.json.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub toolkit_version: &'static str,
    pub command: &'static str,
    pub config_digest: String,
    pub model: String,
    pub model_params: BTreeMap<String, f64>,
    pub seed: u64,
    pub n_paths: usize,
    pub horizon: f64,
    pub start: SpaceTimePoint,
    pub valid: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<MonteCarloReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub certificates: Vec<LyapunovCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_growth: Option<GrowthReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<TheoremConstants>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub norms: Vec<NamedNorm>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub summary: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathSummary>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// A finished run: the report plus any CSV files, not yet on disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub csv: Vec<(String, String)>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.valid {
            0
        } else {
            EXIT_INVALID
        }
    }

    /// Writes report.json and the CSV files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("report.json");
        std::fs::write(&path, self.report.to_json()).map_err(|e| CliError::io(&path, e))?;
        for (name, body) in &self.csv {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

struct Context {
    model: ModelSpec,
    start: SpaceTimePoint,
    settings: McSettings,
    report: Report,
}

fn prepare(cmd: Command, cfg: &RunConfig) -> Result<Context, CliError> {
    cfg.validate()?;
    let mut model = cfg.model.build()?;
    if let Some(spec) = &cfg.domain {
        let domain = spec.build()?;
        if domain.dim() != model.dim {
            return Err(CliError::Config(format!(
                "domain has dimension {}, model {} has {}",
                domain.dim(),
                model.name,
                model.dim
            )));
        }
        model.domain = domain;
    }
    let start = SpaceTimePoint::new(
        cfg.start_time.unwrap_or(model.default_start.t),
        cfg.start.clone().unwrap_or_else(|| model.default_start.x.clone()),
    );
    if start.dim() != model.dim {
        return Err(CliError::Config(format!(
            "start has {} coordinates, model {} has {}",
            start.dim(),
            model.name,
            model.dim
        )));
    }
    if !model.domain.contains(&start)? {
        return Err(CliError::Config(format!(
            "start (t={}, x={:?}) lies outside the domain",
            start.t, start.x
        )));
    }
    let digest = cfg.digest();
    let mut settings = McSettings::new(cfg.n_paths, cfg.seed)
        .with_policy(cfg.policy.clone())
        .with_workers(cfg.workers.unwrap_or_else(default_workers));
    settings.config_digest = Some(digest.clone());
    let report = Report {
        schema: SCHEMA,
        toolkit_version: VERSION,
        command: cmd.name(),
        config_digest: digest,
        model: model.name.clone(),
        model_params: model.params.clone(),
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        horizon: cfg.horizon,
        start: start.clone(),
        valid: true,
        warnings: model.warnings.clone(),
        estimates: Vec::new(),
        certificates: Vec::new(),
        potential_growth: None,
        constants: None,
        norms: Vec::new(),
        summary: BTreeMap::new(),
        paths: Vec::new(),
    };
    Ok(Context {
        model,
        start,
        settings,
        report,
    })
}

/// Runs `cmd` without touching the filesystem.
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut ctx = prepare(cmd, cfg)?;
    let mut csv = Vec::new();
    let mut per_path: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    match cmd {
        Command::Simulate => simulate(&mut ctx, cfg, &mut csv)?,
        Command::Lifetime => {
            for est in [
                explosion_probability(&ctx.model, &ctx.start, cfg.horizon, &ctx.settings)?,
                mean_lifetime(&ctx.model, &ctx.start, cfg.horizon, &ctx.settings)?,
            ] {
                push_estimate(&mut ctx.report, &mut per_path, est);
            }
        }
        Command::Moments => moments(&mut ctx, cfg, &mut per_path)?,
        Command::CheckLyapunov => check_lyapunov(&mut ctx, cfg)?,
        Command::Krylov => krylov(&mut ctx, cfg)?,
        Command::Runs => {
            let until = cfg.runs.until.unwrap_or(cfg.horizon);
            let est = run_moment(
                &ctx.model,
                &ctx.start,
                until,
                cfg.runs.level,
                cfg.runs.alpha,
                &ctx.settings,
            )?;
            push_estimate(&mut ctx.report, &mut per_path, est);
        }
        Command::Girsanov => girsanov(&mut ctx, cfg, &mut per_path)?,
        Command::Norm => norm(&mut ctx, cfg)?,
        Command::Constants => {
            let c = resolve_constants(
                &ctx.model,
                cfg.constants.exponents(),
                cfg.constants.level,
                cfg.constants.grid,
                cfg.horizon,
            )?;
            ctx.report.constants = Some(c);
        }
    }
    ctx.report.valid = ctx.report.estimates.iter().all(|r| r.valid);
    if cfg.output.paths && !per_path.is_empty() {
        csv.push(("per_path.csv".into(), per_path_csv(&per_path)));
    }
    Ok(Outcome {
        report: ctx.report,
        csv,
    })
}

/// Executes `cmd`, writes the artifacts into `cfg.out` and returns the exit status.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<i32, CliError> {
    let outcome = execute(cmd, cfg)?;
    outcome.write(&cfg.out)?;
    Ok(outcome.exit_code())
}

fn push_estimate(report: &mut Report, per_path: &mut Vec<(String, Vec<Option<f64>>)>, est: Estimate) {
    per_path.push((est.report.estimand.clone(), est.per_path));
    report.estimates.push(est.report);
}

fn per_path_csv(cols: &[(String, Vec<Option<f64>>)]) -> String {
    let mut out = String::from("path_id");
    for (name, _) in cols {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let n = cols.iter().map(|c| c.1.len()).max().unwrap_or(0);
    for i in 0..n {
        write!(out, "{i}").unwrap();
        for (_, vals) in cols {
            out.push(',');
            if let Some(Some(v)) = vals.get(i) {
                write!(out, "{v:?}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Rows `path_id,t,x_1..x_d,alive`; a killed path ends with a row at `ξ`
/// with empty coordinates and `alive = 0`.
fn path_rows(rec: &PathRecord, thin: usize) -> String {
    let mut out = String::new();
    let n = rec.len();
    for k in 0..n {
        if k % thin != 0 && k + 1 != n {
            continue;
        }
        write!(out, "{},{:?}", rec.path_index, rec.abs_time(k)).unwrap();
        for v in rec.state(k) {
            write!(out, ",{v:?}").unwrap();
        }
        out.push_str(",1\n");
    }
    if let Lifetime::Exited(xi) = rec.lifetime {
        write!(out, "{},{:?}", rec.path_index, rec.start.t + xi).unwrap();
        for _ in 0..rec.dim {
            out.push(',');
        }
        out.push_str(",0\n");
    }
    out
}

fn simulate(ctx: &mut Context, cfg: &RunConfig, csv: &mut Vec<(String, String)>) -> Result<(), CliError> {
    let emit = cfg.output.paths;
    let thin = cfg.output.thin;
    let s = &ctx.settings;
    let results = map_paths(
        &ctx.model.coeffs,
        &ctx.model.domain,
        &ctx.start,
        cfg.horizon,
        &s.policy,
        s.seed,
        s.n_paths,
        s.workers,
        |rec| {
            let rows = if emit { path_rows(&rec, thin) } else { String::new() };
            let summary = PathSummary {
                path_id: rec.path_index,
                lifetime: rec.lifetime,
                unresolved: rec.unresolved.clone(),
                counters: rec.counters.clone(),
                final_state: (!rec.is_cemetery()).then(|| rec.final_state().to_vec()),
            };
            (summary, rows, rec.max_step())
        },
    )?;
    let n = results.len();
    let unresolved = results.iter().filter(|r| r.0.unresolved.is_some()).count();
    let used = n - unresolved;
    let exited = results
        .iter()
        .filter(|r| r.0.unresolved.is_none() && r.0.lifetime.exited())
        .count();
    let frac = if used > 0 {
        exited as f64 / used as f64
    } else {
        f64::NAN
    };
    let mut warnings = Vec::new();
    let valid = used > 0 && (unresolved as f64) <= MAX_UNRESOLVED_FRACTION * n as f64;
    if unresolved > 0 {
        warnings.push(format!("{unresolved} of {n} paths unresolved"));
    }
    let clips: u64 = results.iter().map(|r| r.0.counters.drift_clips).sum();
    if clips > 0 {
        warnings.push(format!("{clips} drift clips in total"));
    }
    let mut extras = BTreeMap::new();
    extras.insert(
        "total_steps".into(),
        results.iter().map(|r| r.0.counters.steps as f64).sum(),
    );
    extras.insert("total_drift_clips".into(), clips as f64);
    ctx.report.estimates.push(MonteCarloReport {
        estimand: "exit-fraction".into(),
        estimate: frac,
        std_error: (frac * (1.0 - frac) / used as f64).sqrt(),
        n_paths: n,
        n_used: used,
        n_unresolved: unresolved,
        effective_sample_size: None,
        seed: s.seed,
        config_digest: s.config_digest.clone(),
        valid,
        warnings,
        max_step: results.iter().map(|r| r.2).fold(0.0, f64::max),
        extras,
    });
    if emit {
        let mut body = String::from("path_id,t");
        for i in 1..=ctx.model.dim {
            write!(body, ",x_{i}").unwrap();
        }
        body.push_str(",alive\n");
        for r in &results {
            body.push_str(&r.1);
        }
        csv.push(("paths.csv".into(), body));
    }
    ctx.report.paths = results.into_iter().map(|r| r.0).collect();
    Ok(())
}

/// Fills missing exponents from the model and bounds `K` from the
/// ellipticity of `σσ*` on the given exhaustion level.
pub fn resolve_constants(
    model: &ModelSpec,
    ex: Exponents,
    level: u32,
    grid: usize,
    horizon: f64,
) -> Result<TheoremConstants, CliError> {
    let lyap = model.lyapunov();
    let eps = ex.epsilon.or(lyap.map(|l| l.epsilon)).unwrap_or(0.0);
    let k1 = ex.k1.or(lyap.map(|l| l.k1)).unwrap_or(0.0);
    let k = match ex.k {
        Some(k) => k,
        None => {
            let region = model.domain.exhaustion_level(level);
            let (lo, hi) = ellipticity_bounds(model.coeffs.diffusion(), &region, grid)?;
            hi.max(1.0 / lo)
        }
    };
    Ok(theorem_constants(eps, k1, k, horizon)?)
}

fn moments(ctx: &mut Context, cfg: &RunConfig, per_path: &mut Vec<(String, Vec<Option<f64>>)>) -> Result<(), CliError> {
    let spec = &cfg.moments;
    if ctx.model.potential().is_some() {
        let c = resolve_constants(&ctx.model, spec.exponents(), spec.level, spec.grid, cfg.horizon)?;
        ctx.report.constants = Some(c);
        let est = sup_exp_moment(&ctx.model, &c, &ctx.start, cfg.horizon, &ctx.settings)?;
        push_estimate(&mut ctx.report, per_path, est);
    } else {
        ctx.report.warnings.push(format!(
            "model {} has no potential; sup-exp moment skipped",
            ctx.model.name
        ));
    }
    if spec.terminal {
        let reports = terminal_moments(&ctx.model, &ctx.start, cfg.horizon, &ctx.settings)?;
        ctx.report.estimates.extend(reports);
    }
    if let Some(ef) = &spec.exp_functional {
        let g = ef.g.compile(&ctx.model)?;
        let est = exp_functional(&ctx.model, &g, ef.kappa, &ctx.start, cfg.horizon, &ctx.settings)?;
        push_estimate(&mut ctx.report, per_path, est);
    }
    Ok(())
}

fn check_lyapunov(ctx: &mut Context, cfg: &RunConfig) -> Result<(), CliError> {
    let spec = &cfg.lyapunov;
    let model = &ctx.model;
    let region = model.domain.exhaustion_level(spec.level);
    let diff = model.coeffs.diffusion();
    let mut certs = Vec::new();
    if let Some(pot) = model.potential() {
        let declared_k1 = spec.k1.or(model.lyapunov().map(|l| l.k1));
        certs.push(check_drift_condition(pot, &region, spec.grid, declared_k1)?);
        let growth = potential_growth(pot, &model.domain, &region, spec.grid, GROWTH_SEEDS, GROWTH_REACH, 30)?;
        if growth.min_ratio < 1.0 {
            ctx.report.warnings.push(format!(
                "phi drops by a factor {:.3e} along some ray towards the boundary",
                growth.min_ratio
            ));
        }
        ctx.report.potential_growth = Some(growth);
        let lyap = match (spec.h, model.lyapunov()) {
            (Some(h), base) => {
                let eps = spec.epsilon.or(base.map(|l| l.epsilon)).unwrap_or(0.0);
                let k1 = declared_k1.unwrap_or(0.0);
                Some(LyapunovData::constant_h(h, eps, k1)?)
            }
            (None, Some(base)) => {
                let mut l = base.clone();
                if let Some(e) = spec.epsilon {
                    l.epsilon = e;
                }
                if let Some(k1) = spec.k1 {
                    l.k1 = k1;
                }
                Some(l)
            }
            (None, None) => None,
        };
        match lyap {
            Some(l) => {
                certs.push(check_elliptic_condition(
                    pot,
                    diff,
                    &model.domain,
                    &region,
                    spec.grid,
                    spec.moll_width,
                    &l,
                )?);
                if spec.integrability {
                    certs.push(check_condition_h(
                        &l.h,
                        &model.domain,
                        cfg.horizon,
                        spec.integrability_a,
                        spec.integrability_r,
                        spec.integrability_samples,
                        cfg.seed,
                    )?);
                }
            }
            None => ctx.report.warnings.push(format!(
                "model {} declares no h; set lyapunov.h to check the elliptic inequality",
                model.name
            )),
        }
    } else {
        ctx.report.warnings.push(format!(
            "model {} has no potential; only the diffusion is checked",
            model.name
        ));
    }
    certs.push(check_ellipticity(diff, &region, spec.grid, spec.k)?);
    certs.push(check_lipschitz_a(diff, &region, spec.grid, spec.k)?);
    ctx.report.certificates = certs;
    Ok(())
}

fn in_box(x: &[f64], lo: &[f64], hi: &[f64]) -> bool {
    x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
}

fn krylov(ctx: &mut Context, cfg: &RunConfig) -> Result<(), CliError> {
    let spec = &cfg.krylov;
    if spec.functions.is_empty() {
        return Err(CliError::Config(
            "krylov needs at least one entry in krylov.functions".into(),
        ));
    }
    let mut family = Vec::new();
    for fs in &spec.functions {
        if fs.lo.len() != ctx.model.dim || fs.hi.len() != ctx.model.dim {
            return Err(CliError::Config(format!(
                "krylov function {} needs a box of dimension {}",
                fs.name, ctx.model.dim
            )));
        }
        let f = fs.f.compile(&ctx.model)?;
        for &c in &spec.scales {
            let (f, lo, hi) = (f.clone(), fs.lo.clone(), fs.hi.clone());
            let name = if spec.scales.len() > 1 {
                format!("{}*{c}", fs.name)
            } else {
                fs.name.clone()
            };
            family.push(KrylovFunction {
                name,
                f: Arc::new(move |t, x| if in_box(x, &lo, &hi) { c * f(t, x) } else { 0.0 }),
                lo: fs.lo.clone(),
                hi: fs.hi.clone(),
            });
        }
    }
    let out = krylov_ratio(
        &ctx.model,
        &family,
        &ctx.start,
        spec.from,
        cfg.horizon,
        spec.p,
        spec.q,
        spec.grid,
        &ctx.settings,
    )?;
    ctx.report.summary.insert("max_ratio".into(), out.max_ratio);
    ctx.report.estimates.extend(out.reports);
    Ok(())
}

fn girsanov(
    ctx: &mut Context,
    cfg: &RunConfig,
    per_path: &mut Vec<(String, Vec<Option<f64>>)>,
) -> Result<(), CliError> {
    let drift = cfg.girsanov.drift.clone();
    let b2 = move |_t: f64, x: &[f64], out: &mut [f64]| match drift {
        AltDrift::Zero => out.fill(0.0),
        AltDrift::Constant { value } => out.fill(value),
        AltDrift::Linear { c } => {
            for (o, v) in out.iter_mut().zip(x) {
                *o = -c * v;
            }
        }
    };
    let f = cfg.girsanov.test_function.compile(&ctx.model)?;
    let t_end = ctx.start.t + cfg.horizon;
    let test = move |x: &[f64]| f(t_end, x);
    let out = girsanov_expectation(&ctx.model, &b2, &test, &ctx.start, cfg.horizon, &ctx.settings)?;
    push_estimate(&mut ctx.report, per_path, out.weights);
    push_estimate(&mut ctx.report, per_path, out.reweighted);
    Ok(())
}

fn norm(ctx: &mut Context, cfg: &RunConfig) -> Result<(), CliError> {
    let spec = &cfg.norm;
    let f = spec.f.compile(&ctx.model)?;
    let s = ctx.start.t + spec.from;
    let t = ctx.start.t + spec.to.unwrap_or(cfg.horizon);
    match (&spec.lo, &spec.hi) {
        (Some(lo), Some(hi)) => {
            let g = f.clone();
            let norm = lp_lq_norm(&move |t, x| g(t, x), s, t, lo, hi, spec.p, spec.q, spec.grid)?;
            ctx.report.norms.push(NamedNorm {
                name: "box".into(),
                norm,
            });
        }
        (None, None) => {
            for &n in &spec.levels {
                let region = ctx.model.domain.exhaustion_level(n);
                if region.is_degenerate() {
                    ctx.report
                        .warnings
                        .push(format!("exhaustion level {n} is empty; skipped"));
                    continue;
                }
                let bbox = region.bbox().clone();
                let (s_n, t_n) = (s.max(bbox.t_lo), t.min(bbox.t_hi));
                if !(s_n < t_n) {
                    ctx.report
                        .warnings
                        .push(format!("time window does not meet exhaustion level {n}; skipped"));
                    continue;
                }
                let g = f.clone();
                let norm = lp_lq_norm(
                    &move |t, x| if region.contains(t, x) { g(t, x) } else { 0.0 },
                    s_n,
                    t_n,
                    &bbox.lo,
                    &bbox.hi,
                    spec.p,
                    spec.q,
                    spec.grid,
                )?;
                ctx.report.norms.push(NamedNorm {
                    name: format!("level-{n}"),
                    norm,
                });
            }
        }
        _ => return Err(CliError::Config("norm.lo and norm.hi must be given together".into())),
    }
    Ok(())
}
