//! Builtin models: three singular-drift examples, random media, interacting particles
//! and a few validation toys with closed-form answers.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientSet, DiffusionField, LyapunovData, PotentialField, VectorFn};
use crate::domain::SpaceTimeDomain;
use crate::error::{Result, SdeError};
use crate::point::{norm, SpaceTimePoint};
use crate::rng::PathStream;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub analytic_gradient: bool,
    pub analytic_jacobian: bool,
    pub oracle_available: bool,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub domain: SpaceTimeDomain,
    pub coeffs: CoefficientSet,
    pub params: BTreeMap<String, f64>,
    pub caps: Capabilities,
    pub default_start: SpaceTimePoint,
    pub warnings: Vec<String>,
}

impl ModelSpec {
    pub fn potential(&self) -> Option<&PotentialField> {
        self.coeffs.potential()
    }

    pub fn lyapunov(&self) -> Option<&LyapunovData> {
        self.potential().and_then(|p| p.lyapunov())
    }
}

/// Diffusion coefficients used by the builtin models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SigmaFamily {
    /// `c·I`.
    Constant { c: f64 },
    /// `diag(2 + sin xᵢ)`.
    SinShift,
    /// `diag((1 + xᵢ²)⁻¹)`.
    Rational,
    /// `ln(2 + |x|²)·I`.
    LogRadial,
}

impl Default for SigmaFamily {
    fn default() -> Self {
        SigmaFamily::Constant { c: 1.0 }
    }
}

impl SigmaFamily {
    pub fn field(&self, dim: usize) -> DiffusionField {
        match *self {
            SigmaFamily::Constant { c } => DiffusionField::scalar_constant(dim, c),
            SigmaFamily::SinShift => DiffusionField::new(
                dim,
                Arc::new(|_, x: &[f64], m: &mut DMatrix<f64>| {
                    m.fill(0.0);
                    for (i, v) in x.iter().enumerate() {
                        m[(i, i)] = 2.0 + v.sin();
                    }
                }),
            )
            .with_jacobian(Arc::new(|_, x: &[f64], out: &mut [DMatrix<f64>]| {
                for (k, m) in out.iter_mut().enumerate() {
                    m[(k, k)] = x[k].cos();
                }
            }))
            .with_ellipticity(1.0, 9.0),
            SigmaFamily::Rational => DiffusionField::new(
                dim,
                Arc::new(|_, x: &[f64], m: &mut DMatrix<f64>| {
                    m.fill(0.0);
                    for (i, v) in x.iter().enumerate() {
                        m[(i, i)] = 1.0 / (1.0 + v * v);
                    }
                }),
            )
            .with_jacobian(Arc::new(|_, x: &[f64], out: &mut [DMatrix<f64>]| {
                for (k, m) in out.iter_mut().enumerate() {
                    let q = 1.0 + x[k] * x[k];
                    m[(k, k)] = -2.0 * x[k] / (q * q);
                }
            })),
            SigmaFamily::LogRadial => DiffusionField::new(
                dim,
                Arc::new(|_, x: &[f64], m: &mut DMatrix<f64>| {
                    m.fill(0.0);
                    m.fill_diagonal((2.0 + x.iter().map(|v| v * v).sum::<f64>()).ln());
                }),
            )
            .with_jacobian(Arc::new(|_, x: &[f64], out: &mut [DMatrix<f64>]| {
                let q = 2.0 + x.iter().map(|v| v * v).sum::<f64>();
                for (k, m) in out.iter_mut().enumerate() {
                    m.fill_diagonal(2.0 * x[k] / q);
                }
            })),
        }
    }
}

/// `diag(σ(x⁽¹⁾), …, σ(x⁽ᵐ⁾))` for a block field `σ` on `R^d`.
pub fn block_diagonal(block: DiffusionField, m: usize) -> DiffusionField {
    let d = block.dim();
    let jac_block = block.has_jacobian();
    let base = Arc::new(block);
    let sigma = {
        let base = base.clone();
        Arc::new(move |t: f64, x: &[f64], out: &mut DMatrix<f64>| {
            out.fill(0.0);
            let mut s = DMatrix::zeros(d, d);
            for k in 0..m {
                base.sigma_into(t, &x[k * d..(k + 1) * d], &mut s);
                out.view_mut((k * d, k * d), (d, d)).copy_from(&s);
            }
        })
    };
    let field = DiffusionField::new(m * d, sigma);
    if !jac_block {
        return field;
    }
    field.with_jacobian(Arc::new(move |t, x: &[f64], out: &mut [DMatrix<f64>]| {
        for k in 0..m {
            let jac = base
                .jacobian(t, &x[k * d..(k + 1) * d])
                .expect("block field has a jacobian");
            for (i, ji) in jac.iter().enumerate() {
                out[k * d + i].view_mut((k * d, k * d), (d, d)).copy_from(ji);
            }
        }
    }))
}

/// Pair interactions `V(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PairPotential {
    /// `c (1 + |z|²)^{-α}`.
    PowerLaw { c: f64, alpha: f64 },
    /// `|z|^{-β} + tether·|z|`.
    HardCore { beta: f64, tether: f64 },
    /// `c |z|²`.
    Quadratic { c: f64 },
}

impl Default for PairPotential {
    fn default() -> Self {
        PairPotential::PowerLaw { c: 1.0, alpha: 2.0 }
    }
}

impl PairPotential {
    pub fn value(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|v| v * v).sum();
        match *self {
            PairPotential::PowerLaw { c, alpha } => c * (1.0 + r2).powf(-alpha),
            PairPotential::HardCore { beta, tether } => {
                let r = r2.sqrt();
                r.powf(-beta) + tether * r
            }
            PairPotential::Quadratic { c } => c * r2,
        }
    }

    /// Adds `∇V(z)` to `out`.
    pub fn add_gradient(&self, z: &[f64], out: &mut [f64]) {
        let r2: f64 = z.iter().map(|v| v * v).sum();
        let f = match *self {
            PairPotential::PowerLaw { c, alpha } => -2.0 * alpha * c * (1.0 + r2).powf(-alpha - 1.0),
            PairPotential::HardCore { beta, tether } => {
                let r = r2.sqrt();
                -beta * r.powf(-beta - 2.0) + tether / r
            }
            PairPotential::Quadratic { c } => 2.0 * c,
        };
        for (o, v) in out.iter_mut().zip(z) {
            *o += f * v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PairPotential::PowerLaw { c, alpha } => c >= 0.0 && alpha > 0.0,
            PairPotential::HardCore { beta, tether } => beta > 0.0 && tether >= 0.0,
            PairPotential::Quadratic { c } => c >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SdeError::Parameter(format!("invalid pair potential {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoParams {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Example62Params {
    pub delta: f64,
    /// Constant `h`; grid-maximized when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl Default for Example62Params {
    fn default() -> Self {
        Self { delta: 0.5, c: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonParams {
    pub intensity: f64,
    pub half_width: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomMediaParams {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poisson: Option<PoissonParams>,
    pub potential: PairPotential,
    pub rho: f64,
    pub sigma: SigmaFamily,
    /// Impurities farther than this from the origin are dropped.
    pub window: f64,
    pub admissibility_c: f64,
    pub admissibility_r: Vec<f64>,
}

impl Default for RandomMediaParams {
    fn default() -> Self {
        Self {
            dim: 2,
            points: Vec::new(),
            poisson: None,
            potential: PairPotential::default(),
            rho: 0.1,
            sigma: SigmaFamily::default(),
            window: 1e3,
            admissibility_c: 10.0,
            admissibility_r: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleParams {
    pub m: usize,
    pub dim: usize,
    pub potential: PairPotential,
    pub sigma: SigmaFamily,
    /// Scale `C` of the confining `U(z) = C (1 + |z|²)`.
    pub c_u: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        Self {
            m: 2,
            dim: 1,
            potential: PairPotential::HardCore { beta: 1.0, tether: 0.0 },
            sigma: SigmaFamily::default(),
            c_u: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyParams {
    pub dim: usize,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self { dim: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GirsanovParams {
    pub dim: usize,
    pub theta: f64,
}

impl Default for GirsanovParams {
    fn default() -> Self {
        Self { dim: 1, theta: 0.7 }
    }
}

/// A builtin model reference with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "kebab-case")]
pub enum ModelConfig {
    #[serde(rename = "example-6-1-1")]
    Example611(NoParams),
    #[serde(rename = "example-6-1-2")]
    Example612(NoParams),
    #[serde(rename = "example-6-2")]
    Example62(Example62Params),
    RandomMedia(RandomMediaParams),
    Particles(ParticleParams),
    Bm(ToyParams),
    Ou(ToyParams),
    BesselDrift(NoParams),
    GirsanovToy(GirsanovParams),
}

impl ModelConfig {
    pub const NAMES: [&'static str; 9] = [
        "example-6-1-1",
        "example-6-1-2",
        "example-6-2",
        "random-media",
        "particles",
        "bm",
        "ou",
        "bessel-drift",
        "girsanov-toy",
    ];

    /// The model with default parameters.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "example-6-1-1" => Self::Example611(NoParams {}),
            "example-6-1-2" => Self::Example612(NoParams {}),
            "example-6-2" => Self::Example62(Example62Params::default()),
            "random-media" => Self::RandomMedia(RandomMediaParams::default()),
            "particles" => Self::Particles(ParticleParams::default()),
            "bm" => Self::Bm(ToyParams::default()),
            "ou" => Self::Ou(ToyParams::default()),
            "bessel-drift" => Self::BesselDrift(NoParams {}),
            "girsanov-toy" => Self::GirsanovToy(GirsanovParams::default()),
            _ => return None,
        })
    }

    pub fn build(&self) -> Result<ModelSpec> {
        match self {
            Self::Example611(_) => Ok(make_example_611()),
            Self::Example612(_) => Ok(make_example_612()),
            Self::Example62(p) => make_example_62_with(p.delta, p.c),
            Self::RandomMedia(p) => make_random_media(p),
            Self::Particles(p) => make_particle_system(p),
            Self::Bm(p) => Ok(brownian_motion(p.dim)),
            Self::Ou(p) => Ok(ornstein_uhlenbeck(p.dim)),
            Self::BesselDrift(_) => Ok(bessel_drift()),
            Self::GirsanovToy(p) => Ok(girsanov_toy(p.dim, p.theta)),
        }
    }
}

fn zero_drift() -> VectorFn {
    Arc::new(|_, _, out: &mut [f64]| out.fill(0.0))
}

/// `b = -1/x`, `σ = (1 + x²)⁻¹` on `R₊ × (0, ∞)`.
pub fn make_example_611() -> ModelSpec {
    let coeffs = CoefficientSet::direct(
        Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = -1.0 / x[0]),
        SigmaFamily::Rational.field(1),
    );
    ModelSpec {
        name: "example-6-1-1".into(),
        dim: 1,
        domain: SpaceTimeDomain::half_line(),
        coeffs,
        params: BTreeMap::new(),
        caps: Capabilities {
            analytic_gradient: false,
            analytic_jacobian: true,
            oracle_available: false,
        },
        default_start: SpaceTimePoint::new(0.0, vec![1.0]),
        warnings: Vec::new(),
    }
}

/// `b(x) = x ln|x⁽¹⁾|`, `σ = ln(2 + |x|²) I` on the plane minus `{x⁽¹⁾ = 0}`.
pub fn make_example_612() -> ModelSpec {
    let coeffs = CoefficientSet::direct(
        Arc::new(|_, x: &[f64], out: &mut [f64]| {
            let l = x[0].abs().ln();
            out[0] = x[0] * l;
            out[1] = x[1] * l;
        }),
        SigmaFamily::LogRadial.field(2),
    );
    ModelSpec {
        name: "example-6-1-2".into(),
        dim: 2,
        domain: SpaceTimeDomain::punctured_plane(2, 0).expect("axis 0 of the plane"),
        coeffs,
        params: BTreeMap::new(),
        caps: Capabilities {
            analytic_gradient: false,
            analytic_jacobian: true,
            oracle_available: false,
        },
        default_start: SpaceTimePoint::new(0.0, vec![1.0, 1.0]),
        warnings: Vec::new(),
    }
}

/// `2Dₜφ + (σ²φ')'` for `φ = x^{-δ} + x`, `σ = 2 + sin x`.
fn sin_family_lhs(delta: f64, x: f64) -> f64 {
    let s = 2.0 + x.sin();
    let ds = x.cos();
    let dphi = -delta * x.powf(-delta - 1.0) + 1.0;
    let d2phi = delta * (delta + 1.0) * x.powf(-delta - 2.0);
    2.0 * s * ds * dphi + s * s * d2phi
}

/// Smallest `C` with `(σ²φ')' <= C e^{3φ/2}` on a log-spaced grid of
/// `[1e-3, 1e3]`, inflated by 5%.
pub fn sin_family_constant(delta: f64) -> f64 {
    let n = 20_000;
    let (lo, hi) = (1e-3f64.ln(), 1e3f64.ln());
    let sup = (0..=n)
        .map(|i| {
            let x = (lo + (hi - lo) * i as f64 / n as f64).exp();
            let phi = x.powf(-delta) + x;
            sin_family_lhs(delta, x) * (-1.5 * phi).exp()
        })
        .fold(0.0f64, f64::max);
    1.05 * sup
}

pub fn make_example_62(delta: f64) -> Result<ModelSpec> {
    make_example_62_with(delta, None)
}

/// `φ = |x|^{-δ} + |x|`, `σ = 2 + sin x` on `R₊ × (0, ∞)`, gradient type,
/// with Lyapunov data `ε = 3/2`, `K₁ = 0`, `h ≡ C`.
pub fn make_example_62_with(delta: f64, c: Option<f64>) -> Result<ModelSpec> {
    if !(delta > 0.0) {
        return Err(SdeError::Parameter(format!("delta must be positive, got {delta}")));
    }
    let c = c.unwrap_or_else(|| sin_family_constant(delta));
    let pot = PotentialField::new(Arc::new(move |_, x: &[f64]| {
        let r = x[0].abs();
        r.powf(-delta) + r
    }))
    .with_gradient(Arc::new(move |_, x: &[f64], g: &mut [f64]| {
        let r = x[0].abs();
        g[0] = (-delta * r.powf(-delta - 1.0) + 1.0) * x[0].signum();
    }))
    .with_time_derivative(Arc::new(|_, _| 0.0))
    .with_lyapunov(LyapunovData::constant_h(c, 1.5, 0.0)?);
    let coeffs = CoefficientSet::gradient(pot, SigmaFamily::SinShift.field(1));
    Ok(ModelSpec {
        name: "example-6-2".into(),
        dim: 1,
        domain: SpaceTimeDomain::half_line(),
        coeffs,
        params: BTreeMap::from([("delta".into(), delta), ("c".into(), c)]),
        caps: Capabilities {
            analytic_gradient: true,
            analytic_jacobian: true,
            oracle_available: false,
        },
        default_start: SpaceTimePoint::new(0.0, vec![1.0]),
        warnings: Vec::new(),
    })
}

/// Uniform points of a Poisson process on `[-w, w]^d`.
pub fn poisson_configuration(dim: usize, p: &PoissonParams) -> Vec<Vec<f64>> {
    let mut stream = PathStream::new(p.seed, 0);
    let volume = (2.0 * p.half_width).powi(dim as i32);
    let n = stream.poisson(p.intensity * volume);
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| p.half_width * (2.0 * stream.uniform() - 1.0))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusCheck {
    pub r: f64,
    pub pass: bool,
    /// Largest `|γ ∩ B_r(x)| / bound(x)` over the samples.
    pub worst_ratio: f64,
    pub worst_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub c: f64,
    pub pass: bool,
    pub radii: Vec<RadiusCheck>,
    pub samples: usize,
}

/// Checks `|γ ∩ B_r(x)| <= c · max(log(1 + |x|), log 2)` at lattice sample
/// points covering the configuration.
pub fn admissibility_check(gamma: &[Vec<f64>], c: f64, radii: &[f64]) -> AdmissibilityReport {
    let dim = gamma.first().map_or(1, |g| g.len());
    let reach = gamma
        .iter()
        .flat_map(|g| g.iter().map(|v| v.abs()))
        .fold(1.0f64, f64::max);
    let per_axis = match dim {
        1 => 401,
        2 => 61,
        3 => 15,
        _ => 5,
    };
    let samples: Vec<Vec<f64>> = {
        let axis: Vec<f64> = crate::grid::linspace(-reach, reach, per_axis);
        let total = per_axis.pow(dim as u32);
        (0..total)
            .map(|mut i| {
                (0..dim)
                    .map(|_| {
                        let v = axis[i % per_axis];
                        i /= per_axis;
                        v
                    })
                    .collect()
            })
            .collect()
    };
    let radii: Vec<RadiusCheck> = radii
        .iter()
        .map(|&r| {
            let mut worst = (0.0f64, vec![0.0; dim]);
            for x in &samples {
                let count = gamma
                    .iter()
                    .filter(|y| y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < r * r)
                    .count() as f64;
                let bound = c * (1.0 + norm(x)).ln().max(std::f64::consts::LN_2);
                if count / bound > worst.0 {
                    worst = (count / bound, x.clone());
                }
            }
            RadiusCheck {
                r,
                pass: worst.0 <= 1.0,
                worst_ratio: worst.0,
                worst_x: worst.1,
            }
        })
        .collect();
    AdmissibilityReport {
        c,
        pass: radii.iter().all(|r| r.pass),
        radii,
        samples: samples.len(),
    }
}

/// Potential `φ(x) = Σ_{y∈γ} V(x - y)` on `R^d` minus closed `ρ`-balls around `γ`.
pub fn make_random_media(p: &RandomMediaParams) -> Result<ModelSpec> {
    p.potential.validate()?;
    if !(p.rho > 0.0) || p.dim == 0 {
        return Err(SdeError::Parameter("random media needs rho > 0 and dim >= 1".into()));
    }
    let mut gamma = p.points.clone();
    if let Some(pp) = &p.poisson {
        gamma.extend(poisson_configuration(p.dim, pp));
    }
    if let Some(g) = gamma.iter().find(|g| g.len() != p.dim) {
        return Err(SdeError::DimensionMismatch {
            expected: p.dim,
            got: g.len(),
        });
    }
    let (kept, dropped): (Vec<_>, Vec<_>) = gamma.into_iter().partition(|y| norm(y) <= p.window);
    let domain = SpaceTimeDomain::excluded_balls(p.dim, &kept, p.rho)?.with_name("random-media");

    let start = (0..1000)
        .map(|i| vec![0.5 * p.rho * i as f64; p.dim])
        .find(|x| domain.contains_raw(0.0, x))
        .ok_or_else(|| SdeError::Parameter("no free start point found near the origin".into()))?;
    let mut tail = vec![0.0; p.dim];
    for y in &dropped {
        let z: Vec<f64> = start.iter().zip(y).map(|(a, b)| a - b).collect();
        let mut g = vec![0.0; p.dim];
        p.potential.add_gradient(&z, &mut g);
        for (t, v) in tail.iter_mut().zip(g) {
            *t += v.abs();
        }
    }

    let gamma = Arc::new(kept);
    let pair = p.potential.clone();
    let pot = {
        let (g1, g2, v1, v2) = (gamma.clone(), gamma.clone(), pair.clone(), pair);
        PotentialField::new(Arc::new(move |_, x: &[f64]| {
            let mut z = vec![0.0; x.len()];
            g1.iter()
                .map(|y| {
                    for i in 0..x.len() {
                        z[i] = x[i] - y[i];
                    }
                    v1.value(&z)
                })
                .sum()
        }))
        .with_gradient(Arc::new(move |_, x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            let mut z = vec![0.0; x.len()];
            for y in g2.iter() {
                for i in 0..x.len() {
                    z[i] = x[i] - y[i];
                }
                v2.add_gradient(&z, out);
            }
        }))
        .with_time_derivative(Arc::new(|_, _| 0.0))
    };
    let coeffs = CoefficientSet::gradient(pot, p.sigma.field(p.dim));
    let adm = admissibility_check(&gamma, p.admissibility_c, &p.admissibility_r);
    let mut warnings = Vec::new();
    if !adm.pass {
        let failing: Vec<String> = adm
            .radii
            .iter()
            .filter(|r| !r.pass)
            .map(|r| format!("r={}", r.r))
            .collect();
        warnings.push(format!(
            "configuration is not admissible for c={} at {}",
            adm.c,
            failing.join(", ")
        ));
    }
    let tail_bound = norm(&tail);
    if !dropped.is_empty() {
        warnings.push(format!(
            "{} impurities outside the window dropped; their gradient at the start is at most {tail_bound}",
            dropped.len()
        ));
    }
    Ok(ModelSpec {
        name: "random-media".into(),
        dim: p.dim,
        domain,
        coeffs,
        params: BTreeMap::from([
            ("rho".into(), p.rho),
            ("impurities".into(), gamma.len() as f64),
            ("dropped".into(), dropped.len() as f64),
            ("tail_gradient_bound".into(), tail_bound),
            ("admissible".into(), if adm.pass { 1.0 } else { 0.0 }),
        ]),
        caps: Capabilities {
            analytic_gradient: true,
            analytic_jacobian: true,
            oracle_available: false,
        },
        default_start: SpaceTimePoint::new(0.0, start),
        warnings,
    })
}

/// `M` particles in `R^d` interacting through `V`, with block-diagonal noise
/// and killing at collisions.
///
/// The Lyapunov potential is `Σ_{k<j} V̄(x⁽ᵏ⁾ - x⁽ʲ⁾)` with
/// `V̄ = V + 2U`, `U(z) = C(1 + |z|²)`; an extra drift
/// `4C a(x⁽ᵏ⁾) Σⱼ (x⁽ᵏ⁾ - x⁽ʲ⁾)` cancels the `U` part so the net drift is
/// `-a∇Σ_{k<j} V + ½∂a`.
pub fn make_particle_system(p: &ParticleParams) -> Result<ModelSpec> {
    if p.m < 2 {
        return Err(SdeError::Parameter(format!("need at least 2 particles, got {}", p.m)));
    }
    if p.dim == 0 || !(p.c_u >= 0.0) {
        return Err(SdeError::Parameter("particles need dim >= 1 and c_u >= 0".into()));
    }
    p.potential.validate()?;
    let (m, d, cu) = (p.m, p.dim, p.c_u);
    let pair = p.potential.clone();
    let vbar = move |z: &[f64]| pair.value(z) + 2.0 * cu * (1.0 + z.iter().map(|v| v * v).sum::<f64>());
    let pair = p.potential.clone();
    let grad_vbar = move |z: &[f64], out: &mut [f64]| {
        pair.add_gradient(z, out);
        for (o, v) in out.iter_mut().zip(z) {
            *o += 4.0 * cu * v;
        }
    };
    let pot = PotentialField::new(Arc::new(move |_, x: &[f64]| {
        let mut z = vec![0.0; d];
        let mut acc = 0.0;
        for k in 0..m {
            for j in k + 1..m {
                for i in 0..d {
                    z[i] = x[k * d + i] - x[j * d + i];
                }
                acc += vbar(&z);
            }
        }
        acc
    }))
    .with_gradient(Arc::new(move |_, x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        let mut z = vec![0.0; d];
        let mut g = vec![0.0; d];
        for k in 0..m {
            for j in k + 1..m {
                for i in 0..d {
                    z[i] = x[k * d + i] - x[j * d + i];
                }
                g.fill(0.0);
                grad_vbar(&z, &mut g);
                for i in 0..d {
                    out[k * d + i] += g[i];
                    out[j * d + i] -= g[i];
                }
            }
        }
    }))
    .with_time_derivative(Arc::new(|_, _| 0.0));
    let block = p.sigma.field(d);
    let diffusion = block_diagonal(block.clone(), m);
    let extra: VectorFn = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        let mut pull = vec![0.0; d];
        for k in 0..m {
            pull.fill(0.0);
            for j in 0..m {
                for i in 0..d {
                    pull[i] += x[k * d + i] - x[j * d + i];
                }
            }
            let a = block.a(t, &x[k * d..(k + 1) * d]);
            for i in 0..d {
                out[k * d + i] = 4.0 * cu * (0..d).map(|l| a[(i, l)] * pull[l]).sum::<f64>();
            }
        }
    });
    let coeffs = CoefficientSet::gradient(pot, diffusion).with_extra_drift(extra);
    let start: Vec<f64> = (0..m).flat_map(|k| std::iter::repeat_n(k as f64, d)).collect();
    Ok(ModelSpec {
        name: "particles".into(),
        dim: m * d,
        domain: SpaceTimeDomain::collision_free(m, d),
        coeffs,
        params: BTreeMap::from([("m".into(), m as f64), ("dim".into(), d as f64), ("c_u".into(), cu)]),
        caps: Capabilities {
            analytic_gradient: true,
            analytic_jacobian: true,
            oracle_available: false,
        },
        default_start: SpaceTimePoint::new(0.0, start),
        warnings: Vec::new(),
    })
}

fn toy(name: &str, dim: usize, domain: SpaceTimeDomain, coeffs: CoefficientSet, x0: f64) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        dim,
        domain,
        coeffs,
        params: BTreeMap::new(),
        caps: Capabilities {
            analytic_gradient: true,
            analytic_jacobian: true,
            oracle_available: true,
        },
        default_start: SpaceTimePoint::new(0.0, vec![x0; dim]),
        warnings: Vec::new(),
    }
}

pub fn brownian_motion(dim: usize) -> ModelSpec {
    let coeffs = CoefficientSet::direct(zero_drift(), DiffusionField::identity(dim));
    toy("bm", dim, SpaceTimeDomain::full_space(dim), coeffs, 0.0)
}

/// Gradient type with `φ = |x|²/2`, `σ = I`, so `b = -x`.
pub fn ornstein_uhlenbeck(dim: usize) -> ModelSpec {
    let pot = PotentialField::new(Arc::new(|_, x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>()))
        .with_gradient(Arc::new(|_, x: &[f64], g: &mut [f64]| g.copy_from_slice(x)))
        .with_time_derivative(Arc::new(|_, _| 0.0));
    let coeffs = CoefficientSet::gradient(pot, DiffusionField::identity(dim));
    toy("ou", dim, SpaceTimeDomain::full_space(dim), coeffs, 1.0)
}

/// `b = -1/x`, `σ = 1` on `(0, ∞)`; the lifetime has mean `x₀²`.
pub fn bessel_drift() -> ModelSpec {
    let coeffs = CoefficientSet::direct(
        Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = -1.0 / x[0]),
        DiffusionField::identity(1),
    );
    toy("bessel-drift", 1, SpaceTimeDomain::half_line(), coeffs, 1.0)
}

/// Brownian motion, paired with the constant drift `θ` as the alternative.
pub fn girsanov_toy(dim: usize, theta: f64) -> ModelSpec {
    let mut spec = brownian_motion(dim);
    spec.name = "girsanov-toy".into();
    spec.params.insert("theta".into(), theta);
    spec
}

/// The two drifts of the Girsanov toy: `0` and the constant `θ`.
pub fn girsanov_pair(theta: f64) -> (VectorFn, VectorFn) {
    (zero_drift(), Arc::new(move |_, _, out: &mut [f64]| out.fill(theta)))
}

pub fn make_validation_toys() -> Vec<ModelSpec> {
    vec![
        brownian_motion(1),
        ornstein_uhlenbeck(1),
        bessel_drift(),
        girsanov_toy(1, 0.7),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{divergence_correction, ellipticity_bounds};

    fn drift(spec: &ModelSpec, x: &[f64]) -> Vec<f64> {
        spec.coeffs.drift(&SpaceTimePoint::new(0.0, x.to_vec())).unwrap()
    }

    #[test]
    fn inverse_drift_values() {
        let m = make_example_611();
        assert_eq!(drift(&m, &[2.0]), vec![-0.5]);
        assert_eq!(m.coeffs.diffusion().sigma(0.0, &[1.0])[(0, 0)], 0.5);
        let region = m.domain.exhaustion_level(2);
        let (lo, hi) = ellipticity_bounds(m.coeffs.diffusion(), &region, 64).unwrap();
        assert!((lo - 0.04).abs() < 1e-12 && (hi - 0.64).abs() < 1e-12, "{lo} {hi}");
    }

    #[test]
    fn log_drift_plane_values() {
        let m = make_example_612();
        let e = std::f64::consts::E;
        let b = drift(&m, &[e, 1.0]);
        assert!((b[0] - e).abs() < 1e-15 && (b[1] - 1.0).abs() < 1e-15);
        assert_eq!(drift(&m, &[1.0, 5.0]), vec![0.0, 0.0]);
        assert!(!m.domain.contains_raw(0.0, &[0.0, 0.0]));
        let s = m.coeffs.diffusion().sigma(0.0, &[1.0, 0.0]);
        assert!((s[(0, 0)] - 3f64.ln()).abs() < 1e-15);
        assert_eq!(s[(0, 1)], 0.0);
    }

    #[test]
    fn sin_family_values() {
        let m = make_example_62(0.5).unwrap();
        assert_eq!(m.potential().unwrap().phi(0.0, &[4.0]), 4.5);
        let s = 2.0 + 1f64.sin();
        let expected = -0.5 * s * s + s * 1f64.cos();
        assert!((drift(&m, &[1.0])[0] - expected).abs() < 1e-12);
        let lyap = m.lyapunov().unwrap();
        assert_eq!((lyap.epsilon, lyap.k1), (1.5, 0.0));
        assert!(m.params["c"] > 0.0 && m.params["c"].is_finite());
        assert!(make_example_62(0.0).is_err());
    }

    #[test]
    fn sin_family_drift_condition() {
        let m = make_example_62(0.5).unwrap();
        let region = m.domain.exhaustion_level(2);
        let cert = crate::lyapunov::check_drift_condition(m.potential().unwrap(), &region, 16, Some(0.0)).unwrap();
        assert_eq!(cert.verdict, crate::lyapunov::Verdict::Pass);
        assert_eq!(cert.tightest_constant, Some(0.0));
    }

    #[test]
    fn random_media_values() {
        let empty = make_random_media(&RandomMediaParams::default()).unwrap();
        assert_eq!(empty.potential().unwrap().phi(0.0, &[0.3, 0.4]), 0.0);
        assert_eq!(drift(&empty, &[0.3, 0.4]), vec![0.0, 0.0]);

        let one = make_random_media(&RandomMediaParams {
            points: vec![vec![0.0, 0.0]],
            ..RandomMediaParams::default()
        })
        .unwrap();
        assert_eq!(one.potential().unwrap().phi(0.0, &[1.0, 0.0]), 0.25);
        assert!(!one.domain.contains_raw(1.0, &[0.1, 0.0]));
        assert!(one.domain.contains_raw(1.0, &[0.1 + 1e-12, 0.0]));
        assert!(one.default_start.x.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn lattice_is_not_admissible() {
        let mut lattice = Vec::new();
        for i in -50..=50 {
            for j in -50..=50 {
                if i * i + j * j <= 2500 {
                    lattice.push(vec![i as f64, j as f64]);
                }
            }
        }
        let rep = admissibility_check(&lattice, 2.0, &[1.5, 5.0, 10.0]);
        assert!(!rep.pass);
        assert!(!rep.radii[2].pass);
        let sparse = admissibility_check(&[vec![0.0, 0.0], vec![40.0, 0.0]], 2.0, &[1.5]);
        assert!(sparse.pass);
    }

    #[test]
    fn poisson_configuration_is_seeded() {
        let p = PoissonParams {
            intensity: 0.5,
            half_width: 5.0,
            seed: 11,
        };
        let a = poisson_configuration(2, &p);
        assert_eq!(a, poisson_configuration(2, &p));
        assert!((10..=90).contains(&a.len()));
        assert!(a.iter().flatten().all(|v| v.abs() <= 5.0));
    }

    #[test]
    fn particle_quadratic_pair() {
        let m = make_particle_system(&ParticleParams {
            m: 2,
            dim: 1,
            potential: PairPotential::Quadratic { c: 1.0 },
            sigma: SigmaFamily::Constant { c: 1.0 },
            c_u: 1.0,
        })
        .unwrap();
        let b = drift(&m, &[1.0, 0.0]);
        assert!((b[0] + 2.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12, "{b:?}");
        assert!(make_particle_system(&ParticleParams {
            m: 1,
            ..ParticleParams::default()
        })
        .is_err());
    }

    #[test]
    fn particle_forces_cancel() {
        let m = make_particle_system(&ParticleParams {
            m: 4,
            dim: 2,
            potential: PairPotential::PowerLaw { c: 1.5, alpha: 1.0 },
            sigma: SigmaFamily::Constant { c: 0.7 },
            c_u: 0.3,
        })
        .unwrap();
        let x = [0.1, -0.4, 1.3, 0.2, -0.7, 0.9, 2.0, -1.1];
        let b = drift(&m, &x);
        for i in 0..2 {
            let total: f64 = (0..4).map(|k| b[k * 2 + i]).sum();
            assert!(total.abs() < 1e-10);
        }
        let s = m.coeffs.diffusion().sigma(0.0, &x);
        assert_eq!(s.view((0, 2), (2, 2)).iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn particle_block_sigma_and_collisions() {
        let m = make_particle_system(&ParticleParams {
            m: 3,
            dim: 1,
            sigma: SigmaFamily::SinShift,
            ..ParticleParams::default()
        })
        .unwrap();
        let x = [0.3, 1.0, -2.0];
        let s = m.coeffs.diffusion().sigma(0.0, &x);
        for k in 0..3 {
            for j in 0..3 {
                let expected = if k == j { 2.0 + x[k].sin() } else { 0.0 };
                assert_eq!(s[(k, j)], expected);
            }
        }
        assert!(!m.domain.contains_raw(0.0, &[1.0, 1.0, 0.0]));
        assert!(m.domain.contains_raw(0.0, &m.default_start.x));
    }

    #[test]
    fn gradient_models_decompose() {
        let models = vec![
            make_example_62(0.5).unwrap(),
            ornstein_uhlenbeck(2),
            make_random_media(&RandomMediaParams {
                points: vec![vec![1.0, 1.0], vec![-2.0, 0.5]],
                sigma: SigmaFamily::SinShift,
                ..RandomMediaParams::default()
            })
            .unwrap(),
        ];
        let mut stream = PathStream::new(3, 0);
        for m in models {
            let pot = m.potential().unwrap();
            let diff = m.coeffs.diffusion();
            let mut checked = 0;
            while checked < 100 {
                let x: Vec<f64> = (0..m.dim).map(|_| 3.0 * stream.uniform() + 0.01).collect();
                if !m.domain.contains_raw(0.0, &x) {
                    continue;
                }
                let p = SpaceTimePoint::new(0.0, x.clone());
                let g = pot.grad(0.0, &x).unwrap();
                let a = diff.a(0.0, &x);
                let corr = divergence_correction(diff, &p, 1e-5);
                let b = m.coeffs.drift(&p).unwrap();
                for i in 0..m.dim {
                    let ag: f64 = (0..m.dim).map(|j| a[(i, j)] * g[j]).sum();
                    assert!((b[i] - (-ag + corr[i])).abs() < 1e-10 * (1.0 + b[i].abs()));
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn toys() {
        let toys = make_validation_toys();
        assert_eq!(drift(&toys[0], &[3.0]), vec![0.0]);
        assert_eq!(drift(&toys[1], &[2.0]), vec![-2.0]);
        assert_eq!(drift(&toys[2], &[0.5]), vec![-2.0]);
        assert_eq!(toys[3].params["theta"], 0.7);
    }

    #[test]
    fn config_names_round_trip() {
        for name in ModelConfig::NAMES {
            let cfg = ModelConfig::from_name(name).unwrap();
            cfg.build().unwrap();
        }
        assert!(ModelConfig::from_name("nope").is_none());
    }
}
