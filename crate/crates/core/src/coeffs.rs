//! Coefficient fields: drift, diffusion and potential.
//!
//! Gradient-type drifts are assembled as `-(σσ*)∇φ + ½ Σⱼ ∂ⱼ aᵢⱼ`, where the
//! second term is the divergence correction turning the generator into
//! `div(σσ*∇)`. Localization multiplies the coefficients by smooth cutoffs
//! between consecutive exhaustion levels so they become globally defined.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::domain::{Region, SpaceTimeDomain};
use crate::error::{Result, SdeError};
use crate::grid::TensorGrid;
use crate::point::SpaceTimePoint;

pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64, &[f64], &mut DMatrix<f64>) + Send + Sync>;
/// Writes `∂ₖσ` into `out[k]` for every coordinate `k`.
pub type JacobianFn = Arc<dyn Fn(f64, &[f64], &mut [DMatrix<f64>]) + Send + Sync>;

/// Smallest finite-difference step; see [`default_fd_step`].
pub const MIN_FD_STEP: f64 = 1e-5;

/// Step for central differences at a point with the given clearance.
pub fn default_fd_step(clearance: f64) -> f64 {
    if clearance.is_finite() {
        MIN_FD_STEP.max(1e-4 * clearance)
    } else {
        MIN_FD_STEP
    }
}

#[derive(Clone)]
pub struct DiffusionField {
    dim: usize,
    sigma: MatrixFn,
    jacobian: Option<JacobianFn>,
    ellipticity: Option<(f64, f64)>,
}

impl fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionField")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("ellipticity", &self.ellipticity)
            .finish()
    }
}

impl DiffusionField {
    pub fn new(dim: usize, sigma: MatrixFn) -> Self {
        Self {
            dim,
            sigma,
            jacobian: None,
            ellipticity: None,
        }
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn) -> Self {
        self.jacobian = Some(jacobian);
        self
    }

    /// Declares bounds `lower <= eig(σσ*) <= upper`.
    pub fn with_ellipticity(mut self, lower: f64, upper: f64) -> Self {
        self.ellipticity = Some((lower, upper));
        self
    }

    /// `c·I` with a zero Jacobian.
    pub fn scalar_constant(dim: usize, c: f64) -> Self {
        Self::new(
            dim,
            Arc::new(move |_, _, out: &mut DMatrix<f64>| {
                out.fill(0.0);
                out.fill_diagonal(c);
            }),
        )
        .with_jacobian(Arc::new(|_, _, out: &mut [DMatrix<f64>]| {
            for m in out {
                m.fill(0.0);
            }
        }))
        .with_ellipticity(c * c, c * c)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar_constant(dim, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn declared_ellipticity(&self) -> Option<(f64, f64)> {
        self.ellipticity
    }

    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        (self.sigma)(t, x, out)
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.sigma_into(t, x, &mut m);
        m
    }

    /// `a = σσ*`.
    pub fn a(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let s = self.sigma(t, x);
        &s * s.transpose()
    }

    pub fn jacobian(&self, t: f64, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        self.jacobian.as_ref().map(|j| {
            let mut out = vec![DMatrix::zeros(self.dim, self.dim); self.dim];
            j(t, x, &mut out);
            out
        })
    }
}

/// Lyapunov data attached to a potential: `h`, `ε` and `K₁`.
#[derive(Clone)]
pub struct LyapunovData {
    pub h: ScalarFn,
    pub epsilon: f64,
    pub k1: f64,
}

impl LyapunovData {
    pub fn new(h: ScalarFn, epsilon: f64, k1: f64) -> Result<Self> {
        if !(0.0..2.0).contains(&epsilon) {
            return Err(SdeError::Parameter(format!(
                "epsilon must lie in [0, 2), got {epsilon}"
            )));
        }
        if !(k1 >= 0.0) {
            return Err(SdeError::Parameter(format!("K1 must be nonnegative, got {k1}")));
        }
        Ok(Self { h, epsilon, k1 })
    }

    pub fn constant_h(c: f64, epsilon: f64, k1: f64) -> Result<Self> {
        Self::new(Arc::new(move |_, _| c), epsilon, k1)
    }
}

#[derive(Clone)]
pub struct PotentialField {
    phi: ScalarFn,
    grad: Option<VectorFn>,
    dt_phi: Option<ScalarFn>,
    lyapunov: Option<LyapunovData>,
}

impl fmt::Debug for PotentialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialField")
            .field("analytic_gradient", &self.grad.is_some())
            .field("analytic_dt", &self.dt_phi.is_some())
            .field("lyapunov", &self.lyapunov.as_ref().map(|l| (l.epsilon, l.k1)))
            .finish()
    }
}

impl PotentialField {
    pub fn new(phi: ScalarFn) -> Self {
        Self {
            phi,
            grad: None,
            dt_phi: None,
            lyapunov: None,
        }
    }

    pub fn with_gradient(mut self, grad: VectorFn) -> Self {
        self.grad = Some(grad);
        self
    }

    pub fn with_time_derivative(mut self, dt_phi: ScalarFn) -> Self {
        self.dt_phi = Some(dt_phi);
        self
    }

    pub fn with_lyapunov(mut self, data: LyapunovData) -> Self {
        self.lyapunov = Some(data);
        self
    }

    pub fn lyapunov(&self) -> Option<&LyapunovData> {
        self.lyapunov.as_ref()
    }

    pub fn has_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn phi(&self, t: f64, x: &[f64]) -> f64 {
        (self.phi)(t, x)
    }

    /// `∇φ`, analytic when available, otherwise central differences with `fd_step`.
    pub fn grad_into(&self, t: f64, x: &[f64], fd_step: f64, out: &mut [f64]) -> Result<()> {
        match &self.grad {
            Some(g) => g(t, x, out),
            None => {
                let mut y = x.to_vec();
                for i in 0..x.len() {
                    y[i] = x[i] + fd_step;
                    let fp = (self.phi)(t, &y);
                    y[i] = x[i] - fd_step;
                    let fm = (self.phi)(t, &y);
                    y[i] = x[i];
                    out[i] = (fp - fm) / (2.0 * fd_step);
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::Singularity { t, x: x.to_vec() });
        }
        Ok(())
    }

    pub fn grad(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.grad_into(t, x, MIN_FD_STEP, &mut out)?;
        Ok(out)
    }

    /// `∂ₜφ`, analytic or by central differences (forward near `t = 0`).
    pub fn dt(&self, t: f64, x: &[f64]) -> f64 {
        if let Some(d) = &self.dt_phi {
            return d(t, x);
        }
        let h = MIN_FD_STEP * (1.0 + t.abs());
        if t - h >= 0.0 {
            ((self.phi)(t + h, x) - (self.phi)(t - h, x)) / (2.0 * h)
        } else {
            ((self.phi)(t + h, x) - (self.phi)(t, x)) / h
        }
    }
}

/// `½ Σⱼ ∂ⱼ aᵢⱼ` from the analytic Jacobian of σ.
fn divergence_analytic(sigma: &DMatrix<f64>, jac: &[DMatrix<f64>], out: &mut [f64]) {
    let d = sigma.nrows();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, dj) in jac.iter().enumerate() {
            // ∂ⱼ aᵢⱼ = Σₖ (∂ⱼσᵢₖ σⱼₖ + σᵢₖ ∂ⱼσⱼₖ)
            for k in 0..d {
                acc += dj[(i, k)] * sigma[(j, k)] + sigma[(i, k)] * dj[(j, k)];
            }
        }
        *o = 0.5 * acc;
    }
}

/// `½ Σⱼ ∂ⱼ aᵢⱼ` by central differences of `a` with step `h`.
pub fn divergence_correction_fd(diff: &DiffusionField, t: f64, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut out = vec![0.0; d];
    let mut y = x.to_vec();
    for j in 0..d {
        y[j] = x[j] + h;
        let ap = diff.a(t, &y);
        y[j] = x[j] - h;
        let am = diff.a(t, &y);
        y[j] = x[j];
        for (i, o) in out.iter_mut().enumerate() {
            *o += 0.5 * (ap[(i, j)] - am[(i, j)]) / (2.0 * h);
        }
    }
    out
}

fn divergence_into(diff: &DiffusionField, t: f64, x: &[f64], fd_step: f64, out: &mut [f64]) {
    match diff.jacobian(t, x) {
        Some(jac) => divergence_analytic(&diff.sigma(t, x), &jac, out),
        None => out.copy_from_slice(&divergence_correction_fd(diff, t, x, fd_step)),
    }
}

/// The divergence correction at `p`; analytic when the field carries a
/// Jacobian, otherwise central differences with step `fd_step`.
pub fn divergence_correction(diff: &DiffusionField, p: &SpaceTimePoint, fd_step: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.dim()];
    divergence_into(diff, p.t, &p.x, fd_step, &mut out);
    out
}

/// [`divergence_correction`] with the stencil checked against the domain.
pub fn divergence_correction_checked(
    diff: &DiffusionField,
    domain: &SpaceTimeDomain,
    p: &SpaceTimePoint,
    fd_step: f64,
) -> Result<Vec<f64>> {
    if !domain.contains(p)? {
        return Err(SdeError::OutsideDomain { t: p.t, x: p.x.clone() });
    }
    if !diff.has_jacobian() {
        let available = domain.clearance(p.t, &p.x);
        if available <= fd_step {
            return Err(SdeError::Stencil {
                required: fd_step,
                available,
            });
        }
    }
    Ok(divergence_correction(diff, p, fd_step))
}

fn gradient_drift_into(
    pot: &PotentialField,
    diff: &DiffusionField,
    t: f64,
    x: &[f64],
    fd_step: f64,
    out: &mut [f64],
) -> Result<()> {
    let d = x.len();
    let mut g = vec![0.0; d];
    pot.grad_into(t, x, fd_step, &mut g)?;
    let a = diff.a(t, x);
    divergence_into(diff, t, x, fd_step, out);
    for i in 0..d {
        let mut ag = 0.0;
        for (j, gj) in g.iter().enumerate() {
            ag += a[(i, j)] * gj;
        }
        out[i] -= ag;
    }
    Ok(())
}

/// `-(σσ*∇φ)(p) + ½ Σⱼ ∂ⱼ aᵢⱼ(p)`.
pub fn build_gradient_drift(pot: &PotentialField, diff: &DiffusionField, p: &SpaceTimePoint) -> Result<Vec<f64>> {
    let mut out = vec![0.0; p.dim()];
    gradient_drift_into(pot, diff, p.t, &p.x, MIN_FD_STEP, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Direct,
    GradientType,
    Localized,
}

#[derive(Clone)]
enum DriftSource {
    Field(VectorFn),
    Gradient { extra: Option<VectorFn> },
}

/// Drift, diffusion and (for gradient-type sets) the potential behind them.
#[derive(Clone)]
pub struct CoefficientSet {
    dim: usize,
    drift: DriftSource,
    diffusion: DiffusionField,
    potential: Option<PotentialField>,
    provenance: Provenance,
    clock_shift: Option<f64>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dim", &self.dim)
            .field("provenance", &self.provenance)
            .field("diffusion", &self.diffusion)
            .field("potential", &self.potential)
            .field("clock_shift", &self.clock_shift)
            .finish()
    }
}

impl CoefficientSet {
    pub fn direct(drift: VectorFn, diffusion: DiffusionField) -> Self {
        Self {
            dim: diffusion.dim(),
            drift: DriftSource::Field(drift),
            diffusion,
            potential: None,
            provenance: Provenance::Direct,
            clock_shift: None,
        }
    }

    pub fn gradient(potential: PotentialField, diffusion: DiffusionField) -> Self {
        Self {
            dim: diffusion.dim(),
            drift: DriftSource::Gradient { extra: None },
            diffusion,
            potential: Some(potential),
            provenance: Provenance::GradientType,
            clock_shift: None,
        }
    }

    /// Adds a bounded drift on top of a gradient-type drift.
    pub fn with_extra_drift(mut self, extra: VectorFn) -> Self {
        match &mut self.drift {
            DriftSource::Gradient { extra: e } => *e = Some(extra),
            DriftSource::Field(base) => {
                let base = base.clone();
                let dim = self.dim;
                self.drift = DriftSource::Field(Arc::new(move |t, x, out| {
                    base(t, x, out);
                    let mut e = vec![0.0; dim];
                    extra(t, x, &mut e);
                    for (o, v) in out.iter_mut().zip(e) {
                        *o += v;
                    }
                }));
            }
        }
        self
    }

    /// Attaches a potential to a directly specified drift, for diagnostics.
    pub fn with_potential(mut self, potential: PotentialField) -> Self {
        self.potential = Some(potential);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diffusion(&self) -> &DiffusionField {
        &self.diffusion
    }

    pub fn potential(&self) -> Option<&PotentialField> {
        self.potential.as_ref()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `Some(s)` when the set expects path-clock times for a start at time `s`.
    pub fn clock_shift(&self) -> Option<f64> {
        self.clock_shift
    }

    /// Drift at `(t, x)`. `clearance` sizes finite-difference stencils; `None`
    /// uses the minimal step without a stencil check.
    pub fn drift_into(&self, t: f64, x: &[f64], clearance: Option<f64>, out: &mut [f64]) -> Result<()> {
        match &self.drift {
            DriftSource::Field(f) => {
                f(t, x, out);
                Ok(())
            }
            DriftSource::Gradient { extra } => {
                let pot = self.potential.as_ref().expect("gradient-type set carries a potential");
                let fd_step = match clearance {
                    Some(c) => {
                        let h = default_fd_step(c);
                        let needs_fd = !pot.has_gradient() || !self.diffusion.has_jacobian();
                        if needs_fd && c <= h {
                            return Err(SdeError::Stencil {
                                required: h,
                                available: c,
                            });
                        }
                        h
                    }
                    None => MIN_FD_STEP,
                };
                gradient_drift_into(pot, &self.diffusion, t, x, fd_step, out)?;
                if let Some(e) = extra {
                    let mut buf = vec![0.0; self.dim];
                    e(t, x, &mut buf);
                    for (o, v) in out.iter_mut().zip(buf) {
                        *o += v;
                    }
                }
                Ok(())
            }
        }
    }

    pub fn drift(&self, p: &SpaceTimePoint) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(p.t, &p.x, None, &mut out)?;
        Ok(out)
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

/// Smooth cutoff equal to 1 on `inner`, 0 outside `outer`.
///
/// With `d_in` the distance to `inner` and `d_out` the distance to the
/// complement of `outer`, the transition coordinate is
/// `u = d_in / (d_in + d_out)` and the cutoff is `1 - s(u)` for the quintic
/// smoothstep `s(u) = 6u⁵ - 15u⁴ + 10u³`.
pub fn smooth_cutoff(inner: &Region, outer: &Region, t: f64, x: &[f64]) -> f64 {
    let sd_in = inner.signed_distance(t, x);
    if sd_in >= 0.0 {
        return 1.0;
    }
    if !outer.contains(t, x) {
        return 0.0;
    }
    let d_in = -sd_in;
    let d_out = outer.signed_distance(t, x).max(0.0);
    1.0 - smoothstep(d_in / (d_in + d_out))
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Grid estimate of `sup |σ|` (Frobenius) over a region, times 1.05.
fn sigma_sup(diff: &DiffusionField, region: &Region) -> f64 {
    let n = region.dim() + 1;
    let budget = 32f64.powi(n.min(3) as i32);
    let per_axis = (budget.powf(1.0 / n as f64).floor() as usize).max(2);
    let grid = TensorGrid::closed(region.bbox(), per_axis);
    let mut x = vec![0.0; region.dim()];
    let mut sup: f64 = 0.0;
    let mut m = DMatrix::zeros(diff.dim(), diff.dim());
    for i in 0..grid.len() {
        let t = grid.point(i, &mut x);
        if region.contains(t, &x) {
            diff.sigma_into(t, &x, &mut m);
            sup = sup.max(frobenius(&m));
        }
    }
    1.05 * sup
}

/// Globally defined coefficients agreeing with `coeffs` on `Qⁿ`.
///
/// The drift becomes `χₙ(t+s, x) b(t+s, x)` and the diffusion
/// `χₙ₊₁(t+s, x) σ(t+s, x) + (1 - χₙ(t+s, x)) (1 + sup_{Qⁿ⁺²}|σ|) I`, where
/// `χₙ` is the cutoff between `Qⁿ` and `Qⁿ⁺¹`. The result expects path-clock
/// times for a start at time `s`.
pub fn localize(coeffs: &CoefficientSet, domain: &SpaceTimeDomain, n: u32, s: f64) -> CoefficientSet {
    let n = n.max(1);
    let q_n = Arc::new(domain.exhaustion_level(n));
    let q_n1 = Arc::new(domain.exhaustion_level(n + 1));
    let q_n2 = Arc::new(domain.exhaustion_level(n + 2));
    let c = 1.0 + sigma_sup(&coeffs.diffusion, &q_n2);
    let dim = coeffs.dim;
    // Evaluations at absolute time t + s.
    let shift = coeffs.clock_shift.map(|s0| s - s0).unwrap_or(s);

    let base = Arc::new(coeffs.clone());
    let dom = Arc::new(domain.clone());
    let drift: VectorFn = {
        let (base, dom, q_n, q_n1) = (base.clone(), dom.clone(), q_n.clone(), q_n1.clone());
        Arc::new(move |t, x, out: &mut [f64]| {
            let tt = t + shift;
            let chi = smooth_cutoff(&q_n, &q_n1, tt, x);
            if chi == 0.0 {
                out.fill(0.0);
                return;
            }
            let clearance = dom.clearance(tt, x);
            if base.drift_into(tt, x, Some(clearance), out).is_err() {
                out.fill(f64::NAN);
                return;
            }
            if chi != 1.0 {
                for o in out.iter_mut() {
                    *o *= chi;
                }
            }
        })
    };
    let sigma: MatrixFn = {
        let base = base.clone();
        Arc::new(move |t, x, out: &mut DMatrix<f64>| {
            let tt = t + shift;
            let chi_n = smooth_cutoff(&q_n, &q_n1, tt, x);
            let chi_n1 = smooth_cutoff(&q_n1, &q_n2, tt, x);
            if chi_n == 1.0 && chi_n1 == 1.0 {
                base.diffusion.sigma_into(tt, x, out);
                return;
            }
            if chi_n1 > 0.0 {
                base.diffusion.sigma_into(tt, x, out);
                *out *= chi_n1;
            } else {
                out.fill(0.0);
            }
            let id = (1.0 - chi_n) * c;
            for i in 0..dim {
                out[(i, i)] += id;
            }
        })
    };
    CoefficientSet {
        dim,
        drift: DriftSource::Field(drift),
        diffusion: DiffusionField::new(dim, sigma),
        potential: coeffs.potential.clone(),
        provenance: Provenance::Localized,
        clock_shift: Some(s),
    }
}

/// Minimum and maximum eigenvalue of `σσ*` over the closed grid of a region.
pub fn ellipticity_bounds(diff: &DiffusionField, region: &Region, grid_resolution: usize) -> Result<(f64, f64)> {
    if region.is_degenerate() {
        return Err(SdeError::EmptyRegion);
    }
    let grid = TensorGrid::closed(region.bbox(), grid_resolution);
    let mut x = vec![0.0; region.dim()];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..grid.len() {
        let t = grid.point(i, &mut x);
        if !region.contains_closed(t, &x) {
            continue;
        }
        let (emin, emax) = eigen_range(&diff.a(t, &x));
        lo = lo.min(emin);
        hi = hi.max(emax);
    }
    if lo > hi {
        return Err(SdeError::EmptyRegion);
    }
    Ok((lo, hi))
}

pub(crate) fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 1 {
        return (a[(0, 0)], a[(0, 0)]);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    (eig.min(), eig.max())
}
