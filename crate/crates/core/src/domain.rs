//! Space-time domains `Q ⊂ R₊ × R^d`, their exhaustions `Qⁿ`, and distance
//! queries.
//!
//! A domain is an intersection of [`Constraint`]s. Every analytic constraint
//! knows its exact signed distance, so the distance from an interior point to
//! `∂Q` is the minimum over constraints. Predicate-only domains fall back to
//! ray probing, which only certifies a bound up to ray coverage.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::point::{norm, SpaceTimePoint};
use crate::rng::PathStream;

pub type Predicate = Arc<dyn Fn(f64, &[f64]) -> bool + Send + Sync>;

const PROBE_RANDOM_RAYS: usize = 16;
const PROBE_MIN_RADIUS: f64 = 1e-9;
const PROBE_MAX_RADIUS: f64 = 1e3;
const PROBE_GROWTH: f64 = 1.5;
const PROBE_BISECTIONS: usize = 48;

/// Predicate-defined set with ray-probed distances.
#[derive(Clone)]
pub struct ProbedSet {
    dim: usize,
    pred: Predicate,
    /// Points count as inside only when their probed clearance exceeds this.
    margin: f64,
    rays: Arc<Vec<Vec<f64>>>,
}

impl ProbedSet {
    pub fn new(dim: usize, pred: Predicate) -> Self {
        let n = dim + 1;
        let mut rays = Vec::with_capacity(2 * n + PROBE_RANDOM_RAYS);
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut e = vec![0.0; n];
                e[i] = s;
                rays.push(e);
            }
        }
        let mut stream = PathStream::new(0x5eed_0f_9a0be, 0);
        for _ in 0..PROBE_RANDOM_RAYS {
            let mut v = vec![0.0; n];
            stream.fill_normal(&mut v);
            let l = norm(&v);
            rays.push(v.into_iter().map(|c| c / l).collect());
        }
        Self {
            dim,
            pred,
            margin: 0.0,
            rays: Arc::new(rays),
        }
    }

    fn with_margin(&self, margin: f64) -> Self {
        Self { margin, ..self.clone() }
    }

    fn raw_inside(&self, t: f64, x: &[f64], forward: bool) -> bool {
        if forward {
            (self.pred)(t.max(0.0), x)
        } else {
            t >= 0.0 && (self.pred)(t, x)
        }
    }

    /// Unsigned distance to the nearest status flip along the probe rays.
    fn probe(&self, t: f64, x: &[f64], forward: bool) -> f64 {
        let start = self.raw_inside(t, x, forward);
        let mut best = PROBE_MAX_RADIUS;
        let mut buf = vec![0.0; self.dim];
        let at = |r: f64, dir: &[f64], buf: &mut Vec<f64>| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = x[k] + r * dir[k + 1];
            }
            self.raw_inside(t + r * dir[0], buf, forward)
        };
        for dir in self.rays.iter() {
            let mut lo = 0.0;
            let mut r = PROBE_MIN_RADIUS;
            let mut hit = None;
            while r < best {
                if at(r, dir, &mut buf) != start {
                    hit = Some(r);
                    break;
                }
                lo = r;
                r *= PROBE_GROWTH;
            }
            if let Some(mut hi) = hit {
                for _ in 0..PROBE_BISECTIONS {
                    let mid = 0.5 * (lo + hi);
                    if at(mid, dir, &mut buf) != start {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                // Report the inner end of the bracket: never overestimates.
                best = best.min(lo);
            }
        }
        best
    }

    fn signed_distance(&self, t: f64, x: &[f64], forward: bool) -> f64 {
        let d = self.probe(t, x, forward);
        let sd = if self.raw_inside(t, x, forward) { d } else { -d };
        sd - self.margin
    }

    fn holds(&self, t: f64, x: &[f64]) -> bool {
        if !(self.pred)(t, x) {
            return false;
        }
        self.margin == 0.0 || self.signed_distance(t, x, true) > 0.0
    }
}

impl fmt::Debug for ProbedSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProbedSet")
            .field("dim", &self.dim)
            .field("margin", &self.margin)
            .finish()
    }
}

/// One open (or, for the `t >= 0` face, closed) condition cutting out a domain.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// `t >= 0`. Its face lies in the past of every path.
    TimeNonNegative,
    /// `t < hi`.
    TimeBelow(f64),
    /// `t > lo`.
    TimeAbove(f64),
    /// `lo < x[axis] < hi`; either bound may be infinite.
    CoordRange {
        axis: usize,
        lo: f64,
        hi: f64,
    },
    /// `lo < |x[axis]| < hi`.
    AbsCoordRange {
        axis: usize,
        lo: f64,
        hi: f64,
    },
    /// `|x[start..start+len] - center| < radius`.
    BallInside {
        start: usize,
        center: Vec<f64>,
        radius: f64,
    },
    /// `|x[start..start+len] - center| > radius`.
    BallOutside {
        start: usize,
        center: Vec<f64>,
        radius: f64,
    },
    /// `normal · x[start..start+len] > offset`, `normal` of unit length.
    HalfSpace {
        start: usize,
        normal: Vec<f64>,
        offset: f64,
    },
    /// `|x⁽ᵏ⁾ - x⁽ʲ⁾| > radius` for the `block`-sized particle blocks `k`, `j`.
    BlockSeparation {
        block: usize,
        k: usize,
        j: usize,
        radius: f64,
    },
    Probed(ProbedSet),
}

fn ball_offset(x: &[f64], start: usize, center: &[f64]) -> f64 {
    center
        .iter()
        .enumerate()
        .map(|(i, c)| (x[start + i] - c).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn block_gap(x: &[f64], block: usize, k: usize, j: usize) -> f64 {
    (0..block)
        .map(|r| (x[k * block + r] - x[j * block + r]).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl Constraint {
    fn holds(&self, t: f64, x: &[f64]) -> bool {
        match self {
            Constraint::TimeNonNegative => t >= 0.0,
            Constraint::TimeBelow(hi) => t < *hi,
            Constraint::TimeAbove(lo) => t > *lo,
            Constraint::CoordRange { axis, lo, hi } => x[*axis] > *lo && x[*axis] < *hi,
            Constraint::AbsCoordRange { axis, lo, hi } => {
                let a = x[*axis].abs();
                a > *lo && a < *hi
            }
            Constraint::BallInside { start, center, radius } => ball_offset(x, *start, center) < *radius,
            Constraint::BallOutside { start, center, radius } => ball_offset(x, *start, center) > *radius,
            Constraint::HalfSpace { start, normal, offset } => {
                let dot: f64 = normal.iter().enumerate().map(|(i, n)| n * x[start + i]).sum();
                dot > *offset
            }
            Constraint::BlockSeparation { block, k, j, radius } => block_gap(x, *block, *k, *j) > *radius,
            Constraint::Probed(p) => p.holds(t, x),
        }
    }

    /// Exact signed Euclidean distance in R^{d+1} to the constraint's
    /// boundary: positive inside, negative outside.
    fn signed_distance(&self, t: f64, x: &[f64], forward: bool) -> f64 {
        match self {
            Constraint::TimeNonNegative => {
                if forward {
                    f64::INFINITY
                } else {
                    t
                }
            }
            Constraint::TimeBelow(hi) => hi - t,
            Constraint::TimeAbove(lo) => t - lo,
            Constraint::CoordRange { axis, lo, hi } => (x[*axis] - lo).min(hi - x[*axis]),
            Constraint::AbsCoordRange { axis, lo, hi } => {
                let a = x[*axis].abs();
                (a - lo).min(hi - a)
            }
            Constraint::BallInside { start, center, radius } => radius - ball_offset(x, *start, center),
            Constraint::BallOutside { start, center, radius } => ball_offset(x, *start, center) - radius,
            Constraint::HalfSpace { start, normal, offset } => {
                let dot: f64 = normal.iter().enumerate().map(|(i, n)| n * x[start + i]).sum();
                dot - offset
            }
            Constraint::BlockSeparation { block, k, j, radius } => {
                (block_gap(x, *block, *k, *j) - radius) / std::f64::consts::SQRT_2
            }
            Constraint::Probed(p) => p.signed_distance(t, x, forward),
        }
    }

    /// The constraint shrunk so that its boundary moves inward by `margin`.
    fn tightened(&self, margin: f64) -> Constraint {
        match self {
            Constraint::TimeNonNegative => Constraint::TimeNonNegative,
            Constraint::TimeBelow(hi) => Constraint::TimeBelow(hi - margin),
            Constraint::TimeAbove(lo) => Constraint::TimeAbove(lo + margin),
            Constraint::CoordRange { axis, lo, hi } => Constraint::CoordRange {
                axis: *axis,
                lo: lo + margin,
                hi: hi - margin,
            },
            Constraint::AbsCoordRange { axis, lo, hi } => Constraint::AbsCoordRange {
                axis: *axis,
                lo: lo + margin,
                hi: hi - margin,
            },
            Constraint::BallInside { start, center, radius } => Constraint::BallInside {
                start: *start,
                center: center.clone(),
                radius: radius - margin,
            },
            Constraint::BallOutside { start, center, radius } => Constraint::BallOutside {
                start: *start,
                center: center.clone(),
                radius: radius + margin,
            },
            Constraint::HalfSpace { start, normal, offset } => Constraint::HalfSpace {
                start: *start,
                normal: normal.clone(),
                offset: offset + margin,
            },
            Constraint::BlockSeparation { block, k, j, radius } => Constraint::BlockSeparation {
                block: *block,
                k: *k,
                j: *j,
                radius: radius + margin * std::f64::consts::SQRT_2,
            },
            Constraint::Probed(p) => Constraint::Probed(p.with_margin(p.margin + margin)),
        }
    }

    fn shifted(&self, offset: usize) -> Constraint {
        match self {
            Constraint::CoordRange { axis, lo, hi } => Constraint::CoordRange {
                axis: axis + offset,
                lo: *lo,
                hi: *hi,
            },
            Constraint::AbsCoordRange { axis, lo, hi } => Constraint::AbsCoordRange {
                axis: axis + offset,
                lo: *lo,
                hi: *hi,
            },
            Constraint::BallInside { start, center, radius } => Constraint::BallInside {
                start: start + offset,
                center: center.clone(),
                radius: *radius,
            },
            Constraint::BallOutside { start, center, radius } => Constraint::BallOutside {
                start: start + offset,
                center: center.clone(),
                radius: *radius,
            },
            Constraint::HalfSpace {
                start,
                normal,
                offset: o,
            } => Constraint::HalfSpace {
                start: start + offset,
                normal: normal.clone(),
                offset: *o,
            },
            Constraint::BlockSeparation { block, k, j, radius } => {
                // Particle blocks only shift cleanly when the offset is a whole block.
                assert_eq!(
                    offset % block,
                    0,
                    "product factor offset must align with particle blocks"
                );
                Constraint::BlockSeparation {
                    block: *block,
                    k: k + offset / block,
                    j: j + offset / block,
                    radius: *radius,
                }
            }
            Constraint::Probed(p) => {
                let inner = p.pred.clone();
                let dim = p.dim;
                let pred: Predicate = Arc::new(move |t, x| inner(t, &x[offset..offset + dim]));
                Constraint::Probed(ProbedSet::new(offset + dim, pred).with_margin(p.margin))
            }
            other => other.clone(),
        }
    }
}

/// Finite bounding box of a region, in `(t, x)` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub t_lo: f64,
    pub t_hi: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

/// Region descriptor: membership predicate plus a finite bounding box.
#[derive(Debug, Clone)]
pub struct Region {
    dim: usize,
    constraints: Vec<Constraint>,
    bbox: BoundingBox,
}

impl Region {
    pub fn new(dim: usize, constraints: Vec<Constraint>, bbox: BoundingBox) -> Self {
        Self { dim, constraints, bbox }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.holds(t, x))
    }

    /// True when the bounding box has no interior, so the open region is empty.
    pub fn is_degenerate(&self) -> bool {
        self.bbox.t_lo >= self.bbox.t_hi || self.bbox.lo.iter().zip(&self.bbox.hi).any(|(a, b)| a >= b)
    }

    /// Membership in the closure, up to rounding.
    pub fn contains_closed(&self, t: f64, x: &[f64]) -> bool {
        self.constraints
            .iter()
            .all(|c| c.signed_distance(t, x, false) >= -1e-12)
    }

    /// Signed distance to the region boundary, ignoring the `t = 0` face.
    /// Exact inside the region; outside it is a lower bound on the distance.
    pub fn signed_distance(&self, t: f64, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.signed_distance(t, x, true))
            .fold(f64::INFINITY, f64::min)
    }
}

/// How the bounded part of the exhaustion `Qⁿ` is cut out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExhaustionShape {
    /// `|x| < n`.
    Ball,
    /// `|x_i| < n` for every coordinate.
    Cube,
}

/// An open space-time domain `Q` together with its exhaustion.
#[derive(Debug, Clone)]
pub struct SpaceTimeDomain {
    name: String,
    dim: usize,
    constraints: Vec<Constraint>,
    shape: ExhaustionShape,
}

impl SpaceTimeDomain {
    fn from_constraints(name: impl Into<String>, dim: usize, spatial: Vec<Constraint>) -> Self {
        let mut constraints = vec![Constraint::TimeNonNegative];
        constraints.extend(spatial);
        Self {
            name: name.into(),
            dim,
            constraints,
            shape: ExhaustionShape::Ball,
        }
    }

    /// `Q = R₊ × R^d`.
    pub fn full_space(dim: usize) -> Self {
        Self::from_constraints("full-space", dim, Vec::new())
    }

    /// `Q = R₊ × (0, ∞)`.
    pub fn half_line() -> Self {
        Self::from_constraints(
            "half-line",
            1,
            vec![Constraint::CoordRange {
                axis: 0,
                lo: 0.0,
                hi: f64::INFINITY,
            }],
        )
        .with_shape(ExhaustionShape::Cube)
    }

    /// `{x : normal · x > offset}`; `normal` need not be normalized.
    pub fn halfspace(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let l = norm(&normal);
        if !(l > 0.0) {
            return Err(SdeError::Parameter("halfspace normal must be nonzero".into()));
        }
        let dim = normal.len();
        Ok(Self::from_constraints(
            "halfspace",
            dim,
            vec![Constraint::HalfSpace {
                start: 0,
                normal: normal.iter().map(|v| v / l).collect(),
                offset: offset / l,
            }],
        ))
    }

    /// Open box `∏ (lo_i, hi_i)`; bounds may be infinite.
    pub fn open_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(SdeError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(SdeError::Parameter("box requires lo < hi in every axis".into()));
        }
        let dim = lo.len();
        let cs = (0..dim)
            .map(|axis| Constraint::CoordRange {
                axis,
                lo: lo[axis],
                hi: hi[axis],
            })
            .collect();
        Ok(Self::from_constraints("box", dim, cs).with_shape(ExhaustionShape::Cube))
    }

    /// `{x : lo < x[axis] < hi}` in R^dim.
    pub fn slab(dim: usize, axis: usize, lo: f64, hi: f64) -> Result<Self> {
        if axis >= dim || !(lo < hi) {
            return Err(SdeError::Parameter("slab needs axis < dim and lo < hi".into()));
        }
        Ok(Self::from_constraints(
            "slab",
            dim,
            vec![Constraint::CoordRange { axis, lo, hi }],
        ))
    }

    /// `R^dim` with the hyperplane `{x[axis] = 0}` removed.
    pub fn punctured_plane(dim: usize, axis: usize) -> Result<Self> {
        if axis >= dim {
            return Err(SdeError::Parameter("punctured-plane axis must be < dim".into()));
        }
        Ok(Self::from_constraints(
            "punctured-plane",
            dim,
            vec![Constraint::AbsCoordRange {
                axis,
                lo: 0.0,
                hi: f64::INFINITY,
            }],
        )
        .with_shape(ExhaustionShape::Cube))
    }

    /// `R^dim` minus the closed `radius`-neighbourhoods of `centers`.
    pub fn excluded_balls(dim: usize, centers: &[Vec<f64>], radius: f64) -> Result<Self> {
        if let Some(c) = centers.iter().find(|c| c.len() != dim) {
            return Err(SdeError::DimensionMismatch {
                expected: dim,
                got: c.len(),
            });
        }
        let cs = centers
            .iter()
            .map(|c| Constraint::BallOutside {
                start: 0,
                center: c.clone(),
                radius,
            })
            .collect();
        Ok(Self::from_constraints("excluded-balls", dim, cs))
    }

    /// `R^{m·block}` with every collision set `{x⁽ᵏ⁾ = x⁽ʲ⁾}` removed.
    pub fn collision_free(m: usize, block: usize) -> Self {
        let mut cs = Vec::new();
        for k in 0..m {
            for j in k + 1..m {
                cs.push(Constraint::BlockSeparation {
                    block,
                    k,
                    j,
                    radius: 0.0,
                });
            }
        }
        Self::from_constraints("collision-free", m * block, cs)
    }

    /// Cartesian product of the spatial parts; time constraints are merged.
    pub fn product(factors: &[SpaceTimeDomain]) -> Self {
        let mut cs = Vec::new();
        let mut offset = 0;
        for f in factors {
            for c in &f.constraints {
                if !matches!(c, Constraint::TimeNonNegative) {
                    cs.push(c.shifted(offset));
                }
            }
            offset += f.dim;
        }
        let shape = if factors.iter().all(|f| f.shape == ExhaustionShape::Cube) {
            ExhaustionShape::Cube
        } else {
            ExhaustionShape::Ball
        };
        Self::from_constraints("product", offset, cs).with_shape(shape)
    }

    /// A domain known only through a membership predicate.
    pub fn from_predicate(dim: usize, pred: Predicate) -> Self {
        Self::from_constraints("predicate", dim, vec![Constraint::Probed(ProbedSet::new(dim, pred))])
    }

    /// Restricts the domain to `t < horizon`.
    pub fn with_time_horizon(mut self, horizon: f64) -> Self {
        self.constraints.push(Constraint::TimeBelow(horizon));
        self
    }

    pub fn with_shape(mut self, shape: ExhaustionShape) -> Self {
        self.shape = shape;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> ExhaustionShape {
        self.shape
    }

    fn is_predicate_only(&self) -> bool {
        self.constraints.iter().any(|c| matches!(c, Constraint::Probed(_)))
    }

    fn check_dim(&self, p: &SpaceTimePoint) -> Result<()> {
        if p.x.len() != self.dim {
            return Err(SdeError::DimensionMismatch {
                expected: self.dim,
                got: p.x.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, p: &SpaceTimePoint) -> Result<bool> {
        self.check_dim(p)?;
        Ok(self.contains_raw(p.t, &p.x))
    }

    /// Membership without the dimension check, for inner loops.
    pub fn contains_raw(&self, t: f64, x: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.holds(t, x))
    }

    /// The exhaustion level `Qⁿ`.
    ///
    /// Analytic domains use `[0, n) × {bounded by n, each spatial constraint
    /// tightened by 1/n}`; predicate-only domains use the time window
    /// `(1/n, n)` instead.
    pub fn exhaustion_level(&self, n: u32) -> Region {
        let n = n.max(1);
        let nf = n as f64;
        let margin = 1.0 / nf;
        let mut cs = Vec::new();
        if self.is_predicate_only() {
            cs.push(Constraint::TimeAbove(margin));
        }
        cs.push(Constraint::TimeBelow(nf));
        match self.shape {
            ExhaustionShape::Ball => cs.push(Constraint::BallInside {
                start: 0,
                center: vec![0.0; self.dim],
                radius: nf,
            }),
            ExhaustionShape::Cube => {
                for axis in 0..self.dim {
                    cs.push(Constraint::CoordRange { axis, lo: -nf, hi: nf });
                }
            }
        }
        for c in &self.constraints {
            cs.push(c.tightened(margin));
        }

        let mut bbox = BoundingBox {
            t_lo: 0.0,
            t_hi: nf,
            lo: vec![-nf; self.dim],
            hi: vec![nf; self.dim],
        };
        for c in &cs {
            match c {
                Constraint::TimeAbove(lo) => bbox.t_lo = bbox.t_lo.max(*lo),
                Constraint::TimeBelow(hi) => bbox.t_hi = bbox.t_hi.min(*hi),
                Constraint::CoordRange { axis, lo, hi } => {
                    bbox.lo[*axis] = bbox.lo[*axis].max(*lo);
                    bbox.hi[*axis] = bbox.hi[*axis].min(*hi);
                }
                Constraint::AbsCoordRange { axis, hi, .. } => {
                    bbox.lo[*axis] = bbox.lo[*axis].max(-hi);
                    bbox.hi[*axis] = bbox.hi[*axis].min(*hi);
                }
                _ => {}
            }
        }
        Region::new(self.dim, cs, bbox)
    }

    /// Smallest `n <= n_max` with `p ∈ Qⁿ`.
    pub fn which_level(&self, p: &SpaceTimePoint, n_max: u32) -> Result<Option<u32>> {
        self.require_inside(p)?;
        Ok((1..=n_max).find(|&n| self.exhaustion_level(n).contains(p.t, &p.x)))
    }

    fn require_inside(&self, p: &SpaceTimePoint) -> Result<()> {
        if !self.contains(p)? {
            return Err(SdeError::OutsideDomain { t: p.t, x: p.x.clone() });
        }
        Ok(())
    }

    /// Euclidean distance in R^{d+1} from `p` to `∂Q`, including the `t = 0`
    /// face. Exact for analytic domains, a probed bound otherwise.
    pub fn boundary_distance(&self, p: &SpaceTimePoint) -> Result<f64> {
        self.require_inside(p)?;
        Ok(self
            .constraints
            .iter()
            .map(|c| c.signed_distance(p.t, &p.x, false))
            .fold(f64::INFINITY, f64::min)
            .max(0.0))
    }

    /// Distance from an interior point to the part of `∂Q` a forward path can
    /// reach (the `t = 0` face is excluded). Used for step and stencil control.
    pub fn clearance(&self, t: f64, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.signed_distance(t, x, true))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(t: f64, x: &[f64]) -> SpaceTimePoint {
        SpaceTimePoint::new(t, x.to_vec())
    }

    fn punctured() -> SpaceTimeDomain {
        SpaceTimeDomain::punctured_plane(2, 0).unwrap()
    }

    #[test]
    fn contains_half_line() {
        let q = SpaceTimeDomain::half_line();
        assert!(q.contains(&pt(0.5, &[1.0])).unwrap());
        assert!(!q.contains(&pt(0.5, &[-1.0])).unwrap());
        assert!(!q.contains(&pt(0.5, &[0.0])).unwrap(), "boundary is outside");
    }

    #[test]
    fn contains_punctured_plane() {
        assert!(!punctured().contains(&pt(1.0, &[0.0, 3.0])).unwrap());
        assert!(punctured().contains(&pt(1.0, &[0.1, 3.0])).unwrap());
    }

    #[test]
    fn contains_rejects_wrong_dimension() {
        let err = punctured().contains(&pt(1.0, &[1.0])).unwrap_err();
        assert_eq!(err, SdeError::DimensionMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn half_line_levels() {
        let q2 = SpaceTimeDomain::half_line().exhaustion_level(2);
        assert!(q2.contains(1.0, &[1.0]));
        assert!(q2.contains(1.9, &[0.51]));
        assert!(!q2.contains(2.0, &[1.0]));
        assert!(!q2.contains(1.0, &[0.5]));
        assert!(!q2.contains(1.0, &[2.0]));
        let b = q2.bbox();
        assert_eq!((b.t_lo, b.t_hi, b.lo[0], b.hi[0]), (0.0, 2.0, 0.5, 2.0));
    }

    #[test]
    fn full_space_default_is_ball() {
        let q3 = SpaceTimeDomain::full_space(2).exhaustion_level(3);
        assert!(q3.contains(2.9, &[2.0, 2.0]));
        assert!(!q3.contains(2.9, &[2.2, 2.2]), "outside B_3 though inside the cube");
        assert!(!q3.contains(3.0, &[0.0, 0.0]));
    }

    #[test]
    fn punctured_plane_levels() {
        let q2 = punctured().exhaustion_level(2);
        assert!(q2.contains(1.0, &[-1.0, 1.9]));
        assert!(!q2.contains(1.0, &[0.4, 0.0]));
        assert!(!q2.contains(1.0, &[1.0, 2.0]));
        assert!(!q2.contains(1.0, &[-2.0, 0.0]));
    }

    #[test]
    fn which_level_examples() {
        let q = SpaceTimeDomain::half_line();
        // Enumerate n against the level predicate.
        let brute = (1..=10u32).find(|&n| {
            let nf = n as f64;
            0.5 < nf && 1.0 / nf < 1.0 && 1.0 < nf
        });
        assert_eq!(brute, Some(2));
        assert_eq!(q.which_level(&pt(0.5, &[1.0]), 10).unwrap(), brute);
        assert_eq!(q.which_level(&pt(9.5, &[1.0]), 5).unwrap(), None);
        let full = SpaceTimeDomain::full_space(1);
        assert_eq!(full.which_level(&pt(0.1, &[0.0]), 10).unwrap(), Some(1));
        assert!(matches!(
            q.which_level(&pt(0.1, &[-1.0]), 10),
            Err(SdeError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn boundary_distance_examples() {
        let q = SpaceTimeDomain::half_line();
        assert_eq!(q.boundary_distance(&pt(5.0, &[0.3])).unwrap(), 0.3);
        assert_eq!(q.boundary_distance(&pt(0.1, &[2.0])).unwrap(), 0.1);
        assert_eq!(punctured().boundary_distance(&pt(1.0, &[0.25, 0.0])).unwrap(), 0.25);
        assert!(q.boundary_distance(&pt(1.0, &[-1.0])).is_err());
    }

    #[test]
    fn clearance_ignores_initial_time_face() {
        let q = SpaceTimeDomain::half_line();
        assert_eq!(q.clearance(0.0, &[2.0]), 2.0);
        assert_eq!(SpaceTimeDomain::full_space(3).clearance(0.0, &[0.0; 3]), f64::INFINITY);
    }

    #[test]
    fn time_horizon_domain() {
        let q = SpaceTimeDomain::full_space(1).with_time_horizon(1.0);
        assert!(q.contains_raw(0.99, &[100.0]));
        assert!(!q.contains_raw(1.0, &[0.0]));
        assert!((q.clearance(0.25, &[0.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn collision_free_domain() {
        let q = SpaceTimeDomain::collision_free(3, 2);
        assert!(q.contains_raw(0.0, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
        assert!(!q.contains_raw(0.0, &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0]));
        let d = q.clearance(0.0, &[0.0, 0.0, 1.0, 0.0, 0.0, 3.0]);
        assert!((d - 1.0 / std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn product_of_factors() {
        let a = SpaceTimeDomain::half_line();
        let b = SpaceTimeDomain::open_box(vec![-1.0], vec![1.0]).unwrap();
        let q = SpaceTimeDomain::product(&[a, b]);
        assert_eq!(q.dim(), 2);
        assert!(q.contains_raw(0.0, &[3.0, 0.5]));
        assert!(!q.contains_raw(0.0, &[3.0, 1.5]));
        assert!(!q.contains_raw(0.0, &[-3.0, 0.5]));
        assert_eq!(q.shape(), ExhaustionShape::Cube);
    }

    #[test]
    fn predicate_domain_probes_distance() {
        let q = SpaceTimeDomain::from_predicate(1, Arc::new(|_, x: &[f64]| x[0] > 0.0));
        let d = q.boundary_distance(&pt(5.0, &[0.3])).unwrap();
        assert!(d <= 0.3 && d > 0.3 - 1e-9, "{d}");
        let d = q.boundary_distance(&pt(0.1, &[2.0])).unwrap();
        assert!(d <= 0.1 && d > 0.1 - 1e-9, "{d}");
        let c = q.clearance(0.1, &[2.0]);
        assert!(c <= 2.0 && c > 2.0 - 1e-9, "{c}");
        let q3 = q.exhaustion_level(3);
        assert!(q3.contains(1.0, &[1.0]));
        assert!(!q3.contains(0.2, &[1.0]), "time window starts at 1/n");
        assert!(!q3.contains(1.0, &[0.3]), "spatial margin 1/n");
    }

    #[test]
    fn closed_membership_includes_faces() {
        let q2 = SpaceTimeDomain::half_line().exhaustion_level(2);
        assert!(q2.contains_closed(0.0, &[0.5]));
        assert!(q2.contains_closed(2.0, &[2.0]));
        assert!(!q2.contains_closed(1.0, &[0.49]));
    }

    #[test]
    fn halfspace_normalizes() {
        let q = SpaceTimeDomain::halfspace(vec![0.0, 2.0], 2.0).unwrap();
        assert!(q.contains_raw(0.0, &[0.0, 1.5]));
        assert!((q.clearance(0.0, &[7.0, 3.0]) - 2.0).abs() < 1e-15);
    }
}
