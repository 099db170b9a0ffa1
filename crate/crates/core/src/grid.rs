//! Tensor grids over bounding boxes.

use crate::domain::BoundingBox;

/// `n` equally spaced points covering `[lo, hi]` including both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Cell midpoints of `n` equal cells on `[lo, hi]`.
pub fn midpoints(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

/// Cartesian product of one time axis and `d` space axes.
#[derive(Debug, Clone)]
pub struct TensorGrid {
    pub times: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
}

impl TensorGrid {
    pub fn closed(bbox: &BoundingBox, resolution: usize) -> Self {
        Self {
            times: linspace(bbox.t_lo, bbox.t_hi, resolution),
            axes: (0..bbox.dim())
                .map(|i| linspace(bbox.lo[i], bbox.hi[i], resolution))
                .collect(),
        }
    }

    pub fn cell_centred(bbox: &BoundingBox, resolution: usize) -> Self {
        Self {
            times: midpoints(bbox.t_lo, bbox.t_hi, resolution),
            axes: (0..bbox.dim())
                .map(|i| midpoints(bbox.lo[i], bbox.hi[i], resolution))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.axes
            .iter()
            .fold(self.times.len(), |acc, a| acc.saturating_mul(a.len()))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `index`-th grid point, time axis slowest.
    pub fn point(&self, mut index: usize, x: &mut [f64]) -> f64 {
        for (k, axis) in self.axes.iter().enumerate().rev() {
            x[k] = axis[index % axis.len()];
            index /= axis.len();
        }
        self.times[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_hits_ends() {
        let v = linspace(0.5, 2.0, 7);
        assert_eq!(v[0], 0.5);
        assert_eq!(v[6], 2.0);
    }

    #[test]
    fn grid_enumerates_all_points() {
        let bbox = BoundingBox {
            t_lo: 0.0,
            t_hi: 1.0,
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let g = TensorGrid::closed(&bbox, 3);
        assert_eq!(g.len(), 27);
        let mut x = [0.0; 2];
        let t = g.point(26, &mut x);
        assert_eq!((t, x), (1.0, [1.0, 1.0]));
        let t = g.point(5, &mut x);
        assert_eq!((t, x), (0.0, [0.5, 1.0]));
    }
}
