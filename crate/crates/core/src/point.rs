use serde::{Deserialize, Serialize};

/// A point `(t, x)` of space-time, `t >= 0` and `x` in R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl SpaceTimePoint {
    pub fn new(t: f64, x: impl Into<Vec<f64>>) -> Self {
        Self { t, x: x.into() }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// A state of the one-point compactification `Q ∪ {∂}`.
///
/// Transitions go through [`CompactifiedState::advance`], which keeps the
/// cemetery absorbing.
#[derive(Debug, Clone, PartialEq)]
pub enum CompactifiedState {
    Alive(SpaceTimePoint),
    Cemetery,
}

impl CompactifiedState {
    pub fn is_cemetery(&self) -> bool {
        matches!(self, CompactifiedState::Cemetery)
    }

    /// Moves to `next`; a state already at ∂ stays at ∂.
    pub fn advance(self, next: CompactifiedState) -> CompactifiedState {
        match self {
            CompactifiedState::Cemetery => CompactifiedState::Cemetery,
            CompactifiedState::Alive(_) => next,
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cemetery_is_absorbing() {
        let p = SpaceTimePoint::new(0.0, vec![1.0]);
        let s = CompactifiedState::Alive(p.clone());
        let s = s.advance(CompactifiedState::Cemetery);
        assert!(s.is_cemetery());
        let s = s.advance(CompactifiedState::Alive(p));
        assert!(s.is_cemetery());
    }
}
