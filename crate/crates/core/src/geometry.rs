use crate::error::{ensure, Result};

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        ensure!(
            !lo.is_empty(),
            InvalidArgument,
            "box must have at least one axis"
        );
        ensure!(
            lo.len() == hi.len(),
            InvalidArgument,
            "box bounds have lengths {} and {}",
            lo.len(),
            hi.len()
        );
        for (k, (l, h)) in lo.iter().zip(&hi).enumerate() {
            ensure!(
                l.is_finite() && h.is_finite() && l < h,
                InvalidArgument,
                "axis {k}: need finite lo < hi, got [{l}, {h}]"
            );
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Extends every axis by `margin(axis)` on both sides.
    pub fn inflate_by(&self, margin: impl Fn(usize) -> f64) -> Self {
        let lo = (0..self.dim()).map(|k| self.lo[k] - margin(k)).collect();
        let hi = (0..self.dim()).map(|k| self.hi[k] + margin(k)).collect();
        Self { lo, hi }
    }

    /// Sup-norm distance of `x` to the box (zero inside).
    pub fn outside_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (l - v).max(v - h).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_axes() {
        assert!(BoxRegion::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoxRegion::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn inflation_and_membership() {
        let b = BoxRegion::cube(2, 0.0, 1.0).unwrap();
        let w = b.inflate_by(|k| 0.05 * b.width(k));
        assert!(w.contains(&[-0.04, 1.04]));
        assert!(!b.contains(&[-0.04, 0.5]));
        assert!((w.volume() - 1.21).abs() < 1e-12);
        assert!((b.outside_distance(&[1.5, 0.2]) - 0.5).abs() < 1e-15);
    }
}
