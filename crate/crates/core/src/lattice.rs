//! Tensor lattices over boxes and strictly positive functions stored on them.

use crate::error::{ensure, Error, Result};
use crate::geometry::BoxRegion;

pub const MAX_DIM: usize = 8;

/// Tensor-product lattice covering a box, nodes in row-major order (last axis
/// fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    region: BoxRegion,
    counts: Vec<usize>,
}

impl Lattice {
    pub fn new(region: BoxRegion, counts: Vec<usize>) -> Result<Self> {
        ensure!(
            counts.len() == region.dim(),
            InvalidArgument,
            "lattice has {} axes but box has {}",
            counts.len(),
            region.dim()
        );
        ensure!(
            counts.len() <= MAX_DIM,
            InvalidArgument,
            "lattices support at most {MAX_DIM} axes"
        );
        ensure!(
            counts.iter().all(|&n| n >= 2),
            InvalidArgument,
            "every axis needs at least 2 nodes, got {counts:?}"
        );
        Ok(Self { region, counts })
    }

    /// `n` nodes per axis.
    pub fn uniform(region: BoxRegion, n: usize) -> Result<Self> {
        let counts = vec![n; region.dim()];
        Self::new(region, counts)
    }

    pub fn region(&self) -> &BoxRegion {
        &self.region
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.region.width(axis) / (self.counts[axis] - 1) as f64
    }

    fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.region.hi()[axis]
        } else {
            self.region.lo()[axis] + i as f64 * self.spacing(axis)
        }
    }

    /// Coordinates of node `flat`.
    pub fn node_into(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for axis in (0..self.dim()).rev() {
            let n = self.counts[axis];
            out[axis] = self.axis_coord(axis, rem % n);
            rem /= n;
        }
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_into(flat, &mut out);
        out
    }

    /// All node coordinates, flattened `len x dim`.
    pub fn nodes(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (flat, chunk) in out.chunks_mut(d).enumerate() {
            self.node_into(flat, chunk);
        }
        out
    }

    /// Tensor trapezoidal quadrature weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let axis_weights: Vec<Vec<f64>> = (0..self.dim())
            .map(|axis| {
                let n = self.counts[axis];
                let h = self.spacing(axis);
                (0..n)
                    .map(|i| if i == 0 || i + 1 == n { 0.5 * h } else { h })
                    .collect()
            })
            .collect();
        let mut out = vec![1.0; self.len()];
        for (flat, w) in out.iter_mut().enumerate() {
            let mut rem = flat;
            for axis in (0..self.dim()).rev() {
                let n = self.counts[axis];
                *w *= axis_weights[axis][rem % n];
                rem /= n;
            }
        }
        out
    }

    /// Calls `visit(flat_index, weight)` for the 2^d corners of the cell holding
    /// `x` (clamped into the box), with multilinear weights.
    fn for_each_corner(&self, x: &[f64], mut visit: impl FnMut(usize, f64)) {
        let d = self.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for axis in 0..d {
            let n = self.counts[axis];
            let lo = self.region.lo()[axis];
            let t = ((x[axis] - lo) / self.spacing(axis)).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n - 2);
            base[axis] = i;
            frac[axis] = t - i as f64;
        }
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0;
            for axis in 0..d {
                let up = (corner >> (d - 1 - axis)) & 1;
                weight *= if up == 1 {
                    frac[axis]
                } else {
                    1.0 - frac[axis]
                };
                flat = flat * self.counts[axis] + base[axis] + up;
            }
            if weight != 0.0 {
                visit(flat, weight);
            }
        }
    }
}

/// Strictly positive values on a [`Lattice`], evaluated off-node by
/// multilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFunction {
    lattice: Lattice,
    values: Vec<f64>,
}

impl LatticeFunction {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        ensure!(
            values.len() == lattice.len(),
            LatticeMismatch,
            "{} values for {} nodes",
            values.len(),
            lattice.len()
        );
        if let Some(k) = values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "lattice value at node {k} is not strictly positive and finite: {}",
                values[k]
            )));
        }
        Ok(Self { lattice, values })
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = lattice.dim();
        let values = lattice.nodes().chunks(d).map(f).collect();
        Self::new(lattice, values)
    }

    pub fn constant(lattice: Lattice, value: f64) -> Result<Self> {
        let values = vec![value; lattice.len()];
        Self::new(lattice, values)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn region(&self) -> &BoxRegion {
        self.lattice.region()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Multilinear interpolant; points outside the box are clamped onto it.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.lattice
            .for_each_corner(x, |flat, w| acc += w * self.values[flat]);
        acc
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Trapezoidal integral over the box.
    pub fn integral(&self) -> f64 {
        self.lattice
            .trapezoid_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Applies `f` nodewise; the result must stay strictly positive.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.lattice.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Nodewise `f(self, other)` on identical lattices.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_lattice(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.lattice.clone(), values)
    }

    pub fn check_same_lattice(&self, other: &Self) -> Result<()> {
        ensure!(
            self.lattice == other.lattice,
            LatticeMismatch,
            "lattices differ ({:?} vs {:?})",
            self.lattice.counts(),
            other.lattice.counts()
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Lattice {
        Lattice::uniform(BoxRegion::cube(1, 0.0, 1.0).unwrap(), n).unwrap()
    }

    #[test]
    fn nodes_cover_box_exactly() {
        let l = Lattice::new(
            BoxRegion::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap(),
            vec![3, 5],
        )
        .unwrap();
        assert_eq!(l.len(), 15);
        assert_eq!(l.node(0), vec![0.0, -1.0]);
        assert_eq!(l.node(4), vec![0.0, 1.0]);
        assert_eq!(l.node(5), vec![0.5, -1.0]);
        assert_eq!(l.node(14), vec![1.0, 1.0]);
    }

    #[test]
    fn multilinear_is_exact_for_bilinear_functions() {
        let l = Lattice::uniform(BoxRegion::cube(2, 0.0, 2.0).unwrap(), 5).unwrap();
        let f = |x: &[f64]| 1.0 + x[0] + 2.0 * x[1] + 0.5 * x[0] * x[1];
        let lf = LatticeFunction::from_fn(l, f).unwrap();
        for p in [[0.3, 1.7], [1.99, 0.01], [0.0, 2.0], [1.25, 1.25]] {
            assert!((lf.eval(&p) - f(&p)).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_clamps_outside_points() {
        let lf = LatticeFunction::from_fn(unit(11), |x| 1.0 + x[0]).unwrap();
        assert!((lf.eval(&[-3.0]) - 1.0).abs() < 1e-15);
        assert!((lf.eval(&[4.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_values() {
        assert!(LatticeFunction::new(unit(3), vec![1.0, 0.0, 1.0]).is_err());
        assert!(LatticeFunction::new(unit(3), vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn trapezoid_integrates_affine_exactly() {
        let lf = LatticeFunction::from_fn(unit(101), |x| x[0] + 1.0).unwrap();
        assert!((lf.integral() - 1.5).abs() < 1e-12);
    }
}
