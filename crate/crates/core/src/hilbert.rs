//! Hilbert projective distance, truncation and L1 normalization.
//!
//! Sup and inf are taken over lattice nodes. Under multilinear interpolation the
//! node extrema of `f / g` bound the interpolants, so this is the distance of the
//! stored representation.

use crate::error::{ensure, Error, Result};
use crate::lattice::LatticeFunction;

/// `log(max f/g) - log(min f/g)` over paired positive values.
pub fn hilbert_distance_values(f: &[f64], g: &[f64]) -> Result<f64> {
    ensure!(
        f.len() == g.len() && !f.is_empty(),
        LatticeMismatch,
        "value vectors have lengths {} and {}",
        f.len(),
        g.len()
    );
    let (lo, hi) = ratio_range(f, g)?;
    Ok((hi.ln() - lo.ln()).max(0.0))
}

/// `(min f/g, max f/g)`.
pub fn ratio_range(f: &[f64], g: &[f64]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, (&a, &b)) in f.iter().zip(g).enumerate() {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Domain(format!(
                "non-positive value at node {k}: ({a}, {b})"
            )));
        }
        let r = a / b;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

pub fn hilbert_distance(f: &LatticeFunction, g: &LatticeFunction) -> Result<f64> {
    f.check_same_lattice(g)?;
    hilbert_distance_values(f.values(), g.values())
}

/// Nodewise clamp into `[lo, hi]`.
pub fn truncate_clamp(f: &LatticeFunction, lo: f64, hi: f64) -> Result<LatticeFunction> {
    ensure!(
        lo > 0.0 && lo < hi,
        InvalidArgument,
        "truncation needs 0 < a < b, got [{lo}, {hi}]"
    );
    f.map(|v| v.clamp(lo, hi))
}

/// Number of values outside `[lo, hi]`.
pub fn count_clamped(values: &[f64], lo: f64, hi: f64) -> usize {
    values.iter().filter(|&&v| v < lo || v > hi).count()
}

/// Divides `f` by its trapezoidal L1 norm; returns the normalized function and
/// the norm.
pub fn l1_normalize(f: &LatticeFunction) -> Result<(LatticeFunction, f64)> {
    let norm = f.integral();
    ensure!(
        norm > 0.0 && norm.is_finite(),
        Domain,
        "L1 norm must be positive and finite, got {norm}"
    );
    Ok((f.map(|v| v / norm)?, norm))
}
