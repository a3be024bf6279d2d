//! Probability densities on boxes: marginals, proposal densities and
//! normalized potentials.

use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::geometry::BoxRegion;
use crate::hilbert::l1_normalize;
use crate::lattice::LatticeFunction;
use crate::rng::StreamRng;

/// A density supported on a box (zero outside it) with an exact sampler.
pub trait Density: Send + Sync {
    fn support(&self) -> &BoxRegion;

    fn dim(&self) -> usize {
        self.support().dim()
    }

    /// Value at `x`; zero outside the support.
    fn eval(&self, x: &[f64]) -> f64;

    /// `(inf, sup)` of the density over its support.
    fn bounds(&self) -> (f64, f64);

    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) -> Result<()>;
}

/// Uniform density on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformDensity {
    region: BoxRegion,
    value: f64,
}

impl UniformDensity {
    pub fn new(region: BoxRegion) -> Self {
        let value = 1.0 / region.volume();
        Self { region, value }
    }
}

impl Density for UniformDensity {
    fn support(&self) -> &BoxRegion {
        &self.region
    }

    fn eval(&self, x: &[f64]) -> f64 {
        if self.region.contains(x) {
            self.value
        } else {
            0.0
        }
    }

    fn bounds(&self) -> (f64, f64) {
        (self.value, self.value)
    }

    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        for (k, o) in out.iter_mut().enumerate() {
            *o = rng.random_range(self.region.lo()[k]..self.region.hi()[k]);
        }
        Ok(())
    }
}

/// Product density `prod_k p(x_k) / Z` where `p` is one univariate polynomial
/// (coefficients in increasing degree) shared by all axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialDensity {
    region: BoxRegion,
    coeffs: Vec<f64>,
    axis_norms: Vec<f64>,
    bounds: (f64, f64),
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Antiderivative of `poly(coeffs)` vanishing at zero.
fn poly_antiderivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (k, c)| acc * x + c / (k + 1) as f64)
        * x
}

impl PolynomialDensity {
    /// Fails if the polynomial is not strictly positive on the box (checked on a
    /// 1025-point grid per axis).
    pub fn new(region: BoxRegion, coeffs: Vec<f64>) -> Result<Self> {
        ensure!(
            !coeffs.is_empty(),
            InvalidArgument,
            "polynomial needs coefficients"
        );
        let d = region.dim();
        let mut axis_norms = Vec::with_capacity(d);
        let mut lo_prod = 1.0;
        let mut hi_prod = 1.0;
        for k in 0..d {
            let (a, b) = (region.lo()[k], region.hi()[k]);
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for i in 0..=1024 {
                let v = poly(&coeffs, a + (b - a) * i as f64 / 1024.0);
                min = min.min(v);
                max = max.max(v);
            }
            ensure!(
                min > 0.0,
                Domain,
                "polynomial density is not strictly positive on axis {k} (min {min})"
            );
            let z = poly_antiderivative(&coeffs, b) - poly_antiderivative(&coeffs, a);
            axis_norms.push(z);
            lo_prod *= min / z;
            hi_prod *= max / z;
        }
        Ok(Self {
            region,
            coeffs,
            axis_norms,
            bounds: (lo_prod, hi_prod),
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Inverse CDF along one axis by bisection.
    fn axis_quantile(&self, axis: usize, u: f64) -> f64 {
        let (mut a, mut b) = (self.region.lo()[axis], self.region.hi()[axis]);
        let base = poly_antiderivative(&self.coeffs, a);
        let target = u * self.axis_norms[axis];
        for _ in 0..64 {
            let mid = 0.5 * (a + b);
            if poly_antiderivative(&self.coeffs, mid) - base < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

impl Density for PolynomialDensity {
    fn support(&self) -> &BoxRegion {
        &self.region
    }

    fn eval(&self, x: &[f64]) -> f64 {
        if !self.region.contains(x) {
            return 0.0;
        }
        x.iter()
            .zip(&self.axis_norms)
            .map(|(&v, z)| poly(&self.coeffs, v) / z)
            .product()
    }

    fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        for (k, o) in out.iter_mut().enumerate() {
            let u: f64 = rng.random();
            *o = self.axis_quantile(k, u);
        }
        Ok(())
    }
}

/// Lattice-backed probability density with a rejection sampler.
///
/// The proposal is uniform on the lattice box and a draw is accepted with
/// probability `density / envelope`, so samples are exact for the multilinear
/// interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSampler {
    density: LatticeFunction,
    envelope: f64,
}

const MIN_ACCEPTANCE: f64 = 1e-4;

impl PotentialSampler {
    /// Normalizes `f` to unit trapezoidal mass and takes the largest node value
    /// as envelope.
    pub fn new(f: &LatticeFunction) -> Result<Self> {
        let (density, _) = l1_normalize(f)?;
        let envelope = density.max();
        let sampler = Self { density, envelope };
        let rate = sampler.acceptance_rate();
        if rate < MIN_ACCEPTANCE {
            return Err(Error::PathologicalEnvelope { rate });
        }
        Ok(sampler)
    }

    pub fn density(&self) -> &LatticeFunction {
        &self.density
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    /// Expected acceptance probability of one proposal.
    pub fn acceptance_rate(&self) -> f64 {
        1.0 / (self.envelope * self.density.region().volume())
    }
}

impl Density for PotentialSampler {
    fn support(&self) -> &BoxRegion {
        self.density.region()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        if self.support().contains(x) {
            self.density.eval(x)
        } else {
            0.0
        }
    }

    fn bounds(&self) -> (f64, f64) {
        (self.density.min(), self.density.max())
    }

    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        let region = self.density.region();
        // 100x the expected number of proposals before declaring the envelope broken
        let budget = (100.0 / self.acceptance_rate()).ceil().max(1000.0) as usize;
        for _ in 0..budget {
            for (k, o) in out.iter_mut().enumerate() {
                *o = rng.random_range(region.lo()[k]..region.hi()[k]);
            }
            let u: f64 = rng.random();
            if u * self.envelope < self.density.eval(out) {
                return Ok(());
            }
        }
        Err(Error::PathologicalEnvelope {
            rate: 1.0 / budget as f64,
        })
    }
}
