//! Compactly supported product kernels on `[-1/2, 1/2]^d`.

use crate::error::{ensure, Result};

/// Univariate profile of a product kernel; each integrates to one on
/// `[-1/2, 1/2]` and is symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelShape {
    /// `(3/2)(1 - 4u^2)`.
    #[default]
    Epanechnikov,
    /// Indicator of `[-1/2, 1/2]`.
    Uniform,
}

impl KernelShape {
    #[inline]
    fn profile(self, u: f64) -> f64 {
        if u.abs() > 0.5 {
            return 0.0;
        }
        match self {
            KernelShape::Epanechnikov => 1.5 * (1.0 - 4.0 * u * u),
            KernelShape::Uniform => 1.0,
        }
    }

    fn sup(self) -> f64 {
        match self {
            KernelShape::Epanechnikov => 1.5,
            KernelShape::Uniform => 1.0,
        }
    }
}

/// Product kernel `K(u) = prod_i k(u_i)`, zero whenever some `|u_i| > 1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    shape: KernelShape,
    dim: usize,
    sup_norm: f64,
}

/// Support half-width in the max-norm.
pub const SUPPORT_RADIUS: f64 = 0.5;

impl Kernel {
    /// Builds the kernel and checks unit mass and vanishing first moments of the
    /// profile by composite Simpson quadrature (tolerance 1e-6).
    pub fn new(shape: KernelShape, dim: usize) -> Result<Self> {
        ensure!(
            dim >= 1,
            InvalidArgument,
            "kernel dimension must be positive"
        );
        let (mass, first) = profile_moments(shape);
        ensure!(
            (mass - 1.0).abs() < 1e-6 && first.abs() < 1e-6,
            Domain,
            "kernel profile has mass {mass} and first moment {first}"
        );
        Ok(Self {
            shape,
            dim,
            sup_norm: shape.sup().powi(dim as i32),
        })
    }

    pub fn epanechnikov(dim: usize) -> Self {
        Self::new(KernelShape::Epanechnikov, dim).expect("Epanechnikov profile is normalized")
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `||K||_inf`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// `K(u)`.
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        let mut acc = 1.0;
        for &ui in u {
            let v = self.shape.profile(ui);
            if v == 0.0 {
                return 0.0;
            }
            acc *= v;
        }
        acc
    }

    /// `K((x - c) / scale)` without the `scale^{-d}` factor.
    #[inline]
    pub fn eval_diff(&self, x: &[f64], c: &[f64], scale: f64) -> f64 {
        let inv = 1.0 / scale;
        let mut acc = 1.0;
        for (a, b) in x.iter().zip(c) {
            let v = self.shape.profile((a - b) * inv);
            if v == 0.0 {
                return 0.0;
            }
            acc *= v;
        }
        acc
    }

    /// Mollifier `scale^{-d} K(u / scale)`.
    pub fn eval_scaled(&self, u: &[f64], scale: f64) -> f64 {
        debug_assert!(scale > 0.0);
        let zero = [0.0; 8];
        if u.len() <= zero.len() {
            self.eval_diff(u, &zero[..u.len()], scale) / scale.powi(u.len() as i32)
        } else {
            let z = vec![0.0; u.len()];
            self.eval_diff(u, &z, scale) / scale.powi(u.len() as i32)
        }
    }
}

/// `(int k, int u k)` over `[-1/2, 1/2]`.
fn profile_moments(shape: KernelShape) -> (f64, f64) {
    let n = 2000;
    let h = 1.0 / n as f64;
    let mut mass = 0.0;
    let mut first = 0.0;
    for i in 0..=n {
        let u = -0.5 + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        // endpoints of the uniform profile sit on the jump; Simpson still sees the
        // constant 1 because profile(+-1/2) = 1
        let k = shape.profile(u);
        mass += w * k;
        first += w * u * k;
    }
    (mass * h / 3.0, first * h / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_value() {
        for d in 1..4 {
            let k = Kernel::epanechnikov(d);
            assert!((k.eval(&vec![0.0; d]) - 1.5f64.powi(d as i32)).abs() < 1e-15);
            assert_eq!(k.sup_norm(), 1.5f64.powi(d as i32));
        }
    }

    #[test]
    fn zero_outside_support() {
        let k = Kernel::epanechnikov(2);
        assert_eq!(k.eval(&[0.6, 0.0]), 0.0);
        assert_eq!(k.eval(&[0.0, -0.51]), 0.0);
        assert_eq!(k.eval(&[0.5, 0.0]), 0.0);
    }

    #[test]
    fn scaling_definition() {
        let k = Kernel::epanechnikov(2);
        let eps = 0.2;
        assert!((k.eval_scaled(&[0.0, 0.0], eps) - 1.5f64.powi(2) / (eps * eps)).abs() < 1e-12);
        assert!(
            (k.eval_scaled(&[0.05, -0.02], eps) - k.eval(&[0.25, -0.1]) / (eps * eps)).abs()
                < 1e-12
        );
        assert_eq!(k.eval_scaled(&[0.11, 0.0], eps), 0.0);
    }

    #[test]
    fn moments_by_independent_quadrature() {
        // 2-d midpoint rule on a 400x400 grid, independent of profile_moments
        for shape in [KernelShape::Epanechnikov, KernelShape::Uniform] {
            let k = Kernel::new(shape, 2).unwrap();
            let n = 400;
            let h = 1.0 / n as f64;
            let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let u = [-0.5 + (i as f64 + 0.5) * h, -0.5 + (j as f64 + 0.5) * h];
                    let v = k.eval(&u) * h * h;
                    m0 += v;
                    m1 += u[0] * v;
                    m2 += u[1] * v;
                }
            }
            assert!((m0 - 1.0).abs() < 1e-4, "{shape:?} mass {m0}");
            assert!(m1.abs() < 1e-12 && m2.abs() < 1e-12);
        }
    }
}
