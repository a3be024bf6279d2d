//! Reference diffusions `dX = a(t, X) dt + sigma(t, X) dW` on `[0, T]`.

use crate::error::{ensure, Result};
use crate::geometry::BoxRegion;

/// A d-dimensional diffusion driven by an m-dimensional Wiener process.
///
/// Only drift and diffusion are mandatory. The optional derivative hooks are
/// used by the reverse process; when they return `None`/`false` the reverse
/// coefficients fall back to central finite differences.
pub trait Diffusion: Send + Sync {
    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    /// Terminal time `T`.
    fn horizon(&self) -> f64;

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Row-major `d x m` diffusion matrix.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `sum_i d a^i / d x_i`.
    fn drift_divergence(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Writes `sum_j d b^{ij} / d x_j` for `b = sigma sigma^T`; returns false if
    /// not available analytically.
    fn diffusivity_divergence(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// `sum_{ij} d^2 b^{ij} / d x_i d x_j`.
    fn diffusivity_second_divergence(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Closed-form transition density, if the model has one.
    fn transition(&self) -> Option<&dyn TransitionDensity> {
        None
    }
}

/// Closed-form transition density `q(s, x; t, y)` and the box integrals built
/// from it.
pub trait TransitionDensity: Send + Sync {
    fn density(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> f64;

    /// Gradient of `log q(s, x; t, y)` in `x`.
    fn grad_log_density(&self, s: f64, x: &[f64], t: f64, y: &[f64], out: &mut [f64]);

    /// `Q_T(x) = int_{region} q(0, x; T, z) dz`.
    fn mass_to_region(&self, x: &[f64], region: &BoxRegion) -> f64;

    /// `Q_0(z) = int_{region} q(0, x; T, z) dx`.
    fn mass_from_region(&self, z: &[f64], region: &BoxRegion) -> f64;
}

/// `b = sigma sigma^T` for a row-major `d x m` matrix.
pub fn diffusivity(sigma: &[f64], d: usize, m: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..m).map(|k| sigma[i * m + k] * sigma[j * m + k]).sum();
        }
    }
}

type VecField = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
type ScalarField = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A model assembled from closures.
pub struct FnModel {
    dim: usize,
    noise_dim: usize,
    horizon: f64,
    drift: VecField,
    diffusion: VecField,
    drift_divergence: Option<ScalarField>,
    diffusivity_divergence: Option<VecField>,
    diffusivity_second: Option<ScalarField>,
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl FnModel {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        horizon: f64,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        ensure!(
            dim >= 1 && noise_dim >= 1,
            InvalidArgument,
            "dimensions must be positive"
        );
        ensure!(
            horizon > 0.0 && horizon.is_finite(),
            InvalidArgument,
            "horizon must be positive, got {horizon}"
        );
        Ok(Self {
            dim,
            noise_dim,
            horizon,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            drift_divergence: None,
            diffusivity_divergence: None,
            diffusivity_second: None,
        })
    }

    pub fn with_drift_divergence(
        mut self,
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.drift_divergence = Some(Box::new(f));
        self
    }

    pub fn with_diffusivity_divergence(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusivity_divergence = Some(Box::new(f));
        self
    }

    pub fn with_diffusivity_second_divergence(
        mut self,
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.diffusivity_second = Some(Box::new(f));
        self
    }
}

impl Diffusion for FnModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }

    fn drift_divergence(&self, t: f64, x: &[f64]) -> Option<f64> {
        self.drift_divergence.as_ref().map(|f| f(t, x))
    }

    fn diffusivity_divergence(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        match &self.diffusivity_divergence {
            Some(f) => {
                f(t, x, out);
                true
            }
            None => false,
        }
    }

    fn diffusivity_second_divergence(&self, t: f64, x: &[f64]) -> Option<f64> {
        self.diffusivity_second.as_ref().map(|f| f(t, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diffusivity_is_symmetric_psd() {
        // 2x3 sigma
        let s = [1.0, 0.5, -0.2, 0.0, 2.0, 0.3];
        let mut b = [0.0; 4];
        diffusivity(&s, 2, 3, &mut b);
        assert_eq!(b[1], b[2]);
        assert!(b[0] >= 0.0 && b[3] >= 0.0);
        assert!(b[0] * b[3] - b[1] * b[2] >= 0.0);
    }

    #[test]
    fn fn_model_validates() {
        let bad = FnModel::new(1, 1, 0.0, |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 1.0);
        assert!(bad.is_err());
    }
}
