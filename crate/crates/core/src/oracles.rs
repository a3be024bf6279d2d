//! Ground truth for the estimators: Gaussian reference models with closed-form
//! transition densities, the exact fixed point of the discretized Schrödinger
//! system, and the closed forms for point-mass marginals.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::density::Density;
use crate::error::{ensure, Error, Result};
use crate::geometry::BoxRegion;
use crate::hilbert::hilbert_distance_values;
use crate::lattice::{Lattice, LatticeFunction};
use crate::model::{Diffusion, TransitionDensity};
use crate::regression::BoundsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Brownian,
    OrnsteinUhlenbeck,
}

/// `dX = -theta X dt + sigma dW` in `R^d` with isotropic `sigma`; `theta = 0`
/// is scaled Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianModel {
    dim: usize,
    sigma: f64,
    theta: f64,
    horizon: f64,
}

/// Gaussian reference model of the given kind (`theta` is ignored for
/// Brownian motion).
pub fn closed_form_model(
    kind: ModelKind,
    dim: usize,
    sigma: f64,
    theta: f64,
    horizon: f64,
) -> Result<GaussianModel> {
    ensure!(dim >= 1, InvalidArgument, "dimension must be positive");
    ensure!(
        sigma > 0.0 && sigma.is_finite(),
        InvalidArgument,
        "sigma must be positive, got {sigma}"
    );
    ensure!(theta.is_finite(), InvalidArgument, "theta must be finite");
    ensure!(
        horizon > 0.0,
        InvalidArgument,
        "horizon must be positive, got {horizon}"
    );
    let theta = match kind {
        ModelKind::Brownian => 0.0,
        ModelKind::OrnsteinUhlenbeck => theta,
    };
    Ok(GaussianModel {
        dim,
        sigma,
        theta,
        horizon,
    })
}

impl GaussianModel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Mean factor `e^{-theta tau}` and per-coordinate variance over a lag `tau`.
    fn moments(&self, tau: f64) -> (f64, f64) {
        let decay = (-self.theta * tau).exp();
        let var = if self.theta == 0.0 {
            self.sigma * self.sigma * tau
        } else {
            self.sigma * self.sigma * (-(-2.0 * self.theta * tau).exp_m1()) / (2.0 * self.theta)
        };
        (decay, var)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `Phi(b) - Phi(a)` for `a <= b`, computed on the side with less cancellation.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

impl Diffusion for GaussianModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -self.theta * v;
        }
    }

    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..d {
            out[i * d + i] = self.sigma;
        }
    }

    fn drift_divergence(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        Some(-self.theta * self.dim as f64)
    }

    fn diffusivity_divergence(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|o| *o = 0.0);
        true
    }

    fn diffusivity_second_divergence(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn transition(&self) -> Option<&dyn TransitionDensity> {
        Some(self)
    }
}

impl TransitionDensity for GaussianModel {
    fn density(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> f64 {
        let (decay, var) = self.moments(t - s);
        let norm = (2.0 * PI * var).sqrt();
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - a * decay;
                (-0.5 * r * r / var).exp() / norm
            })
            .product()
    }

    fn grad_log_density(&self, s: f64, x: &[f64], t: f64, y: &[f64], out: &mut [f64]) {
        let (decay, var) = self.moments(t - s);
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = decay * (b - a * decay) / var;
        }
    }

    fn mass_to_region(&self, x: &[f64], region: &BoxRegion) -> f64 {
        let (decay, var) = self.moments(self.horizon);
        let sd = var.sqrt();
        (0..self.dim)
            .map(|k| {
                let m = x[k] * decay;
                normal_mass((region.lo()[k] - m) / sd, (region.hi()[k] - m) / sd)
            })
            .product()
    }

    fn mass_from_region(&self, z: &[f64], region: &BoxRegion) -> f64 {
        let (decay, var) = self.moments(self.horizon);
        let sd = var.sqrt();
        (0..self.dim)
            .map(|k| {
                normal_mass(
                    (z[k] - region.hi()[k] * decay) / sd,
                    (z[k] - region.lo()[k] * decay) / sd,
                ) / decay
            })
            .product()
    }
}

/// The Schrödinger system discretized on two node sets with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GridProblem {
    pub dim: usize,
    /// Start nodes, `n0 x dim` (may be empty for matrix-only problems).
    pub start_nodes: Vec<f64>,
    /// End nodes, `nt x dim`.
    pub end_nodes: Vec<f64>,
    /// `q(0, x_i; T, z_j)`, `n0 x nt` row-major.
    pub kernel: Vec<f64>,
    pub rho0: Vec<f64>,
    pub rho_t: Vec<f64>,
    pub w0: Vec<f64>,
    pub w_t: Vec<f64>,
}

/// Fixed point `g*` and the potentials on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub g: Vec<f64>,
    pub nu0: Vec<f64>,
    pub nu_t: Vec<f64>,
    pub increments: Vec<f64>,
}

impl GridSolution {
    pub fn iterations(&self) -> usize {
        self.increments.len()
    }
}

impl GridProblem {
    /// Validates and normalizes the marginals to unit quadrature mass.
    pub fn from_matrix(
        kernel: Vec<f64>,
        rho0: Vec<f64>,
        rho_t: Vec<f64>,
        w0: Vec<f64>,
        w_t: Vec<f64>,
    ) -> Result<Self> {
        let (n0, nt) = (rho0.len(), rho_t.len());
        ensure!(
            n0 >= 1 && nt >= 1,
            InvalidArgument,
            "grid problem needs nodes"
        );
        ensure!(
            kernel.len() == n0 * nt && w0.len() == n0 && w_t.len() == nt,
            InvalidArgument,
            "kernel is {} entries for {n0}x{nt}; weights {}/{}",
            kernel.len(),
            w0.len(),
            w_t.len()
        );
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        ensure!(
            positive(&kernel),
            Domain,
            "kernel entries must be strictly positive"
        );
        ensure!(
            positive(&rho0) && positive(&rho_t) && positive(&w0) && positive(&w_t),
            Domain,
            "marginals and weights must be strictly positive"
        );
        let mut p = Self {
            dim: 0,
            start_nodes: Vec::new(),
            end_nodes: Vec::new(),
            kernel,
            rho0,
            rho_t,
            w0,
            w_t,
        };
        let m0: f64 = p.w0.iter().zip(&p.rho0).map(|(w, r)| w * r).sum();
        let mt: f64 = p.w_t.iter().zip(&p.rho_t).map(|(w, r)| w * r).sum();
        p.rho0.iter_mut().for_each(|r| *r /= m0);
        p.rho_t.iter_mut().for_each(|r| *r /= mt);
        Ok(p)
    }

    /// Discretizes a closed-form model on two lattices with trapezoidal weights.
    pub fn from_model(
        q: &dyn TransitionDensity,
        horizon: f64,
        start: &Lattice,
        end: &Lattice,
        rho0: &dyn Density,
        rho_t: &dyn Density,
    ) -> Result<Self> {
        let d = start.dim();
        let xs = start.nodes();
        let zs = end.nodes();
        let kernel: Vec<f64> = xs
            .chunks(d)
            .flat_map(|x| zs.chunks(d).map(move |z| q.density(0.0, x, horizon, z)))
            .collect();
        let r0 = xs.chunks(d).map(|x| rho0.eval(x)).collect();
        let rt = zs.chunks(d).map(|z| rho_t.eval(z)).collect();
        let mut p = Self::from_matrix(
            kernel,
            r0,
            rt,
            start.trapezoid_weights(),
            end.trapezoid_weights(),
        )?;
        p.dim = d;
        p.start_nodes = xs;
        p.end_nodes = zs;
        Ok(p)
    }

    pub fn n_start(&self) -> usize {
        self.rho0.len()
    }

    pub fn n_end(&self) -> usize {
        self.rho_t.len()
    }

    fn q(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.n_end() + j]
    }

    pub fn kernel_range(&self) -> (f64, f64) {
        self.kernel
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `tanh^2(log(q_max / q_min) / 2)` over the kernel matrix.
    pub fn contraction_ceiling(&self) -> f64 {
        let (lo, hi) = self.kernel_range();
        (0.5 * (hi / lo).ln()).tanh().powi(2)
    }

    /// `int q(0, x_i; T, z) nu_T(z) dz` at every start node.
    pub fn forward_integral(&self, nu_t: &[f64]) -> Vec<f64> {
        (0..self.n_start())
            .map(|i| {
                (0..self.n_end())
                    .map(|j| self.w_t[j] * self.q(i, j) * nu_t[j])
                    .sum()
            })
            .collect()
    }

    /// `int nu_0(x) q(0, x; T, z_j) dx` at every end node.
    pub fn backward_integral(&self, nu0: &[f64]) -> Vec<f64> {
        (0..self.n_end())
            .map(|j| {
                (0..self.n_start())
                    .map(|i| self.w0[i] * nu0[i] * self.q(i, j))
                    .sum()
            })
            .collect()
    }

    /// The exact discrete fixed-point map `C[g]`.
    pub fn apply_c(&self, g: &[f64]) -> Vec<f64> {
        let inner: Vec<f64> = self.rho_t.iter().zip(g).map(|(r, v)| r / v).collect();
        let u = self.forward_integral(&inner);
        let outer: Vec<f64> = self.rho0.iter().zip(&u).map(|(r, v)| r / v).collect();
        self.backward_integral(&outer)
    }

    /// Quadrature L1 norm on the end nodes.
    pub fn end_norm(&self, g: &[f64]) -> f64 {
        self.w_t.iter().zip(g).map(|(w, v)| w * v).sum()
    }

    /// `(nu_0, nu_T)` from `g` via `nu_T = rho_T / g`, `nu_0 = rho_0 / int q nu_T`.
    pub fn potentials(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nu_t: Vec<f64> = self.rho_t.iter().zip(g).map(|(r, v)| r / v).collect();
        let nu0 = self
            .rho0
            .iter()
            .zip(self.forward_integral(&nu_t))
            .map(|(r, v)| r / v)
            .collect();
        (nu0, nu_t)
    }

    /// Largest relative residuals of the two equations of the discrete system.
    pub fn system_residuals(&self, nu0: &[f64], nu_t: &[f64]) -> (f64, f64) {
        let r0 = self
            .forward_integral(nu_t)
            .iter()
            .zip(nu0)
            .zip(&self.rho0)
            .map(|((f, n), r)| (n * f - r).abs() / r)
            .fold(0.0, f64::max);
        let rt = self
            .backward_integral(nu0)
            .iter()
            .zip(nu_t)
            .zip(&self.rho_t)
            .map(|((b, n), r)| (n * b - r).abs() / r)
            .fold(0.0, f64::max);
        (r0, rt)
    }
}

/// Iterates `g <- C[g] / ||C[g]||_1` from the uniform density until successive
/// Hilbert distances drop below `tol`.
pub fn grid_fixed_point(p: &GridProblem, tol: f64, max_iter: usize) -> Result<GridSolution> {
    let total: f64 = p.w_t.iter().sum();
    grid_fixed_point_from(p, vec![1.0 / total; p.n_end()], tol, max_iter)
}

/// As [`grid_fixed_point`] from a given positive start.
pub fn grid_fixed_point_from(
    p: &GridProblem,
    g0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<GridSolution> {
    ensure!(tol > 0.0, InvalidArgument, "tolerance must be positive");
    ensure!(
        g0.len() == p.n_end(),
        InvalidArgument,
        "start vector has wrong length"
    );
    let mut g = g0;
    let mut increments = Vec::new();
    for _ in 0..max_iter {
        let mut next = p.apply_c(&g);
        let norm = p.end_norm(&next);
        next.iter_mut().for_each(|v| *v /= norm);
        let inc = hilbert_distance_values(&next, &g)?;
        increments.push(inc);
        g = next;
        if inc < tol {
            let (nu0, nu_t) = p.potentials(&g);
            return Ok(GridSolution {
                g,
                nu0,
                nu_t,
                increments,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_increment: increments.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Solver bound constants computed on lattice nodes.
pub fn oracle_bounds(
    q: &dyn TransitionDensity,
    horizon: f64,
    start: &Lattice,
    end: &Lattice,
    rho0: &dyn Density,
    rho_t: &dyn Density,
) -> Result<BoundsConfig> {
    let d = start.dim();
    let xs = start.nodes();
    let zs = end.nodes();
    let (mut q_min, mut q_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs.chunks(d) {
        for z in zs.chunks(d) {
            let v = q.density(0.0, x, horizon, z);
            q_min = q_min.min(v);
            q_max = q_max.max(v);
        }
    }
    let masses = xs
        .chunks(d)
        .map(|x| q.mass_to_region(x, end.region()))
        .chain(zs.chunks(d).map(|z| q.mass_from_region(z, start.region())));
    let (m_min, m_max) = masses.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let (a0, b0) = rho0.bounds();
    let (a1, b1) = rho_t.bounds();
    BoundsConfig::new(q_min, q_max, m_min, m_max, a0.min(a1), b0.max(b1))
}

/// Marginal configurations with a point mass.
#[derive(Debug, Clone, PartialEq)]
pub enum DegenerateCase {
    /// `rho_0 = delta_{x0}`; `other` is `rho_T` on a lattice over `S_T`.
    StartAtom {
        x0: Vec<f64>,
        other: LatticeFunction,
    },
    /// `rho_T = delta_{z0}`; `other` is `rho_0` on a lattice over `S_0`.
    EndAtom {
        z0: Vec<f64>,
        other: LatticeFunction,
    },
    /// The classical bridge `x0 -> z0`.
    BothAtoms { x0: Vec<f64>, z0: Vec<f64> },
}

/// A potential that is either a weighted point mass or a lattice density.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialForm {
    Atom { point: Vec<f64>, mass: f64 },
    Lattice(LatticeFunction),
}

/// Closed-form potentials `(nu_0, nu_T)` for point-mass marginals, with the
/// free scale constant set to one.
pub fn degenerate_potentials(
    case: &DegenerateCase,
    q: &dyn TransitionDensity,
    horizon: f64,
) -> Result<(PotentialForm, PotentialForm)> {
    Ok(match case {
        DegenerateCase::StartAtom { x0, other } => {
            let d = other.lattice().dim();
            let nodes = other.lattice().nodes();
            let values = nodes
                .chunks(d)
                .zip(other.values())
                .map(|(z, r)| r / q.density(0.0, x0, horizon, z))
                .collect();
            (
                PotentialForm::Atom {
                    point: x0.clone(),
                    mass: 1.0,
                },
                PotentialForm::Lattice(LatticeFunction::new(other.lattice().clone(), values)?),
            )
        }
        DegenerateCase::EndAtom { z0, other } => {
            let d = other.lattice().dim();
            let nodes = other.lattice().nodes();
            let values = nodes
                .chunks(d)
                .zip(other.values())
                .map(|(x, r)| r / q.density(0.0, x, horizon, z0))
                .collect();
            (
                PotentialForm::Lattice(LatticeFunction::new(other.lattice().clone(), values)?),
                PotentialForm::Atom {
                    point: z0.clone(),
                    mass: 1.0,
                },
            )
        }
        DegenerateCase::BothAtoms { x0, z0 } => (
            PotentialForm::Atom {
                point: x0.clone(),
                mass: 1.0 / q.density(0.0, x0, horizon, z0),
            },
            PotentialForm::Atom {
                point: z0.clone(),
                mass: 1.0,
            },
        ),
    })
}
