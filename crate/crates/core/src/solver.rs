//! Truncated, normalized Picard iteration for the Schrödinger fixed point.
//!
//! ```text
//! g_l = T_[g*_min, g*_max]( C^N[g_{l-1}] / ||C^N[g_{l-1}]||_1 ),  C^N = E_0^N D_0 E_T^N D_T
//! ```
//!
//! where `D` is pointwise inversion. The potentials follow from the limit as
//! `nu_T = rho_T / g` and `nu_0 = rho_0 / E_T^N[1 / g]`.

use rayon::prelude::*;

use crate::density::Density;
use crate::error::{ensure, Result};
use crate::hilbert::{count_clamped, hilbert_distance, l1_normalize, ratio_range, truncate_clamp};
use crate::lattice::{Lattice, LatticeFunction};
use crate::model::Diffusion;
use crate::regression::{
    default_bandwidth, BoundsConfig, CompiledOperator, Estimator, EstimatorMode, SampleClouds,
};
use crate::rng::{SeedStream, StreamDomain};
use crate::sde::{derive_reverse_model, run_forward, run_reverse, Direction, TimeGrid};

/// Iteration cap when `k_max` is chosen adaptively.
pub const ADAPTIVE_CEILING: usize = 200;

/// Nodes per axis used when no resolution is given.
pub fn default_lattice_nodes(dim: usize) -> usize {
    if dim <= 2 {
        64
    } else {
        16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Cloud size `N`.
    pub n: usize,
    pub steps: usize,
    /// Assumed Hölder smoothness in `(0, 1]`.
    pub alpha: f64,
    /// Overrides [`default_bandwidth`].
    pub bandwidth: Option<f64>,
    pub bounds: BoundsConfig,
    /// Iteration cap; `None` picks it from the estimated contraction.
    pub k_max: Option<usize>,
    pub stop_tol: f64,
    pub master_seed: u64,
    pub resample_per_iteration: bool,
    /// Lattice nodes per axis on both supports.
    pub lattice_nodes: usize,
    pub mode: EstimatorMode,
}

impl SolverConfig {
    pub fn new(n: usize, bounds: BoundsConfig, master_seed: u64) -> Self {
        Self {
            n,
            steps: crate::sde::DEFAULT_STEPS,
            alpha: 1.0,
            bandwidth: None,
            bounds,
            k_max: None,
            stop_tol: 1e-8,
            master_seed,
            resample_per_iteration: false,
            lattice_nodes: 0,
            mode: EstimatorMode::SelfNormalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n >= 10,
            InvalidArgument,
            "cloud size must be at least 10, got {}",
            self.n
        );
        ensure!(self.steps >= 1, InvalidArgument, "steps must be positive");
        ensure!(
            self.k_max.is_none_or(|k| k >= 1),
            InvalidArgument,
            "k_max must be at least 1"
        );
        ensure!(
            self.stop_tol > 0.0,
            InvalidArgument,
            "stop_tol must be positive"
        );
        ensure!(
            self.alpha > 0.0 && self.alpha <= 1.0,
            Domain,
            "alpha must lie in (0, 1], got {}",
            self.alpha
        );
        if let Some(b) = self.bandwidth {
            ensure!(
                b > 0.0 && b < 1.0,
                InvalidArgument,
                "bandwidth must lie in (0, 1), got {b}"
            );
        }
        ensure!(
            self.lattice_nodes == 0 || self.lattice_nodes >= 2,
            InvalidArgument,
            "lattice needs at least 2 nodes per axis"
        );
        self.bounds.validate()
    }

    pub fn bandwidth_for(&self, dim: usize) -> Result<f64> {
        match self.bandwidth {
            Some(b) => Ok(b),
            None => default_bandwidth(self.n, dim, self.alpha),
        }
    }

    pub fn nodes_for(&self, dim: usize) -> usize {
        if self.lattice_nodes == 0 {
            default_lattice_nodes(dim)
        } else {
            self.lattice_nodes
        }
    }
}

/// `C^N` compiled for fixed clouds and lattices.
#[derive(Debug, Clone)]
pub struct CHat {
    start: Lattice,
    end: Lattice,
    /// Reverse-cloud indices whose endpoint lies in `S_0`.
    inner_ends: Vec<usize>,
    /// `E_T^N` at those endpoints followed by the `S_0` lattice nodes.
    inner: CompiledOperator,
    /// `E_0^N` at the `S_T` lattice nodes.
    outer: CompiledOperator,
    /// Forward-cloud endpoints in `S_T`.
    forward_ends: Vec<Option<Vec<f64>>>,
    reverse_len: usize,
}

/// Result of one application of `C^N`.
#[derive(Debug, Clone)]
pub struct CHatOutput {
    pub value: LatticeFunction,
    /// `E_T^N[1/f]` on the `S_0` lattice.
    pub inner_on_start: LatticeFunction,
    pub fallbacks: usize,
}

impl CHat {
    pub fn new(est: &Estimator<'_>, start: Lattice, end: Lattice) -> Result<Self> {
        let d = est.clouds.dim();
        ensure!(
            start.dim() == d && end.dim() == d,
            InvalidArgument,
            "lattice dimensions disagree with the clouds"
        );
        let rev = est.clouds.reverse();
        let inner_ends: Vec<usize> = (0..rev.len())
            .filter(|&i| est.rho0.eval(rev.end(i)) > 0.0)
            .collect();
        let mut points: Vec<f64> = inner_ends
            .iter()
            .flat_map(|&i| rev.end(i).to_vec())
            .collect();
        points.extend(start.nodes());
        let inner = est.compile(&points, Direction::Forward);
        let outer = est.compile(&end.nodes(), Direction::Reverse);
        let fwd = est.clouds.forward();
        let forward_ends = (0..fwd.len())
            .map(|i| {
                let e = fwd.end(i);
                (est.rho_t.eval(e) > 0.0).then(|| e.to_vec())
            })
            .collect();
        Ok(Self {
            start,
            end,
            inner_ends,
            inner,
            outer,
            forward_ends,
            reverse_len: rev.len(),
        })
    }

    pub fn start_lattice(&self) -> &Lattice {
        &self.start
    }

    pub fn end_lattice(&self) -> &Lattice {
        &self.end
    }

    /// `E_T^N[1/f]` at the inner evaluation points.
    fn inner_stage(&self, f: &LatticeFunction) -> Vec<f64> {
        let inv: Vec<f64> = self
            .forward_ends
            .iter()
            .map(|e| e.as_ref().map_or(0.0, |e| 1.0 / f.eval(e)))
            .collect();
        self.inner.apply(&inv, 1.0 / f.max())
    }

    pub fn apply(&self, f: &LatticeFunction) -> Result<CHatOutput> {
        ensure!(
            f.lattice() == &self.end,
            LatticeMismatch,
            "argument must live on the S_T lattice"
        );
        let u = self.inner_stage(f);
        let u_max = u.iter().copied().fold(0.0, f64::max);
        let mut inv_u = vec![0.0; self.reverse_len];
        for (k, &i) in self.inner_ends.iter().enumerate() {
            inv_u[i] = 1.0 / u[k];
        }
        let out = self.outer.apply(&inv_u, 1.0 / u_max);
        let m = self.inner_ends.len();
        Ok(CHatOutput {
            value: LatticeFunction::new(self.end.clone(), out)?,
            inner_on_start: LatticeFunction::new(self.start.clone(), u[m..].to_vec())?,
            fallbacks: self.inner.fallback_count() + self.outer.fallback_count(),
        })
    }
}

/// `C^N[f]` on the lattice of `f`, with `S_0` discretized by `start`.
pub fn apply_c_hat(
    est: &Estimator<'_>,
    start: &Lattice,
    f: &LatticeFunction,
) -> Result<LatticeFunction> {
    Ok(CHat::new(est, start.clone(), f.lattice().clone())?
        .apply(f)?
        .value)
}

/// Median of successive increment ratios clamped to `[0.01, ceiling]`; the
/// ceiling itself when fewer than three increments are available.
pub fn estimate_contraction(increments: &[f64], ceiling: f64) -> f64 {
    let floor = 0.01f64.min(ceiling);
    if increments.len() < 3 {
        return ceiling;
    }
    let mut ratios: Vec<f64> = increments
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let k = ratios.len();
    let median = if k % 2 == 1 {
        ratios[k / 2]
    } else {
        0.5 * (ratios[k / 2 - 1] + ratios[k / 2])
    };
    median.clamp(floor, ceiling)
}

/// Iteration count `ceil(((1 + alpha) / (2(1 + alpha) + d)) log N / log(1/kappa))`.
pub fn iteration_budget(n: usize, dim: usize, alpha: f64, kappa: f64) -> usize {
    let rate = (1.0 + alpha) / (2.0 * (1.0 + alpha) + dim as f64);
    (rate * (n as f64).ln() / (1.0 / kappa).ln())
        .ceil()
        .max(1.0) as usize
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    /// `d_H(g_l, g_{l-1})`.
    pub increments: Vec<f64>,
    /// `||C^N[g_{l-1}]||_1`.
    pub l1_norms: Vec<f64>,
    /// Nodes moved by the clamp.
    pub clamped: Vec<usize>,
    /// Whether `min <= 1 <= max` held for the ratio of the normalized iterate to
    /// its predecessor.
    pub straddles: Vec<bool>,
    pub fallbacks: Vec<usize>,
    /// Iterations where the clamp moved more than 10% of the nodes.
    pub saturated: Vec<usize>,
    pub contraction: f64,
}

#[derive(Debug, Clone)]
pub struct SchrodingerSolution {
    pub g_hat: LatticeFunction,
    pub nu_t: LatticeFunction,
    pub nu_0: LatticeFunction,
    pub trace: IterationTrace,
    /// `false` if the cap was hit with the last increment above `stop_tol`.
    pub converged: bool,
    pub bandwidth: f64,
    pub clouds: SampleClouds,
    pub config: SolverConfig,
}

/// `(nu_0, nu_T)` from `g`.
pub fn potentials_from_g(
    est: &Estimator<'_>,
    start: &Lattice,
    g: &LatticeFunction,
) -> Result<(LatticeFunction, LatticeFunction)> {
    let nu_t = LatticeFunction::from_fn(g.lattice().clone(), |z| est.rho_t.eval(z))?
        .zip_map(g, |r, v| r / v)?;
    let inv: Vec<f64> = (0..est.clouds.forward().len())
        .map(|i| {
            let e = est.clouds.forward().end(i);
            if est.rho_t.eval(e) > 0.0 {
                1.0 / g.eval(e)
            } else {
                0.0
            }
        })
        .collect();
    let u = est
        .compile(&start.nodes(), Direction::Forward)
        .apply(&inv, 1.0 / g.max());
    let rho0 = LatticeFunction::from_fn(start.clone(), |x| est.rho0.eval(x))?;
    let nu_0 = rho0.zip_map(&LatticeFunction::new(start.clone(), u)?, |r, v| r / v)?;
    Ok((nu_0, nu_t))
}

/// Iterates on fixed clouds (or fresh ones per iteration when the config asks
/// for it and `model` is given).
pub fn picard_solve_with_clouds(
    clouds: SampleClouds,
    model: Option<&dyn Diffusion>,
    rho0: &dyn Density,
    rho_t: &dyn Density,
    config: &SolverConfig,
) -> Result<SchrodingerSolution> {
    config.validate()?;
    let d = clouds.dim();
    let exact = model.and_then(|m| m.transition());
    let nodes = config.nodes_for(d);
    let start = Lattice::uniform(rho0.support().clone(), nodes)?;
    let end = Lattice::uniform(rho_t.support().clone(), nodes)?;
    let (g_lo, g_hi) = (config.bounds.g_star_min(), config.bounds.g_star_max());
    let ceiling = config.bounds.contraction_ceiling();

    let mut clouds = clouds;
    let build = |clouds: &SampleClouds| -> Result<CHat> {
        let est =
            Estimator::new(clouds, rho0, rho_t, config.bounds, config.mode)?.with_exact(exact);
        CHat::new(&est, start.clone(), end.clone())
    };
    let mut op = build(&clouds)?;

    let mut g = LatticeFunction::constant(end.clone(), 1.0 / rho_t.support().volume())?;
    let mut trace = IterationTrace::default();
    let hard_cap = config.k_max.unwrap_or(ADAPTIVE_CEILING);
    let mut converged = false;
    for l in 1..=hard_cap {
        if config.resample_per_iteration && l > 1 {
            if let Some(m) = model {
                clouds = SampleClouds::simulate(
                    m,
                    rho0.support().clone(),
                    rho_t.support().clone(),
                    config.n,
                    config.steps,
                    clouds.bandwidth(),
                    config.master_seed,
                    l as u64 - 1,
                )?;
                op = build(&clouds)?;
            }
        }
        let out = op.apply(&g)?;
        let (normalized, norm) = l1_normalize(&out.value)?;
        let (lo, hi) = ratio_range(normalized.values(), g.values())?;
        let tol = 1e-12;
        trace.straddles.push(lo <= 1.0 + tol && hi >= 1.0 - tol);
        let clamped = count_clamped(normalized.values(), g_lo, g_hi);
        if clamped * 10 > end.len() {
            trace.saturated.push(l);
        }
        let next = truncate_clamp(&normalized, g_lo, g_hi)?;
        let inc = hilbert_distance(&next, &g)?;
        trace.increments.push(inc);
        trace.l1_norms.push(norm);
        trace.clamped.push(clamped);
        trace.fallbacks.push(out.fallbacks);
        g = next;
        if inc < config.stop_tol {
            converged = true;
            break;
        }
        if config.k_max.is_none() && trace.increments.len() >= 3 {
            let kappa = estimate_contraction(&trace.increments, ceiling);
            if l >= iteration_budget(config.n, d, config.alpha, kappa) {
                converged = true;
                break;
            }
        }
    }
    trace.contraction = estimate_contraction(&trace.increments, ceiling);

    let est = Estimator::new(&clouds, rho0, rho_t, config.bounds, config.mode)?.with_exact(exact);
    let (nu_0, nu_t) = potentials_from_g(&est, &start, &g)?;
    Ok(SchrodingerSolution {
        g_hat: g,
        nu_t,
        nu_0,
        trace,
        converged,
        bandwidth: clouds.bandwidth(),
        clouds,
        config: config.clone(),
    })
}

/// Simulates the clouds from `model` and runs the iteration.
pub fn picard_solve(
    model: &dyn Diffusion,
    rho0: &dyn Density,
    rho_t: &dyn Density,
    config: &SolverConfig,
) -> Result<SchrodingerSolution> {
    config.validate()?;
    let d = model.dim();
    ensure!(
        rho0.dim() == d && rho_t.dim() == d,
        InvalidArgument,
        "marginal dimensions disagree with the model"
    );
    let clouds = SampleClouds::simulate(
        model,
        rho0.support().clone(),
        rho_t.support().clone(),
        config.n,
        config.steps,
        config.bandwidth_for(d)?,
        config.master_seed,
        0,
    )?;
    picard_solve_with_clouds(clouds, Some(model), rho0, rho_t, config)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub start_sup: f64,
    pub start_mean: f64,
    pub end_sup: f64,
    pub end_mean: f64,
}

/// Monte Carlo residuals of the Schrödinger system at the lattice nodes:
/// `|nu_0(x) E[nu_T(X_T^x)] - rho_0(x)| / rho_0(x)` on `S_0` and
/// `|nu_T(z) E[nu_0(Y_T^z) 𝒴_T^z] - rho_T(z)| / rho_T(z)` on `S_T`, with each
/// potential extended by zero outside its support.
#[allow(clippy::too_many_arguments)]
pub fn marginal_residuals(
    model: &dyn Diffusion,
    nu_0: &LatticeFunction,
    nu_t: &LatticeFunction,
    rho0: &dyn Density,
    rho_t: &dyn Density,
    n_mc: usize,
    steps: usize,
    master_seed: u64,
) -> Result<ResidualReport> {
    ensure!(
        n_mc >= 1,
        InvalidArgument,
        "residuals need at least one path per node"
    );
    let grid = TimeGrid::uniform(model.horizon(), steps)?;
    let rmodel = derive_reverse_model(model);
    let last = grid.steps();
    let extend = |f: &LatticeFunction, x: &[f64]| {
        if f.region().contains(x) {
            f.eval(x)
        } else {
            0.0
        }
    };

    let stream = SeedStream::new(master_seed, StreamDomain::Residual);
    let start_nodes = nu_0.lattice().nodes();
    let d = model.dim();
    let start_res: Vec<f64> = start_nodes
        .par_chunks(d)
        .enumerate()
        .map(|(k, x)| -> Result<f64> {
            let mut rng = stream.rng(k as u64);
            let mut acc = 0.0;
            for _ in 0..n_mc {
                run_forward(model, x, &grid, &mut rng, |j, y| {
                    if j == last {
                        acc += extend(nu_t, y);
                    }
                })?;
            }
            let r = rho0.eval(x);
            Ok((nu_0.values()[k] * acc / n_mc as f64 - r).abs() / r)
        })
        .collect::<Result<_>>()?;

    let stream = stream.with_epoch(1);
    let end_nodes = nu_t.lattice().nodes();
    let end_res: Vec<f64> = end_nodes
        .par_chunks(d)
        .enumerate()
        .map(|(k, z)| -> Result<f64> {
            let mut rng = stream.rng(k as u64);
            let mut acc = 0.0;
            for _ in 0..n_mc {
                run_reverse(&rmodel, z, &grid, &mut rng, |j, y, w| {
                    if j == last {
                        acc += extend(nu_0, y) * w;
                    }
                })?;
            }
            let r = rho_t.eval(z);
            Ok((nu_t.values()[k] * acc / n_mc as f64 - r).abs() / r)
        })
        .collect::<Result<_>>()?;

    let summary = |v: &[f64]| {
        (
            v.iter().copied().fold(0.0, f64::max),
            v.iter().sum::<f64>() / v.len() as f64,
        )
    };
    let (start_sup, start_mean) = summary(&start_res);
    let (end_sup, end_mean) = summary(&end_res);
    Ok(ResidualReport {
        start_sup,
        start_mean,
        end_sup,
        end_mean,
    })
}
