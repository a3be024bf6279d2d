//! Kernel regression estimates of the integral operators
//!
//! ```text
//! E_T[f](x) = int_{S_T} q(0, x; T, z) rho_T(z) f(z) dz = E[rho_T(X_T^x) f(X_T^x)]
//! E_0[f](z) = int_{S_0} rho_0(x) f(x) q(0, x; T, z) dx = E[rho_0(Y_T^z) f(Y_T^z) 𝒴_T^z]
//! ```
//!
//! from one forward cloud `(x^i, X_T^{x^i})`, `x^i ~ phi_0`, and one reverse
//! cloud `(z^i, Y_T^{z^i}, 𝒴_T^{z^i})`, `z^i ~ phi_T`. With
//! `S_N[g](x) = N^{-1} sum_i K((x - x^i) / delta) g(X_T^{x^i})` the estimate is
//! either self-normalized, `Q_T(x) S_N[rho_T f](x) / S_N[1_{S_T}](x)`, or direct,
//! `S_N[rho_T f](x) / (delta^d phi_0(x))`. An empty kernel window falls back to
//! `Q_min rho_min f_min`.

use std::collections::HashMap;
use std::ops::Range;

use crate::density::{Density, UniformDensity};
use crate::error::{ensure, Result};
use crate::geometry::BoxRegion;
use crate::kernel::{Kernel, SUPPORT_RADIUS};
use crate::lattice::LatticeFunction;
use crate::model::{Diffusion, TransitionDensity};
use crate::rng::{SeedStream, StreamDomain};
use crate::sde::{sample_cloud, Cloud, Direction};

/// `delta_N = N^{-2 / (2(1 + alpha) + d)}`, kept strictly below one.
pub fn default_bandwidth(n: usize, dim: usize, alpha: f64) -> Result<f64> {
    ensure!(
        n >= 2,
        InvalidArgument,
        "bandwidth rule needs N >= 2, got {n}"
    );
    ensure!(dim >= 1, InvalidArgument, "dimension must be positive");
    ensure!(
        alpha > 0.0 && alpha <= 1.0,
        Domain,
        "smoothness alpha must lie in (0, 1], got {alpha}"
    );
    let exponent = -2.0 / (2.0 * (1.0 + alpha) + dim as f64);
    Ok((n as f64).powf(exponent).min(1.0 - f64::EPSILON))
}

/// Uniform hash grid over points, cell size equal to the bandwidth.
///
/// Since the kernel vanishes beyond `delta / 2` in the max-norm, the cells
/// adjacent to a query cell contain every point with a non-zero kernel weight.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    dim: usize,
    cell: f64,
    cells: HashMap<Box<[i64]>, Range<usize>>,
    order: Vec<usize>,
}

impl SpatialGrid {
    pub fn build(points: &[f64], dim: usize, cell: f64) -> Self {
        let n = points.len() / dim;
        let key = |i: usize| -> Box<[i64]> {
            points[i * dim..(i + 1) * dim]
                .iter()
                .map(|v| (v / cell).floor() as i64)
                .collect()
        };
        let mut keyed: Vec<(Box<[i64]>, usize)> = (0..n).map(|i| (key(i), i)).collect();
        keyed.sort();
        let mut cells = HashMap::new();
        let mut order = Vec::with_capacity(n);
        let mut start = 0;
        for (pos, (k, i)) in keyed.iter().enumerate() {
            order.push(*i);
            let last = pos + 1 == keyed.len() || keyed[pos + 1].0 != *k;
            if last {
                cells.insert(k.clone(), start..pos + 1);
                start = pos + 1;
            }
        }
        Self {
            dim,
            cell,
            cells,
            order,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Indices stored in the cell with integer coordinates `key`.
    pub fn cell_members(&self, key: &[i64]) -> &[usize] {
        self.cells
            .get(key)
            .map_or(&[][..], |r| &self.order[r.clone()])
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Visits every stored index in the `3^d` cells around `x`, in a fixed
    /// order (lexicographic cells, ascending indices within a cell).
    pub fn for_each_candidate(&self, x: &[f64], mut visit: impl FnMut(usize)) {
        let d = self.dim;
        let center: Vec<i64> = x.iter().map(|v| (v / self.cell).floor() as i64).collect();
        let mut key = center.clone();
        let total = 3usize.pow(d as u32);
        for code in 0..total {
            let mut c = code;
            for axis in (0..d).rev() {
                key[axis] = center[axis] + (c % 3) as i64 - 1;
                c /= 3;
            }
            for &i in self.cell_members(&key) {
                visit(i);
            }
        }
    }
}

/// Positive bounds on the transition density, the box masses and the marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub mass_min: f64,
    pub mass_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl BoundsConfig {
    pub fn new(
        q_min: f64,
        q_max: f64,
        mass_min: f64,
        mass_max: f64,
        rho_min: f64,
        rho_max: f64,
    ) -> Result<Self> {
        let b = Self {
            q_min,
            q_max,
            mass_min,
            mass_max,
            rho_min,
            rho_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lo, hi) in [
            ("q", self.q_min, self.q_max),
            ("Q", self.mass_min, self.mass_max),
            ("rho", self.rho_min, self.rho_max),
        ] {
            ensure!(
                lo > 0.0 && lo <= hi && hi.is_finite(),
                InvalidArgument,
                "{name} bounds must satisfy 0 < min <= max < inf, got [{lo}, {hi}]"
            );
        }
        Ok(())
    }

    /// `q_min / Q_max`.
    pub fn g_star_min(&self) -> f64 {
        self.q_min / self.mass_max
    }

    /// `q_max / Q_min`.
    pub fn g_star_max(&self) -> f64 {
        self.q_max / self.mass_min
    }

    /// `tanh^2(log(q_max / q_min) / 2)`, the Birkhoff ceiling for the composed
    /// fixed-point map.
    pub fn contraction_ceiling(&self) -> f64 {
        (0.5 * (self.q_max / self.q_min).ln()).tanh().powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimatorMode {
    /// `Q_T S_N[rho_T f] / S_N[1_{S_T}]`; uses the plug-in mass when no exact
    /// transition density is attached, which coincides with `Direct`.
    #[default]
    SelfNormalized,
    /// `S_N[rho_T f] / (delta^d phi_0)`.
    Direct,
}

/// Forward and reverse clouds with their bandwidth, hash grids and proposal
/// densities.
#[derive(Debug, Clone)]
pub struct SampleClouds {
    forward: Cloud,
    reverse: Cloud,
    bandwidth: f64,
    forward_grid: SpatialGrid,
    reverse_grid: SpatialGrid,
    start_support: BoxRegion,
    end_support: BoxRegion,
    forward_proposal: UniformDensity,
    reverse_proposal: UniformDensity,
}

/// Proposal box: the support widened by `max(5% of width, delta / 2)` per side.
pub fn proposal_region(support: &BoxRegion, bandwidth: f64) -> BoxRegion {
    support.inflate_by(|k| (0.05 * support.width(k)).max(SUPPORT_RADIUS * bandwidth))
}

impl SampleClouds {
    /// Assembles clouds simulated elsewhere.
    pub fn from_clouds(
        forward: Cloud,
        reverse: Cloud,
        bandwidth: f64,
        start_support: BoxRegion,
        end_support: BoxRegion,
    ) -> Result<Self> {
        ensure!(
            bandwidth > 0.0 && bandwidth < 1.0,
            InvalidArgument,
            "bandwidth must lie in (0, 1), got {bandwidth}"
        );
        let d = start_support.dim();
        ensure!(
            forward.dim == d && reverse.dim == d && end_support.dim() == d,
            InvalidArgument,
            "cloud and support dimensions disagree"
        );
        ensure!(
            reverse
                .weights
                .as_ref()
                .is_some_and(|w| w.iter().all(|&v| v > 0.0)),
            Domain,
            "reverse cloud needs strictly positive weights"
        );
        let forward_grid = SpatialGrid::build(&forward.starts, d, bandwidth);
        let reverse_grid = SpatialGrid::build(&reverse.starts, d, bandwidth);
        Ok(Self {
            forward_proposal: UniformDensity::new(proposal_region(&start_support, bandwidth)),
            reverse_proposal: UniformDensity::new(proposal_region(&end_support, bandwidth)),
            forward,
            reverse,
            bandwidth,
            forward_grid,
            reverse_grid,
            start_support,
            end_support,
        })
    }

    /// Simulates `n` forward paths from `phi_0` and `n` reverse paths from
    /// `phi_T`, both uniform on [`proposal_region`]s.
    #[allow(clippy::too_many_arguments)]
    pub fn simulate(
        model: &dyn Diffusion,
        start_support: BoxRegion,
        end_support: BoxRegion,
        n: usize,
        steps: usize,
        bandwidth: f64,
        master_seed: u64,
        epoch: u64,
    ) -> Result<Self> {
        ensure!(n >= 1, InvalidArgument, "cloud size must be positive");
        let phi0 = UniformDensity::new(proposal_region(&start_support, bandwidth));
        let phi_t = UniformDensity::new(proposal_region(&end_support, bandwidth));
        let fwd = sample_cloud(
            model,
            &phi0,
            n,
            steps,
            Direction::Forward,
            SeedStream::new(master_seed, StreamDomain::ForwardCloud).with_epoch(epoch),
        )?;
        let rev = sample_cloud(
            model,
            &phi_t,
            n,
            steps,
            Direction::Reverse,
            SeedStream::new(master_seed, StreamDomain::ReverseCloud).with_epoch(epoch),
        )?;
        Self::from_clouds(fwd, rev, bandwidth, start_support, end_support)
    }

    pub fn dim(&self) -> usize {
        self.start_support.dim()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &Cloud {
        &self.forward
    }

    pub fn reverse(&self) -> &Cloud {
        &self.reverse
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn start_support(&self) -> &BoxRegion {
        &self.start_support
    }

    pub fn end_support(&self) -> &BoxRegion {
        &self.end_support
    }

    pub fn forward_proposal(&self) -> &UniformDensity {
        &self.forward_proposal
    }

    pub fn reverse_proposal(&self) -> &UniformDensity {
        &self.reverse_proposal
    }

    pub fn grid(&self, direction: Direction) -> &SpatialGrid {
        match direction {
            Direction::Forward => &self.forward_grid,
            Direction::Reverse => &self.reverse_grid,
        }
    }

    fn cloud(&self, direction: Direction) -> &Cloud {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Reverse => &self.reverse,
        }
    }

    /// Calls `visit(i, K((x - start_i) / delta) * weight_i)` for every cloud
    /// member with non-zero kernel weight.
    pub fn for_each_neighbor(
        &self,
        kernel: &Kernel,
        x: &[f64],
        direction: Direction,
        mut visit: impl FnMut(usize, f64),
    ) {
        let cloud = self.cloud(direction);
        self.grid(direction).for_each_candidate(x, |i| {
            let k = kernel.eval_diff(x, cloud.start(i), self.bandwidth);
            if k > 0.0 {
                visit(i, k * cloud.weight(i));
            }
        });
    }
}

/// `S_N[g](x)` (forward) or `S~_N[g](x)` (reverse, weights included), summed
/// over hash-grid neighbors only.
pub fn nw_sum(
    clouds: &SampleClouds,
    kernel: &Kernel,
    g: impl Fn(&[f64]) -> f64,
    x: &[f64],
    direction: Direction,
) -> f64 {
    let cloud = clouds.cloud(direction);
    let mut acc = 0.0;
    clouds.for_each_neighbor(kernel, x, direction, |i, w| acc += w * g(cloud.end(i)));
    acc / cloud.len() as f64
}

/// The operator estimates over fixed clouds and marginals.
pub struct Estimator<'a> {
    pub clouds: &'a SampleClouds,
    pub rho0: &'a dyn Density,
    pub rho_t: &'a dyn Density,
    pub bounds: BoundsConfig,
    pub mode: EstimatorMode,
    pub kernel: Kernel,
    /// Closed-form transition density for exact `Q_T`, `Q_0`.
    pub exact: Option<&'a dyn TransitionDensity>,
}

impl std::fmt::Debug for Estimator<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Estimator")
            .field("n", &self.clouds.len())
            .field("bandwidth", &self.clouds.bandwidth())
            .field("mode", &self.mode)
            .field("exact_mass", &self.exact.is_some())
            .finish()
    }
}

/// One evaluation point of a compiled operator: weights over cloud endpoints
/// such that the estimate is `sum_k w_k f(end_k)`, or the fallback.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Row {
    Weights(Range<usize>),
    Fallback,
}

/// Sparse operator `f -> (E^N[f](p))_p` for fixed evaluation points `p`.
#[derive(Debug, Clone)]
pub struct CompiledOperator {
    direction: Direction,
    rows: Vec<Row>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    fallback_scale: f64,
}

impl CompiledOperator {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Number of evaluation points whose kernel window was empty.
    pub fn fallback_count(&self) -> usize {
        self.rows.iter().filter(|r| **r == Row::Fallback).count()
    }

    /// Applies the operator to `f` given at cloud endpoints (`f_at_end[i]` for
    /// endpoint `i`, only read where the marginal is positive) with lower bound
    /// `f_min` for the fallback.
    pub fn apply(&self, f_at_end: &[f64], f_min: f64) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| match row {
                Row::Weights(r) => self.cols[r.clone()]
                    .iter()
                    .zip(&self.weights[r.clone()])
                    .map(|(&i, &w)| w * f_at_end[i])
                    .sum(),
                Row::Fallback => self.fallback_scale * f_min,
            })
            .collect()
    }
}

impl<'a> Estimator<'a> {
    pub fn new(
        clouds: &'a SampleClouds,
        rho0: &'a dyn Density,
        rho_t: &'a dyn Density,
        bounds: BoundsConfig,
        mode: EstimatorMode,
    ) -> Result<Self> {
        bounds.validate()?;
        ensure!(
            rho0.dim() == clouds.dim() && rho_t.dim() == clouds.dim(),
            InvalidArgument,
            "marginal dimensions disagree with the clouds"
        );
        Ok(Self {
            clouds,
            rho0,
            rho_t,
            bounds,
            mode,
            kernel: Kernel::epanechnikov(clouds.dim()),
            exact: None,
        })
    }

    pub fn with_exact(mut self, exact: Option<&'a dyn TransitionDensity>) -> Self {
        self.exact = exact;
        self
    }

    /// `Q_min rho_min`, the fallback per unit of `f_min`.
    pub fn fallback_scale(&self) -> f64 {
        self.bounds.mass_min * self.bounds.rho_min
    }

    fn target_marginal(&self, direction: Direction) -> &dyn Density {
        match direction {
            Direction::Forward => self.rho_t,
            Direction::Reverse => self.rho0,
        }
    }

    /// Exact `Q_T(x)` (forward) or `Q_0(z)` (reverse) when available and the
    /// mode asks for it.
    fn exact_mass(&self, x: &[f64], direction: Direction) -> Option<f64> {
        if self.mode != EstimatorMode::SelfNormalized {
            return None;
        }
        let q = self.exact?;
        Some(match direction {
            Direction::Forward => q.mass_to_region(x, self.clouds.end_support()),
            Direction::Reverse => q.mass_from_region(x, self.clouds.start_support()),
        })
    }

    fn proposal(&self, direction: Direction) -> &UniformDensity {
        match direction {
            Direction::Forward => self.clouds.forward_proposal(),
            Direction::Reverse => self.clouds.reverse_proposal(),
        }
    }

    /// Compiles the estimator at `points` (`len x d`).
    pub fn compile(&self, points: &[f64], direction: Direction) -> CompiledOperator {
        let d = self.clouds.dim();
        let cloud = self.clouds.cloud(direction);
        let target = self.target_marginal(direction);
        let n = cloud.len() as f64;
        let norm_direct = self.clouds.bandwidth().powi(d as i32);
        let mut rows = Vec::with_capacity(points.len() / d);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut local: Vec<(usize, f64)> = Vec::new();
        for p in points.chunks(d) {
            local.clear();
            let mut den = 0.0;
            self.clouds
                .for_each_neighbor(&self.kernel, p, direction, |i, w| {
                    let r = target.eval(cloud.end(i));
                    if r > 0.0 {
                        den += w;
                        local.push((i, w * r));
                    }
                });
            if den == 0.0 {
                rows.push(Row::Fallback);
                continue;
            }
            let scale = match self.exact_mass(p, direction) {
                Some(mass) => mass / den,
                None => 1.0 / (n * norm_direct * self.proposal(direction).eval(p)),
            };
            let start = cols.len();
            for &(i, w) in &local {
                cols.push(i);
                weights.push(w * scale);
            }
            rows.push(Row::Weights(start..cols.len()));
        }
        CompiledOperator {
            direction,
            rows,
            cols,
            weights,
            fallback_scale: self.fallback_scale(),
        }
    }

    fn apply_at(&self, f: &LatticeFunction, x: &[f64], direction: Direction) -> Result<f64> {
        ensure!(
            x.len() == self.clouds.dim(),
            InvalidArgument,
            "evaluation point has {} coordinates, expected {}",
            x.len(),
            self.clouds.dim()
        );
        let op = self.compile(x, direction);
        let cloud = self.clouds.cloud(direction);
        let target = self.target_marginal(direction);
        let f_at_end: Vec<f64> = (0..cloud.len())
            .map(|i| {
                let e = cloud.end(i);
                if target.eval(e) > 0.0 {
                    f.eval(e)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(op.apply(&f_at_end, f.min())[0])
    }

    /// `E_T^N[f](x)` for `f` on a lattice over `S_T`.
    pub fn apply_forward_operator(&self, f: &LatticeFunction, x: &[f64]) -> Result<f64> {
        self.apply_at(f, x, Direction::Forward)
    }

    /// `E_0^N[f](z)` for `f` on a lattice over `S_0`.
    pub fn apply_reverse_operator(&self, f: &LatticeFunction, z: &[f64]) -> Result<f64> {
        self.apply_at(f, z, Direction::Reverse)
    }
}
