//! Euler–Maruyama simulation of the reference diffusion and of its reverse
//! process `(Y, 𝒴)`.
//!
//! For `dX = a dt + sigma dW` with `b = sigma sigma^T`, the reverse process on
//! `[0, T]` is
//!
//! ```text
//! dY = alpha(s, Y) ds + sigma(T - s, Y) dW',   𝒴_s = exp(int_0^s c(u, Y_u) du)
//! alpha^i(s, y) = sum_j d_j b^{ij}(T - s, y) - a^i(T - s, y)
//! c(s, y)       = 1/2 sum_{ij} d_i d_j b^{ij}(T - s, y) - sum_i d_i a^i(T - s, y)
//! ```
//!
//! and `E[g(Y_T^y) 𝒴_T^y] = int q(0, x; T, y) g(x) dx`. The weight integral is
//! discretized with the trapezoidal rule along the Euler path.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::density::Density;
use crate::error::{ensure, Error, Result};
use crate::model::{diffusivity, Diffusion};
use crate::rng::{SeedStream, StreamRng};

/// Default number of Euler steps over `[0, T]`.
pub const DEFAULT_STEPS: usize = 64;

/// Relative finite-difference step: `h = FD_STEP * (1 + |x_j|)`.
pub const FD_STEP: f64 = 1e-5;

/// Strictly increasing simulation times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        ensure!(
            times.len() >= 2,
            InvalidArgument,
            "time grid needs at least two nodes"
        );
        ensure!(
            times.windows(2).all(|w| w[0] < w[1]) && times.iter().all(|t| t.is_finite()),
            InvalidArgument,
            "time grid must be finite and strictly increasing"
        );
        Ok(Self(times))
    }

    /// `steps` equal intervals on `[0, t_end]`.
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        ensure!(steps >= 1, InvalidArgument, "need at least one step");
        ensure!(
            t_end > 0.0,
            InvalidArgument,
            "end time must be positive, got {t_end}"
        );
        let h = t_end / steps as f64;
        let mut times: Vec<f64> = (0..steps).map(|k| k as f64 * h).collect();
        times.push(t_end);
        Ok(Self(times))
    }

    /// Uniform grid with mesh `t_end / steps` on `[0, t_end]`, refined so that
    /// every knot in `(0, t_end]` is a node. Returns the grid and the node index
    /// of each knot.
    pub fn with_knots(t_end: f64, steps: usize, knots: &[f64]) -> Result<(Self, Vec<usize>)> {
        let base = Self::uniform(t_end, steps)?;
        let tol = 1e-12 * t_end;
        let mut times = base.0;
        for &k in knots {
            ensure!(
                k > 0.0 && k <= t_end + tol,
                InvalidArgument,
                "knot {k} outside (0, {t_end}]"
            );
            if !times.iter().any(|t| (t - k).abs() <= tol) {
                times.push(k);
            }
        }
        times.sort_by(f64::total_cmp);
        let index = knots
            .iter()
            .map(|&k| {
                times
                    .iter()
                    .position(|t| (t - k).abs() <= tol)
                    .expect("knot inserted above")
            })
            .collect();
        Ok((Self::new(times)?, index))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.len() - 1
    }

    pub fn end(&self) -> f64 {
        *self.0.last().expect("non-empty grid")
    }
}

/// A simulated trajectory; reverse paths also carry the weight process.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: TimeGrid,
    pub dim: usize,
    /// `(steps + 1) x dim`, row-major.
    pub states: Vec<f64>,
    /// `𝒴` at every node, starting at 1 (reverse paths only).
    pub weights: Option<Vec<f64>>,
}

impl Path {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.steps())
    }

    pub fn terminal_weight(&self) -> Option<f64> {
        self.weights.as_ref().map(|w| w[w.len() - 1])
    }
}

/// Coefficients `(alpha, sigma~, c)` of the reverse process of a diffusion.
pub struct ReverseModel<'m> {
    model: &'m dyn Diffusion,
}

impl std::fmt::Debug for ReverseModel<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReverseModel")
            .field("dim", &self.model.dim())
            .field("horizon", &self.model.horizon())
            .finish()
    }
}

/// Builds the reverse coefficients; missing analytic derivatives are replaced
/// by central differences with step [`FD_STEP`]`(1 + |x_j|)`.
pub fn derive_reverse_model(model: &dyn Diffusion) -> ReverseModel<'_> {
    ReverseModel { model }
}

impl<'m> ReverseModel<'m> {
    pub fn model(&self) -> &'m dyn Diffusion {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }

    pub fn horizon(&self) -> f64 {
        self.model.horizon()
    }

    fn b_entry(&self, t: f64, y: &[f64], i: usize, j: usize, sigma: &mut [f64]) -> f64 {
        let m = self.noise_dim();
        self.model.diffusion(t, y, sigma);
        (0..m).map(|k| sigma[i * m + k] * sigma[j * m + k]).sum()
    }

    /// `sum_j d_j b^{ij}(t, y)`, analytic if available.
    fn b_divergence(&self, t: f64, y: &[f64], out: &mut [f64]) {
        if self.model.diffusivity_divergence(t, y, out) {
            return;
        }
        let d = self.dim();
        let mut sigma = vec![0.0; d * self.noise_dim()];
        let mut p = y.to_vec();
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..d {
            let h = FD_STEP * (1.0 + y[j].abs());
            for (i, o) in out.iter_mut().enumerate() {
                p[j] = y[j] + h;
                let up = self.b_entry(t, &p, i, j, &mut sigma);
                p[j] = y[j] - h;
                let dn = self.b_entry(t, &p, i, j, &mut sigma);
                *o += (up - dn) / (2.0 * h);
            }
            p[j] = y[j];
        }
    }

    /// `sum_{ij} d_i d_j b^{ij}(t, y)`.
    fn b_second_divergence(&self, t: f64, y: &[f64]) -> f64 {
        if let Some(v) = self.model.diffusivity_second_divergence(t, y) {
            return v;
        }
        let d = self.dim();
        let mut sigma = vec![0.0; d * self.noise_dim()];
        let mut p = y.to_vec();
        let mut acc = 0.0;
        for i in 0..d {
            let hi = FD_STEP * (1.0 + y[i].abs());
            for j in 0..d {
                if i == j {
                    let c = self.b_entry(t, y, i, i, &mut sigma);
                    p[i] = y[i] + hi;
                    let up = self.b_entry(t, &p, i, i, &mut sigma);
                    p[i] = y[i] - hi;
                    let dn = self.b_entry(t, &p, i, i, &mut sigma);
                    p[i] = y[i];
                    acc += (up - 2.0 * c + dn) / (hi * hi);
                } else {
                    let hj = FD_STEP * (1.0 + y[j].abs());
                    let mut corner = |si: f64, sj: f64| {
                        p[i] = y[i] + si * hi;
                        p[j] = y[j] + sj * hj;
                        let v = self.b_entry(t, &p, i, j, &mut sigma);
                        p[i] = y[i];
                        p[j] = y[j];
                        v
                    };
                    let v = corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                        + corner(-1.0, -1.0);
                    acc += v / (4.0 * hi * hj);
                }
            }
        }
        acc
    }

    fn a_divergence(&self, t: f64, y: &[f64]) -> f64 {
        if let Some(v) = self.model.drift_divergence(t, y) {
            return v;
        }
        let d = self.dim();
        let mut a = vec![0.0; d];
        let mut p = y.to_vec();
        let mut acc = 0.0;
        for i in 0..d {
            let h = FD_STEP * (1.0 + y[i].abs());
            p[i] = y[i] + h;
            self.model.drift(t, &p, &mut a);
            let up = a[i];
            p[i] = y[i] - h;
            self.model.drift(t, &p, &mut a);
            let dn = a[i];
            p[i] = y[i];
            acc += (up - dn) / (2.0 * h);
        }
        acc
    }

    /// Reverse drift `alpha(s, y)`.
    pub fn alpha(&self, s: f64, y: &[f64], out: &mut [f64]) {
        let t = self.horizon() - s;
        let mut a = vec![0.0; self.dim()];
        self.model.drift(t, y, &mut a);
        self.b_divergence(t, y, out);
        out.iter_mut().zip(&a).for_each(|(o, ai)| *o -= ai);
    }

    /// Reverse diffusion `sigma(T - s, y)`.
    pub fn sigma(&self, s: f64, y: &[f64], out: &mut [f64]) {
        self.model.diffusion(self.horizon() - s, y, out);
    }

    /// Weight rate `c(s, y)`.
    pub fn potential(&self, s: f64, y: &[f64]) -> f64 {
        let t = self.horizon() - s;
        0.5 * self.b_second_divergence(t, y) - self.a_divergence(t, y)
    }
}

/// Reusable scratch buffers for one Euler path.
struct Scratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    noise: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, m: usize) -> Self {
        Self {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * m],
            noise: vec![0.0; m],
        }
    }
}

fn check_start(x0: &[f64], d: usize) -> Result<()> {
    ensure!(
        x0.len() == d,
        InvalidArgument,
        "start point has {} coordinates, model has {d}",
        x0.len()
    );
    ensure!(
        x0.iter().all(|v| v.is_finite()),
        InvalidArgument,
        "start point must be finite"
    );
    Ok(())
}

/// One Euler step `x += drift h + sigma sqrt(h) Z`.
fn euler_step(x: &mut [f64], h: f64, s: &mut Scratch, rng: &mut StreamRng) {
    let m = s.noise.len();
    let sq = h.sqrt();
    for z in s.noise.iter_mut() {
        *z = StandardNormal.sample(rng);
    }
    for (i, xi) in x.iter_mut().enumerate() {
        let diff: f64 = (0..m).map(|k| s.sigma[i * m + k] * s.noise[k]).sum();
        *xi += s.drift[i] * h + diff * sq;
    }
}

/// Runs the forward Euler scheme on `grid`, calling `visit(k, x_k)` at every
/// node.
pub fn run_forward(
    model: &dyn Diffusion,
    x0: &[f64],
    grid: &TimeGrid,
    rng: &mut StreamRng,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let (d, m) = (model.dim(), model.noise_dim());
    check_start(x0, d)?;
    let mut s = Scratch::new(d, m);
    let mut x = x0.to_vec();
    visit(0, &x);
    for (k, w) in grid.times().windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        model.drift(t, &x, &mut s.drift);
        model.diffusion(t, &x, &mut s.sigma);
        euler_step(&mut x, h, &mut s, rng);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Explosion { step: k + 1 });
        }
        visit(k + 1, &x);
    }
    Ok(())
}

/// Runs the reverse scheme on `grid` (reverse time `s`), calling
/// `visit(k, y_k, 𝒴_k)` at every node.
pub fn run_reverse(
    rmodel: &ReverseModel<'_>,
    y0: &[f64],
    grid: &TimeGrid,
    rng: &mut StreamRng,
    mut visit: impl FnMut(usize, &[f64], f64),
) -> Result<()> {
    let (d, m) = (rmodel.dim(), rmodel.noise_dim());
    check_start(y0, d)?;
    let mut s = Scratch::new(d, m);
    let mut y = y0.to_vec();
    let times = grid.times();
    let mut c_prev = rmodel.potential(times[0], &y);
    let mut log_w = 0.0;
    visit(0, &y, 1.0);
    for (k, w) in times.windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        rmodel.alpha(t, &y, &mut s.drift);
        rmodel.sigma(t, &y, &mut s.sigma);
        euler_step(&mut y, h, &mut s, rng);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Explosion { step: k + 1 });
        }
        let c_next = rmodel.potential(w[1], &y);
        log_w += 0.5 * h * (c_prev + c_next);
        c_prev = c_next;
        let weight = log_w.exp();
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::WeightOverflow { step: k + 1 });
        }
        visit(k + 1, &y, weight);
    }
    Ok(())
}

/// Euler–Maruyama path of the reference diffusion with mesh `T / steps`.
pub fn simulate_forward(
    model: &dyn Diffusion,
    x0: &[f64],
    steps: usize,
    rng: &mut StreamRng,
) -> Result<Path> {
    let grid = TimeGrid::uniform(model.horizon(), steps)?;
    let d = model.dim();
    let mut states = Vec::with_capacity((steps + 1) * d);
    run_forward(model, x0, &grid, rng, |_, x| states.extend_from_slice(x))?;
    Ok(Path {
        grid,
        dim: d,
        states,
        weights: None,
    })
}

/// Reverse path `(Y, 𝒴)` on `[0, T]` with mesh `T / steps`.
pub fn simulate_reverse(
    rmodel: &ReverseModel<'_>,
    y0: &[f64],
    steps: usize,
    rng: &mut StreamRng,
) -> Result<Path> {
    let grid = TimeGrid::uniform(rmodel.horizon(), steps)?;
    let d = rmodel.dim();
    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut weights = Vec::with_capacity(steps + 1);
    run_reverse(rmodel, y0, &grid, rng, |_, y, w| {
        states.extend_from_slice(y);
        weights.push(w);
    })?;
    Ok(Path {
        grid,
        dim: d,
        states,
        weights: Some(weights),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Start points with simulated endpoints (and weights for reverse clouds).
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    pub dim: usize,
    /// `len x dim`.
    pub starts: Vec<f64>,
    /// `len x dim`.
    pub ends: Vec<f64>,
    /// Terminal weights `𝒴_T`, reverse clouds only.
    pub weights: Option<Vec<f64>>,
}

impl Cloud {
    pub fn len(&self) -> usize {
        self.starts.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn start(&self, i: usize) -> &[f64] {
        &self.starts[i * self.dim..(i + 1) * self.dim]
    }

    pub fn end(&self, i: usize) -> &[f64] {
        &self.ends[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }
}

/// Draws `n` start points from `sampler` and simulates their endpoints at `T`.
///
/// Item `i` uses generator `streams.rng(i)` for both its start point and its
/// driving noise, so the cloud does not depend on the thread count.
pub fn sample_cloud(
    model: &dyn Diffusion,
    sampler: &dyn Density,
    n: usize,
    steps: usize,
    direction: Direction,
    streams: SeedStream,
) -> Result<Cloud> {
    let d = model.dim();
    ensure!(
        sampler.dim() == d,
        InvalidArgument,
        "sampler dimension {} differs from model dimension {d}",
        sampler.dim()
    );
    let grid = TimeGrid::uniform(model.horizon(), steps)?;
    let rmodel = derive_reverse_model(model);
    let items: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.rng(i as u64);
            let mut start = vec![0.0; d];
            sampler
                .sample_into(&mut rng, &mut start)
                .map_err(|e| e.at_index(i))?;
            let mut end = vec![0.0; d];
            let mut weight = 1.0;
            let last = grid.steps();
            match direction {
                Direction::Forward => run_forward(model, &start, &grid, &mut rng, |k, x| {
                    if k == last {
                        end.copy_from_slice(x);
                    }
                }),
                Direction::Reverse => run_reverse(&rmodel, &start, &grid, &mut rng, |k, y, w| {
                    if k == last {
                        end.copy_from_slice(y);
                        weight = w;
                    }
                }),
            }
            .map_err(|e| e.at_index(i))?;
            Ok((start, end, weight))
        })
        .collect::<Result<_>>()?;

    let mut starts = Vec::with_capacity(n * d);
    let mut ends = Vec::with_capacity(n * d);
    let mut weights = Vec::with_capacity(n);
    for (s, e, w) in items {
        starts.extend(s);
        ends.extend(e);
        weights.push(w);
    }
    Ok(Cloud {
        dim: d,
        starts,
        ends,
        weights: (direction == Direction::Reverse).then_some(weights),
    })
}

/// `b = sigma sigma^T` at `(t, x)`.
pub fn diffusivity_at(model: &dyn Diffusion, t: f64, x: &[f64]) -> Vec<f64> {
    let (d, m) = (model.dim(), model.noise_dim());
    let mut sigma = vec![0.0; d * m];
    model.diffusion(t, x, &mut sigma);
    let mut b = vec![0.0; d * d];
    diffusivity(&sigma, d, m, &mut b);
    b
}

/// Sample mean and standard error of `g(Y_T^y) 𝒴_T^y` over `n` reverse paths
/// from `y`, an estimate of `int q(0, x; T, y) g(x) dx`.
pub fn reverse_expectation(
    model: &dyn Diffusion,
    y: &[f64],
    g: impl Fn(&[f64]) -> f64 + Sync,
    n: usize,
    steps: usize,
    streams: SeedStream,
) -> Result<(f64, f64)> {
    ensure!(n >= 2, InvalidArgument, "need at least two paths, got {n}");
    let grid = TimeGrid::uniform(model.horizon(), steps)?;
    let rmodel = derive_reverse_model(model);
    let last = grid.steps();
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.rng(i as u64);
            let mut v = 0.0;
            run_reverse(&rmodel, y, &grid, &mut rng, |k, y, w| {
                if k == last {
                    v = g(y) * w;
                }
            })
            .map_err(|e| e.at_index(i))?;
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok((mean, (var / nf).sqrt()))
}
