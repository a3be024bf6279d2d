//! Forward-reverse estimators for bridge functionals and for the finite
//! dimensional distributions of Schrödinger processes.
//!
//! Forward paths of `X` are run from the start points up to the meeting time
//! `t*`; reverse paths `(Y, 𝒴)` are run from the end points over `T - t*`.
//! A pair contributes `g(...) K_eps(Y_{T-t*} - X_{t*}) 𝒴_{T-t*}`, so only
//! pairs whose meeting states lie within the mollifier support count.

use rayon::prelude::*;

use crate::density::{Density, PotentialSampler};
use crate::error::{ensure, Error, Result};
use crate::kernel::Kernel;
use crate::lattice::LatticeFunction;
use crate::model::Diffusion;
use crate::regression::SpatialGrid;
use crate::rng::{SeedStream, StreamDomain, StreamRng};
use crate::sde::{derive_reverse_model, run_forward, run_reverse, Path, TimeGrid};

/// Observation times split at the meeting time `t*`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    forward: Vec<f64>,
    reverse: Vec<f64>,
}

impl TimePartition {
    /// `forward = [0, s_1, .., s_K = t*]`, `reverse = [t*, t_1, .., t_L = T]`.
    pub fn new(forward: Vec<f64>, reverse: Vec<f64>) -> Result<Self> {
        ensure!(
            forward.len() >= 2 && reverse.len() >= 2,
            InvalidArgument,
            "both sides of the partition need a start and an end"
        );
        ensure!(
            forward[0] == 0.0,
            InvalidArgument,
            "forward times must start at 0"
        );
        let increasing =
            |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|t| t.is_finite());
        ensure!(
            increasing(&forward) && increasing(&reverse),
            InvalidArgument,
            "partition times must be strictly increasing"
        );
        ensure!(
            forward.last() == reverse.first(),
            InvalidArgument,
            "forward side must end where the reverse side starts"
        );
        Ok(Self { forward, reverse })
    }

    /// Observations at `times` (in `(0, T)`, excluding `t*`) with meeting time
    /// `t_star`.
    pub fn with_observations(horizon: f64, t_star: f64, times: &[f64]) -> Result<Self> {
        ensure!(
            t_star > 0.0 && t_star < horizon,
            InvalidArgument,
            "meeting time {t_star} outside (0, {horizon})"
        );
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        ensure!(
            sorted
                .iter()
                .all(|&t| t > 0.0 && t < horizon && t != t_star),
            InvalidArgument,
            "observation times must lie in (0, T) and differ from t*"
        );
        let mut forward = vec![0.0];
        forward.extend(sorted.iter().copied().filter(|&t| t < t_star));
        forward.push(t_star);
        let mut reverse = vec![t_star];
        reverse.extend(sorted.iter().copied().filter(|&t| t > t_star));
        reverse.push(horizon);
        Self::new(forward, reverse)
    }

    /// Meeting at `T / 2` with no other observations.
    pub fn midpoint(horizon: f64) -> Result<Self> {
        Self::with_observations(horizon, 0.5 * horizon, &[])
    }

    pub fn t_star(&self) -> f64 {
        *self.forward.last().expect("validated")
    }

    pub fn horizon(&self) -> f64 {
        *self.reverse.last().expect("validated")
    }

    pub fn forward_times(&self) -> &[f64] {
        &self.forward
    }

    pub fn reverse_times(&self) -> &[f64] {
        &self.reverse
    }

    /// Reversed clock `t^_i = T - t_{L-i}`, `i = 0..=L`.
    pub fn reversed_clock(&self) -> Vec<f64> {
        let t = self.horizon();
        self.reverse.iter().rev().map(|s| t - s).collect()
    }

    /// All times seen by a functional: `0, s_1, .., t*, t_1, .., t_{L-1}, T`.
    pub fn times(&self) -> Vec<f64> {
        let mut v = self.forward.clone();
        v.extend_from_slice(&self.reverse[1..]);
        v
    }

    fn forward_knots(&self) -> &[f64] {
        &self.forward[1..]
    }

    /// Reverse-clock knots for original times `t_{L-1}, .., t_1` and then `t*`.
    fn reverse_knots(&self) -> Vec<f64> {
        let t = self.horizon();
        let l = self.reverse.len() - 1;
        (1..=l).map(|i| t - self.reverse[l - i]).collect()
    }
}

/// States of one (glued) bridge at the partition times.
#[derive(Debug, Clone, Copy)]
pub struct BridgeStates<'a> {
    pub dim: usize,
    pub times: &'a [f64],
    pub values: &'a [f64],
}

impl BridgeStates<'_> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.state(0)
    }

    pub fn end(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// State at the partition time closest to `t`.
    pub fn at_time(&self, t: f64) -> &[f64] {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .expect("non-empty partition");
        self.state(k)
    }
}

/// Test functional over the states at all partition times.
pub trait PathFunctional: Send + Sync {
    fn eval(&self, states: &BridgeStates<'_>) -> f64;
}

impl<F> PathFunctional for F
where
    F: Fn(&BridgeStates<'_>) -> f64 + Send + Sync,
{
    fn eval(&self, states: &BridgeStates<'_>) -> f64 {
        self(states)
    }
}

/// `g = 1`.
pub fn unit_functional(_: &BridgeStates<'_>) -> f64 {
    1.0
}

/// Estimate with a jackknife standard error; `se_available` is false when the
/// sample is too small for the jackknife.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub se_available: bool,
}

/// `d <= 4`: `N^{-max(1/4, min(1/d, 1/3))}`; `d > 4`: `N^{-2/(4+d)}`.
pub fn fr_bandwidth_rule(dim: usize, n: usize) -> Result<f64> {
    ensure!(
        n >= 2,
        InvalidArgument,
        "bandwidth rule needs N >= 2, got {n}"
    );
    ensure!(dim >= 1, InvalidArgument, "dimension must be positive");
    let d = dim as f64;
    let exponent = if dim <= 4 {
        (1.0 / d).clamp(0.25, 1.0 / 3.0)
    } else {
        2.0 / (4.0 + d)
    };
    Ok((n as f64).powf(-exponent))
}

/// Forward pieces: states at `s_1..s_K` (`s_K = t*`).
struct ForwardPiece {
    start: Vec<f64>,
    knots: Vec<f64>,
}

/// Reverse pieces: states at original times `t_1..t_{L-1}`, the meeting state
/// and its weight.
struct ReversePiece {
    end: Vec<f64>,
    interior: Vec<f64>,
    meeting: Vec<f64>,
    weight: f64,
}

fn simulate_forward_pieces(
    model: &dyn Diffusion,
    starts: &[Vec<f64>],
    partition: &TimePartition,
    steps: usize,
    streams: SeedStream,
) -> Result<Vec<ForwardPiece>> {
    let d = model.dim();
    let t_star = partition.t_star();
    let per_unit = steps as f64 / model.horizon();
    let n_steps = ((t_star * per_unit).ceil() as usize).max(1);
    let (grid, knot_index) = TimeGrid::with_knots(t_star, n_steps, partition.forward_knots())?;
    starts
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = streams.rng(i as u64);
            let mut knots = vec![0.0; knot_index.len() * d];
            run_forward(model, x, &grid, &mut rng, |k, y| {
                for (j, &idx) in knot_index.iter().enumerate() {
                    if idx == k {
                        knots[j * d..(j + 1) * d].copy_from_slice(y);
                    }
                }
            })
            .map_err(|e| e.at_index(i))?;
            Ok(ForwardPiece {
                start: x.clone(),
                knots,
            })
        })
        .collect()
}

fn simulate_reverse_pieces(
    model: &dyn Diffusion,
    ends: &[Vec<f64>],
    partition: &TimePartition,
    steps: usize,
    streams: SeedStream,
) -> Result<Vec<ReversePiece>> {
    let d = model.dim();
    let span = partition.horizon() - partition.t_star();
    let per_unit = steps as f64 / model.horizon();
    let n_steps = ((span * per_unit).ceil() as usize).max(1);
    let knots = partition.reverse_knots();
    let (grid, knot_index) = TimeGrid::with_knots(span, n_steps, &knots)?;
    let rmodel = derive_reverse_model(model);
    let interior_count = knots.len() - 1;
    ends.par_iter()
        .enumerate()
        .map(|(i, z)| {
            let mut rng = streams.rng(i as u64);
            // knot j (reverse clock order) is original time t_{L-1-j}
            let mut interior = vec![0.0; interior_count * d];
            let mut meeting = vec![0.0; d];
            let mut weight = 1.0;
            run_reverse(&rmodel, z, &grid, &mut rng, |k, y, w| {
                for (j, &idx) in knot_index.iter().enumerate() {
                    if idx != k {
                        continue;
                    }
                    if j == interior_count {
                        meeting.copy_from_slice(y);
                        weight = w;
                    } else {
                        let slot = interior_count - 1 - j;
                        interior[slot * d..(slot + 1) * d].copy_from_slice(y);
                    }
                }
            })
            .map_err(|e| e.at_index(i))?;
            Ok(ReversePiece {
                end: z.clone(),
                interior,
                meeting,
                weight,
            })
        })
        .collect()
}

/// Row sums `A_n`, column sums `B_m` and the diagonal of the pair matrix.
struct PairSums {
    total: f64,
    rows: Vec<f64>,
    cols: Vec<f64>,
    diag: Vec<f64>,
}

/// Accumulates `g K_eps(meeting_m - X_{t*}^n) 𝒴_m` over all pairs, each
/// column in increasing forward index.
fn pair_sums(
    dim: usize,
    times: &[f64],
    fwd: &[ForwardPiece],
    rev: &[ReversePiece],
    functionals: &[&dyn PathFunctional],
    kernel: &Kernel,
    eps: f64,
) -> Vec<PairSums> {
    let k_fwd = fwd.first().map_or(0, |p| p.knots.len() / dim);
    let meeting_points: Vec<f64> = fwd
        .iter()
        .flat_map(|p| p.knots[(k_fwd - 1) * dim..].iter().copied())
        .collect();
    let grid = SpatialGrid::build(&meeting_points, dim, eps);
    let norm = eps.powi(dim as i32);
    let nf = functionals.len();

    // per reverse path m: (n, contribution per functional) in increasing n
    let columns: Vec<Vec<(usize, Vec<f64>)>> = rev
        .par_iter()
        .map(|r| {
            let mut candidates = Vec::new();
            grid.for_each_candidate(&r.meeting, |n| candidates.push(n));
            candidates.sort_unstable();
            let mut buffer = Vec::with_capacity(times.len() * dim);
            let mut out = Vec::new();
            for n in candidates {
                let x = &meeting_points[n * dim..(n + 1) * dim];
                let k = kernel.eval_diff(&r.meeting, x, eps);
                if k == 0.0 {
                    continue;
                }
                let base = k / norm * r.weight;
                buffer.clear();
                buffer.extend_from_slice(&fwd[n].start);
                buffer.extend_from_slice(&fwd[n].knots);
                buffer.extend_from_slice(&r.interior);
                buffer.extend_from_slice(&r.end);
                let states = BridgeStates {
                    dim,
                    times,
                    values: &buffer,
                };
                out.push((
                    n,
                    functionals.iter().map(|g| g.eval(&states) * base).collect(),
                ));
            }
            out
        })
        .collect();

    (0..nf)
        .map(|f| {
            let mut rows = vec![0.0; fwd.len()];
            let mut cols = vec![0.0; rev.len()];
            let mut diag = vec![0.0; fwd.len().min(rev.len())];
            for (m, col) in columns.iter().enumerate() {
                for (n, v) in col {
                    rows[*n] += v[f];
                    cols[m] += v[f];
                    if *n == m {
                        diag[m] = v[f];
                    }
                }
            }
            PairSums {
                total: cols.iter().sum(),
                rows,
                cols,
                diag,
            }
        })
        .collect()
}

/// Jackknife variance `(k-1)/k sum (theta_(j) - mean)^2`.
fn jackknife_variance(replicates: &[f64]) -> f64 {
    let k = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / k;
    (k - 1.0) / k * replicates.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
}

/// Two-sample delete-one jackknife for `f(S_num, S_den)` with independent rows
/// and columns.
fn two_sample_se(num: &PairSums, den: Option<&PairSums>, n: usize, m: usize) -> Option<f64> {
    if n < 2 || m < 2 {
        return None;
    }
    let ratio = |a: f64, b: f64| if b == 0.0 { f64::NAN } else { a / b };
    let (nf, mf) = (n as f64, m as f64);
    let rows: Vec<f64> = (0..n)
        .map(|i| match den {
            Some(d) => ratio(num.total - num.rows[i], d.total - d.rows[i]),
            None => (num.total - num.rows[i]) / ((nf - 1.0) * mf),
        })
        .collect();
    let cols: Vec<f64> = (0..m)
        .map(|j| match den {
            Some(d) => ratio(num.total - num.cols[j], d.total - d.cols[j]),
            None => (num.total - num.cols[j]) / (nf * (mf - 1.0)),
        })
        .collect();
    Some((jackknife_variance(&rows) + jackknife_variance(&cols)).sqrt())
}

/// Shared setup of the Appendix-type estimator from fixed endpoints.
#[allow(clippy::too_many_arguments)]
fn fr_pair_sums(
    model: &dyn Diffusion,
    functionals: &[&dyn PathFunctional],
    x: &[f64],
    y: &[f64],
    partition: &TimePartition,
    n: usize,
    m: usize,
    eps: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<PairSums>> {
    let d = model.dim();
    ensure!(
        n >= 1 && m >= 1,
        InvalidArgument,
        "need at least one path per side"
    );
    ensure!(
        eps > 0.0 && eps.is_finite(),
        InvalidArgument,
        "mollifier bandwidth must be positive"
    );
    ensure!(
        x.len() == d && y.len() == d,
        InvalidArgument,
        "endpoints must have {d} coordinates"
    );
    ensure!(
        (partition.horizon() - model.horizon()).abs() <= 1e-12 * model.horizon(),
        InvalidArgument,
        "partition ends at {}, model horizon is {}",
        partition.horizon(),
        model.horizon()
    );
    let fwd = simulate_forward_pieces(
        model,
        &vec![x.to_vec(); n],
        partition,
        steps,
        SeedStream::new(seed, StreamDomain::ForwardBridge),
    )?;
    let rev = simulate_reverse_pieces(
        model,
        &vec![y.to_vec(); m],
        partition,
        steps,
        SeedStream::new(seed, StreamDomain::ReverseBridge),
    )?;
    Ok(pair_sums(
        d,
        &partition.times(),
        &fwd,
        &rev,
        functionals,
        &Kernel::epanechnikov(d),
        eps,
    ))
}

/// `H_{eps,M,N}(g; x, y) = (NM)^{-1} sum_n sum_m g(..) K_eps(Y^m_{T-t*} - X^n_{t*}) 𝒴^m_{T-t*}`,
/// an estimate of `E[g(bridge)] q(0, x; T, y)`.
#[allow(clippy::too_many_arguments)]
pub fn fr_joint_estimate(
    model: &dyn Diffusion,
    g: &dyn PathFunctional,
    x: &[f64],
    y: &[f64],
    partition: &TimePartition,
    n: usize,
    m: usize,
    eps: f64,
    steps: usize,
    seed: u64,
) -> Result<Estimate> {
    let sums = fr_pair_sums(model, &[g], x, y, partition, n, m, eps, steps, seed)?;
    let s = &sums[0];
    let se = two_sample_se(s, None, n, m);
    Ok(Estimate {
        value: s.total / (n as f64 * m as f64),
        std_error: se.unwrap_or(0.0),
        se_available: se.is_some(),
    })
}

/// `E[g(bridge x -> y)]` as the ratio of joint estimates for `g` and `1` on
/// the same paths.
#[allow(clippy::too_many_arguments)]
pub fn fr_conditional_estimate(
    model: &dyn Diffusion,
    g: &dyn PathFunctional,
    x: &[f64],
    y: &[f64],
    partition: &TimePartition,
    n: usize,
    eps: f64,
    steps: usize,
    seed: u64,
) -> Result<Estimate> {
    let one: &dyn PathFunctional = &unit_functional;
    let sums = fr_pair_sums(model, &[g, one], x, y, partition, n, n, eps, steps, seed)?;
    let (num, den) = (&sums[0], &sums[1]);
    if den.total <= 0.0 {
        return Err(Error::InsufficientOverlap(format!(
            "no forward and reverse paths met within eps = {eps}; increase eps or N"
        )));
    }
    let se = two_sample_se(num, Some(den), n, n);
    Ok(Estimate {
        value: num.total / den.total,
        std_error: se.unwrap_or(0.0),
        se_available: se.is_some(),
    })
}

/// A probability measure used as a (normalized) Schrödinger potential.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Atom(Vec<f64>),
    Density(PotentialSampler),
}

impl Potential {
    pub fn from_lattice(f: &LatticeFunction) -> Result<Self> {
        Ok(Potential::Density(PotentialSampler::new(f)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Potential::Atom(p) => p.len(),
            Potential::Density(s) => s.dim(),
        }
    }

    fn draw(&self, rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        match self {
            Potential::Atom(p) => {
                out.copy_from_slice(p);
                Ok(())
            }
            Potential::Density(s) => s.sample_into(rng, out),
        }
    }

    /// Density value, zero outside the support; `None` for atoms.
    fn density(&self, x: &[f64]) -> Option<f64> {
        match self {
            Potential::Atom(_) => None,
            Potential::Density(s) => Some(s.eval(x)),
        }
    }
}

/// `count` independent draws (`count x d`), draw `i` from stream `i`.
pub fn sample_from_potential(p: &Potential, count: usize, streams: SeedStream) -> Result<Vec<f64>> {
    let d = p.dim();
    let draws: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; d];
            p.draw(&mut streams.rng(i as u64), &mut out)
                .map_err(|e| e.at_index(i))?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(draws.concat())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FddQuery {
    pub partition: TimePartition,
    /// Outer pair count `R`.
    pub replications: usize,
    /// Auxiliary batch size for the normalizing constant.
    pub normalizer_paths: usize,
    /// Mollifier bandwidth; [`fr_bandwidth_rule`] with `N = R` if absent.
    pub epsilon: Option<f64>,
    pub steps: usize,
    pub seed: u64,
}

impl FddQuery {
    pub fn new(partition: TimePartition, replications: usize, seed: u64) -> Self {
        Self {
            partition,
            replications,
            normalizer_paths: 10_000,
            epsilon: None,
            steps: crate::sde::DEFAULT_STEPS,
            seed,
        }
    }

    pub fn epsilon_for(&self, dim: usize) -> Result<f64> {
        match self.epsilon {
            Some(e) => {
                ensure!(
                    e > 0.0 && e.is_finite(),
                    InvalidArgument,
                    "epsilon must be positive"
                );
                Ok(e)
            }
            None => fr_bandwidth_rule(dim, self.replications.max(2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FddEstimate {
    pub estimate: Estimate,
    /// `c_{0,T}` and its Monte Carlo standard error (zero when exact).
    pub normalizer: f64,
    pub normalizer_se: f64,
    pub epsilon: f64,
}

/// `c_{0,T} = (int nu0(dx) q(0,x;T,z) nuT(dz))^{-1}` for probability
/// potentials, with a Monte Carlo standard error.
pub fn normalizing_constant(
    model: &dyn Diffusion,
    nu0: &Potential,
    nu_t: &Potential,
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let t = model.horizon();
    if let (Potential::Atom(x0), Potential::Atom(z0)) = (nu0, nu_t) {
        let q = model.transition().ok_or(Error::Unsupported(
            "two point-mass potentials need a closed-form transition density",
        ))?;
        return Ok((1.0 / q.density(0.0, x0, t, z0), 0.0));
    }
    ensure!(
        paths >= 2,
        InvalidArgument,
        "normalizer needs at least two paths"
    );
    let grid = TimeGrid::uniform(t, steps)?;
    let last = grid.steps();
    let streams = SeedStream::new(seed, StreamDomain::Normalizer);
    let d = model.dim();
    let samples: Vec<f64> = match nu_t {
        Potential::Density(_) => (0..paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.rng(i as u64);
                let mut u = vec![0.0; d];
                nu0.draw(&mut rng, &mut u)?;
                let mut v = 0.0;
                run_forward(model, &u, &grid, &mut rng, |k, x| {
                    if k == last {
                        v = nu_t.density(x).unwrap_or(0.0);
                    }
                })?;
                Ok(v)
            })
            .collect::<Result<_>>()?,
        Potential::Atom(z0) => {
            let rmodel = derive_reverse_model(model);
            (0..paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = streams.rng(i as u64);
                    let mut v = 0.0;
                    run_reverse(&rmodel, z0, &grid, &mut rng, |k, y, w| {
                        if k == last {
                            v = nu0.density(y).unwrap_or(0.0) * w;
                        }
                    })?;
                    Ok(v)
                })
                .collect::<Result<_>>()?
        }
    };
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    ensure!(
        mean > 0.0,
        InsufficientOverlap,
        "normalizer batch never reached the support of the other potential"
    );
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    // delta method for 1 / mean
    Ok((1.0 / mean, (var / k).sqrt() / (mean * mean)))
}

/// Non-nested estimator of `E[g(X^mu at the partition times)]`:
/// `c_{0,T} R^{-2} sum_r sum_r' zeta_eps(g; X^{U_r'}, Y^{Z_r}, 𝒴^{Z_r})`.
pub fn fdd_schrodinger_estimate(
    model: &dyn Diffusion,
    nu0: &Potential,
    nu_t: &Potential,
    g: &dyn PathFunctional,
    query: &FddQuery,
) -> Result<FddEstimate> {
    let d = model.dim();
    let r = query.replications;
    ensure!(r >= 1, InvalidArgument, "need at least one replication");
    ensure!(
        nu0.dim() == d && nu_t.dim() == d,
        InvalidArgument,
        "potential dimensions disagree with the model"
    );
    ensure!(
        (query.partition.horizon() - model.horizon()).abs() <= 1e-12 * model.horizon(),
        InvalidArgument,
        "partition must end at the model horizon"
    );
    let eps = query.epsilon_for(d)?;
    let (c, c_se) = normalizing_constant(
        model,
        nu0,
        nu_t,
        query.normalizer_paths,
        query.steps,
        query.seed,
    )?;

    let starts = draw_points(
        nu0,
        r,
        SeedStream::new(query.seed, StreamDomain::PotentialSampling),
    )?;
    let ends = draw_points(
        nu_t,
        r,
        SeedStream::new(query.seed, StreamDomain::PotentialSampling).with_epoch(1),
    )?;
    let fwd = simulate_forward_pieces(
        model,
        &starts,
        &query.partition,
        query.steps,
        SeedStream::new(query.seed, StreamDomain::ForwardBridge),
    )?;
    let rev = simulate_reverse_pieces(
        model,
        &ends,
        &query.partition,
        query.steps,
        SeedStream::new(query.seed, StreamDomain::ReverseBridge),
    )?;
    let sums = pair_sums(
        d,
        &query.partition.times(),
        &fwd,
        &rev,
        &[g],
        &Kernel::epanechnikov(d),
        eps,
    );
    let s = &sums[0];
    let rf = r as f64;
    // a single pair may legitimately miss; with more, no overlap at all means eps is too small
    if r >= 2 && s.rows.iter().all(|&v| v == 0.0) && s.cols.iter().all(|&v| v == 0.0) {
        return Err(Error::InsufficientOverlap(format!(
            "all mollifier terms vanished at eps = {eps}; increase eps or R"
        )));
    }
    let value = c * s.total / (rf * rf);
    let se = (r >= 2).then(|| {
        // leave pair index j out on both sides
        let reps: Vec<f64> = (0..r)
            .map(|j| c * (s.total - s.rows[j] - s.cols[j] + s.diag[j]) / ((rf - 1.0) * (rf - 1.0)))
            .collect();
        jackknife_variance(&reps).sqrt()
    });
    Ok(FddEstimate {
        estimate: Estimate {
            value,
            std_error: se.unwrap_or(0.0),
            se_available: se.is_some(),
        },
        normalizer: c,
        normalizer_se: c_se,
        epsilon: eps,
    })
}

fn draw_points(p: &Potential, count: usize, streams: SeedStream) -> Result<Vec<Vec<f64>>> {
    let flat = sample_from_potential(p, count, streams)?;
    Ok(flat.chunks(p.dim()).map(<[f64]>::to_vec).collect())
}

/// `h(w, t) = int q(t, w; T, y) nu_T(y) dy` and `grad_w log h` by trapezoidal
/// quadrature over the lattice of `nu_T`.
pub struct HFunction<'a> {
    q: &'a dyn crate::model::TransitionDensity,
    horizon: f64,
    nodes: Vec<f64>,
    /// Quadrature weight times `nu_T` at each node.
    mass: Vec<f64>,
    dim: usize,
}

impl<'a> HFunction<'a> {
    pub fn new(model: &'a dyn Diffusion, nu_t: &LatticeFunction) -> Result<Self> {
        let q = model.transition().ok_or(Error::Unsupported(
            "the h-transform needs a closed-form transition density",
        ))?;
        let lattice = nu_t.lattice();
        let mass = lattice
            .trapezoid_weights()
            .iter()
            .zip(nu_t.values())
            .map(|(w, v)| w * v)
            .collect();
        Ok(Self {
            q,
            horizon: model.horizon(),
            nodes: lattice.nodes(),
            mass,
            dim: lattice.dim(),
        })
    }

    pub fn value(&self, t: f64, w: &[f64]) -> f64 {
        self.nodes
            .chunks(self.dim)
            .zip(&self.mass)
            .map(|(y, m)| m * self.q.density(t, w, self.horizon, y))
            .sum()
    }

    /// Writes `grad_w log h(w, t)` into `out`; returns `h`.
    pub fn grad_log(&self, t: f64, w: &[f64], out: &mut [f64], scratch: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut h = 0.0;
        for (y, m) in self.nodes.chunks(self.dim).zip(&self.mass) {
            let v = m * self.q.density(t, w, self.horizon, y);
            if v == 0.0 {
                continue;
            }
            self.q.grad_log_density(t, w, self.horizon, y, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += v * s;
            }
            h += v;
        }
        if h > 0.0 {
            out.iter_mut().for_each(|o| *o /= h);
        }
        h
    }
}

/// The reference diffusion with drift `a + b grad log h`.
struct HTransformed<'a> {
    model: &'a dyn Diffusion,
    h: HFunction<'a>,
}

impl Diffusion for HTransformed<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }

    fn horizon(&self) -> f64 {
        self.model.horizon()
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.dim(), self.noise_dim());
        self.model.drift(t, x, out);
        let mut sigma = vec![0.0; d * m];
        self.model.diffusion(t, x, &mut sigma);
        let mut b = vec![0.0; d * d];
        crate::model::diffusivity(&sigma, d, m, &mut b);
        let mut grad = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        if self.h.grad_log(t, x, &mut grad, &mut scratch) == 0.0 {
            out.iter_mut().for_each(|o| *o = f64::NAN);
            return;
        }
        for i in 0..d {
            out[i] += (0..d).map(|j| b[i * d + j] * grad[j]).sum::<f64>();
        }
    }

    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.model.diffusion(t, x, out);
    }
}

/// Default distance of the simulation horizon from `T`.
pub fn default_delta_cap(horizon: f64) -> f64 {
    0.05 * horizon
}

/// Euler paths of the Schrödinger process on `grid`, which must end no later
/// than `T - delta_cap`. Start points come from `start`.
pub fn h_transform_simulate(
    model: &dyn Diffusion,
    nu_t: &LatticeFunction,
    start: &Potential,
    grid: &TimeGrid,
    count: usize,
    delta_cap: f64,
    seed: u64,
) -> Result<Vec<Path>> {
    let t = model.horizon();
    ensure!(
        delta_cap > 0.0 && delta_cap < t,
        InvalidArgument,
        "delta_cap must lie in (0, T), got {delta_cap}"
    );
    ensure!(
        grid.end() <= t - delta_cap + 1e-12 * t,
        InvalidArgument,
        "simulation horizon {} exceeds T - delta_cap = {}",
        grid.end(),
        t - delta_cap
    );
    ensure!(
        start.dim() == model.dim(),
        InvalidArgument,
        "start dimension disagrees with the model"
    );
    let hmodel = HTransformed {
        model,
        h: HFunction::new(model, nu_t)?,
    };
    let d = model.dim();
    let streams = SeedStream::new(seed, StreamDomain::HTransform);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.rng(i as u64);
            let mut x0 = vec![0.0; d];
            start.draw(&mut rng, &mut x0).map_err(|e| e.at_index(i))?;
            let mut states = Vec::with_capacity((grid.steps() + 1) * d);
            run_forward(&hmodel, &x0, grid, &mut rng, |_, x| {
                states.extend_from_slice(x)
            })
            .map_err(|e| e.at_index(i))?;
            Ok(Path {
                grid: grid.clone(),
                dim: d,
                states,
                weights: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxRegion;
    use crate::lattice::Lattice;
    use crate::model::FnModel;
    use crate::oracles::{closed_form_model, ModelKind};

    fn bm() -> crate::oracles::GaussianModel {
        closed_form_model(ModelKind::Brownian, 1, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn bandwidth_regimes() {
        assert!((fr_bandwidth_rule(1, 10_000).unwrap() - 10f64.powf(-4.0 / 3.0)).abs() < 1e-12);
        assert!((fr_bandwidth_rule(1, 10_000).unwrap() - 0.0464).abs() < 1e-4);
        assert!((fr_bandwidth_rule(5, 10_000).unwrap() - 10f64.powf(-8.0 / 9.0)).abs() < 1e-12);
        assert!((fr_bandwidth_rule(5, 10_000).unwrap() - 0.1292).abs() < 1e-4);
        assert!((fr_bandwidth_rule(4, 10_000).unwrap() - 0.1).abs() < 1e-12);
        assert!(fr_bandwidth_rule(1, 1_000_000).unwrap() < fr_bandwidth_rule(1, 1000).unwrap());
        assert!(fr_bandwidth_rule(1, 1).is_err());
    }

    #[test]
    fn partition_clocks() {
        let p = TimePartition::with_observations(1.0, 0.5, &[0.8, 0.2, 0.6]).unwrap();
        assert_eq!(p.forward_times(), &[0.0, 0.2, 0.5]);
        assert_eq!(p.reverse_times(), &[0.5, 0.6, 0.8, 1.0]);
        let clock = p.reversed_clock();
        assert!((clock[3] - 0.5).abs() < 1e-15);
        assert!((clock[1] - 0.2).abs() < 1e-15);
        assert_eq!(p.times(), vec![0.0, 0.2, 0.5, 0.6, 0.8, 1.0]);
        assert!(TimePartition::with_observations(1.0, 1.0, &[]).is_err());
        assert!(TimePartition::new(vec![0.0, 0.5], vec![0.4, 1.0]).is_err());
    }

    #[test]
    fn glued_states_follow_partition_order() {
        // deterministic flows x' = 1 forward, so X_s = x + s; reverse of x' = 1
        // has alpha = -1, so Y_s = z - s and Y at reverse clock T - t is z - (T - t)
        let model = FnModel::new(1, 1, 1.0, |_, _, o| o[0] = 1.0, |_, _, o| o[0] = 0.0)
            .unwrap()
            .with_drift_divergence(|_, _| 0.0)
            .with_diffusivity_divergence(|_, _, o| o[0] = 0.0)
            .with_diffusivity_second_divergence(|_, _| 0.0);
        let p = TimePartition::with_observations(1.0, 0.5, &[0.25, 0.75]).unwrap();
        let seen = std::sync::Mutex::new(Vec::new());
        let g = |s: &BridgeStates<'_>| {
            seen.lock().unwrap().push(s.values.to_vec());
            1.0
        };
        fr_joint_estimate(&model, &g, &[0.0], &[1.0], &p, 1, 1, 0.1, 16, 0).unwrap();
        let v = seen.into_inner().unwrap();
        assert_eq!(v.len(), 1);
        let expect = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (a, b) in v[0].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?}", v[0]);
        }
    }

    #[test]
    fn mismatched_flows_give_zero() {
        let model = FnModel::new(1, 1, 1.0, |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 0.0)
            .unwrap()
            .with_drift_divergence(|_, _| 0.0)
            .with_diffusivity_divergence(|_, _, o| o[0] = 0.0)
            .with_diffusivity_second_divergence(|_, _| 0.0);
        let p = TimePartition::midpoint(1.0).unwrap();
        let e = fr_joint_estimate(
            &model,
            &unit_functional,
            &[0.0],
            &[1.0],
            &p,
            10,
            10,
            0.5,
            8,
            1,
        )
        .unwrap();
        assert_eq!(e.value, 0.0);
        assert!(matches!(
            fr_conditional_estimate(&model, &unit_functional, &[0.0], &[1.0], &p, 10, 0.5, 8, 1),
            Err(Error::InsufficientOverlap(_))
        ));
    }

    #[test]
    fn endpoint_functional_cancels() {
        let p = TimePartition::midpoint(1.0).unwrap();
        let g = |s: &BridgeStates<'_>| 2.0 + s.start()[0] + 3.0 * s.end()[0];
        let e = fr_conditional_estimate(&bm(), &g, &[0.1], &[0.3], &p, 500, 0.2, 8, 4).unwrap();
        assert!((e.value - 3.0).abs() < 1e-12 * 3.0);
        let one =
            fr_conditional_estimate(&bm(), &unit_functional, &[0.1], &[0.3], &p, 500, 0.2, 8, 4)
                .unwrap();
        assert_eq!(one.value, 1.0);
    }

    #[test]
    fn atoms_sample_as_themselves() {
        let a = Potential::Atom(vec![0.3, -1.0]);
        let s = sample_from_potential(&a, 3, SeedStream::new(0, StreamDomain::User(0))).unwrap();
        assert_eq!(s, vec![0.3, -1.0, 0.3, -1.0, 0.3, -1.0]);
    }

    #[test]
    fn linear_potential_mean() {
        let lat = Lattice::uniform(BoxRegion::cube(1, 0.0, 1.0).unwrap(), 11).unwrap();
        let f = LatticeFunction::from_fn(lat, |x| 2.0 * x[0] + 1e-12).unwrap();
        let p = Potential::from_lattice(&f).unwrap();
        let n = 100_000;
        let s = sample_from_potential(&p, n, SeedStream::new(9, StreamDomain::User(1))).unwrap();
        let mean = s.iter().sum::<f64>() / n as f64;
        let se = (1.0 / 18.0 / n as f64).sqrt();
        assert!((mean - 2.0 / 3.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn single_replication_has_no_error_bar() {
        let p = TimePartition::midpoint(1.0).unwrap();
        let mut q = FddQuery::new(p, 1, 3);
        q.epsilon = Some(5.0);
        let e = fdd_schrodinger_estimate(
            &bm(),
            &Potential::Atom(vec![0.0]),
            &Potential::Atom(vec![0.0]),
            &unit_functional,
            &q,
        )
        .unwrap();
        assert!(!e.estimate.se_available);
        assert_eq!(e.estimate.std_error, 0.0);
    }

    #[test]
    fn two_atoms_need_closed_form() {
        let model = FnModel::new(1, 1, 1.0, |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 1.0).unwrap();
        let err = normalizing_constant(
            &model,
            &Potential::Atom(vec![0.0]),
            &Potential::Atom(vec![0.0]),
            10,
            8,
            0,
        );
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn delta_cap_is_enforced() {
        let lat = Lattice::uniform(BoxRegion::cube(1, -1.0, 1.0).unwrap(), 9).unwrap();
        let nu = LatticeFunction::constant(lat, 1.0).unwrap();
        let start = Potential::Atom(vec![0.0]);
        let full = TimeGrid::uniform(1.0, 10).unwrap();
        assert!(h_transform_simulate(&bm(), &nu, &start, &full, 4, 0.0, 0).is_err());
        assert!(h_transform_simulate(&bm(), &nu, &start, &full, 4, 0.05, 0).is_err());
        let capped = TimeGrid::uniform(0.95, 10).unwrap();
        assert_eq!(
            h_transform_simulate(&bm(), &nu, &start, &capped, 4, 0.05, 0)
                .unwrap()
                .len(),
            4
        );
    }

    #[test]
    fn flat_potential_on_wide_box_has_no_drift() {
        let lat = Lattice::uniform(BoxRegion::cube(1, -30.0, 30.0).unwrap(), 1201).unwrap();
        let nu = LatticeFunction::constant(lat, 1.0).unwrap();
        let m = bm();
        let h = HFunction::new(&m, &nu).unwrap();
        let mut g = [0.0];
        let mut s = [0.0];
        for w in [-1.0, 0.0, 0.7] {
            h.grad_log(0.3, &[w], &mut g, &mut s);
            assert!(g[0].abs() < 1e-8, "{}", g[0]);
        }
    }
}
