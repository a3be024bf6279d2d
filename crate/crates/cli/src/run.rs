//! Command execution, studies and the JSON-lines run log.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use sbfr_core::fr::{
    fdd_schrodinger_estimate, fr_bandwidth_rule, fr_joint_estimate, unit_functional, BridgeStates,
};
use sbfr_core::hilbert::{hilbert_distance, hilbert_distance_values, l1_normalize};
use sbfr_core::oracles::{
    closed_form_model, grid_fixed_point, oracle_bounds, GaussianModel, GridProblem,
};
use sbfr_core::sde::reverse_expectation;
use sbfr_core::solver::{marginal_residuals, picard_solve};
use sbfr_core::{
    BoxRegion, Density, Error, FddQuery, Lattice, LatticeFunction, PolynomialDensity, Potential,
    PotentialSampler, SchrodingerSolution, SeedStream, SolverConfig, StreamDomain, TimePartition,
    UniformDensity,
};

use crate::config::{
    BoundsSpec, Command, DensitySpec, FunctionalSpec, PotentialSpec, RunConfig, StudyKind,
};
use crate::formats::{self, num, Table};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Numerical(#[from] Error),
}

impl RunError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        RunError::Io(format!("{}: {e}", path.display()))
    }

    /// 1 for numerical failures, 2 for configuration and I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 2,
            RunError::Numerical(e) => match e {
                Error::InvalidArgument(_) | Error::LatticeMismatch(_) | Error::Unsupported(_) => 2,
                _ => 1,
            },
        }
    }
}

/// Reads `SBFR_THREADS` and sizes the global pool; returns the worker count.
pub fn configure_threads() -> Result<usize, RunError> {
    let requested = match std::env::var("SBFR_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Some(n),
            _ => {
                return Err(RunError::Config(format!(
                    "SBFR_THREADS must be a positive integer, got '{v}'"
                )))
            }
        },
        Err(_) => None,
    };
    if let Some(n) = requested {
        // a pool built earlier in the process keeps its size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(rayon::current_num_threads())
}

struct RunLog {
    file: File,
    t0: Instant,
}

impl RunLog {
    fn open(path: &Path) -> Result<Self, RunError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| RunError::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| RunError::io(path, e))?;
        Ok(Self {
            file,
            t0: Instant::now(),
        })
    }

    fn event(&mut self, mut value: serde_json::Value) {
        value["elapsed_ms"] = json!(self.t0.elapsed().as_secs_f64() * 1e3);
        let _ = writeln!(self.file, "{value}");
    }
}

/// Files written by a run and a short human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Writer<'a> {
    dir: &'a Path,
    outcome: Outcome,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
        Ok(Self {
            dir,
            outcome: Outcome::default(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| RunError::io(&path, e))?;
        self.outcome.files.push(path);
        Ok(())
    }
}

pub fn build_model(cfg: &RunConfig) -> Result<GaussianModel, RunError> {
    let m = &cfg.model;
    closed_form_model(m.kind, m.dim, m.sigma, m.theta, m.horizon)
        .map_err(|e| RunError::Config(e.to_string()))
}

pub fn build_density(spec: &DensitySpec) -> Result<Box<dyn Density>, RunError> {
    let config = |e: Error| RunError::Config(e.to_string());
    Ok(match spec {
        DensitySpec::Uniform { lo, hi } => Box::new(UniformDensity::new(
            BoxRegion::new(lo.clone(), hi.clone()).map_err(config)?,
        )),
        DensitySpec::Polynomial { lo, hi, coeffs } => Box::new(
            PolynomialDensity::new(
                BoxRegion::new(lo.clone(), hi.clone()).map_err(config)?,
                coeffs.clone(),
            )
            .map_err(config)?,
        ),
        DensitySpec::Lattice { file } => {
            Box::new(PotentialSampler::new(&formats::read_potential(file)?)?)
        }
    })
}

/// Marginals, model and solver settings shared by `solve` and the rate study.
pub struct Problem {
    pub model: GaussianModel,
    pub rho0: Box<dyn Density>,
    pub rho_t: Box<dyn Density>,
    pub start: Lattice,
    pub end: Lattice,
    pub base: SolverConfig,
}

impl Problem {
    pub fn new(cfg: &RunConfig) -> Result<Self, RunError> {
        let model = build_model(cfg)?;
        let rho0 = build_density(&cfg.start)?;
        let rho_t = build_density(&cfg.end)?;
        let d = cfg.model.dim;
        if rho0.dim() != d || rho_t.dim() != d {
            return Err(RunError::Config(format!(
                "marginals must be {d}-dimensional"
            )));
        }
        let s = &cfg.solver;
        // placeholder bounds until the lattices are known
        let mut base = SolverConfig::new(
            s.n,
            sbfr_core::BoundsConfig::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)?,
            cfg.seed,
        );
        base.steps = s.steps;
        base.alpha = s.alpha;
        base.bandwidth = s.bandwidth;
        base.k_max = s.k_max;
        base.stop_tol = s.stop_tol;
        base.resample_per_iteration = s.resample;
        base.lattice_nodes = s.lattice_nodes;
        base.mode = s.mode;
        let nodes = base.nodes_for(d);
        let start = Lattice::uniform(rho0.support().clone(), nodes)?;
        let end = Lattice::uniform(rho_t.support().clone(), nodes)?;
        base.bounds = match &s.bounds {
            BoundsSpec::Explicit(b) => *b,
            BoundsSpec::Auto => {
                oracle_bounds(&model, cfg.model.horizon, &start, &end, &*rho0, &*rho_t)?
            }
        };
        base.validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        Ok(Self {
            model,
            rho0,
            rho_t,
            start,
            end,
            base,
        })
    }

    pub fn grid_problem(&self) -> Result<GridProblem, RunError> {
        Ok(GridProblem::from_model(
            &self.model,
            self.model_horizon(),
            &self.start,
            &self.end,
            &*self.rho0,
            &*self.rho_t,
        )?)
    }

    fn model_horizon(&self) -> f64 {
        use sbfr_core::Diffusion;
        self.model.horizon()
    }

    /// Grid fixed point `g*` on the end lattice.
    pub fn oracle_g(&self, tol: f64, max_iter: usize) -> Result<LatticeFunction, RunError> {
        let sol = grid_fixed_point(&self.grid_problem()?, tol, max_iter)?;
        Ok(LatticeFunction::new(self.end.clone(), sol.g)?)
    }

    pub fn solve(&self, n: usize, seed: u64) -> Result<SchrodingerSolution, RunError> {
        let mut config = self.base.clone();
        config.n = n;
        config.master_seed = seed;
        Ok(picard_solve(
            &self.model,
            &*self.rho0,
            &*self.rho_t,
            &config,
        )?)
    }
}

/// `max |f - g| / max g` after both are normalized to unit mass.
pub fn relative_sup_error(f: &LatticeFunction, g: &LatticeFunction) -> Result<f64, RunError> {
    let (f, _) = l1_normalize(f)?;
    let (g, _) = l1_normalize(g)?;
    let diff = f
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(diff / g.max())
}

/// One `(N, seed)` run of the rate study.
pub struct RateRecord {
    pub n: usize,
    pub seed: u64,
    pub solution: SchrodingerSolution,
    pub dh_to_oracle: f64,
    pub sup_error: f64,
    pub runtime_ms: f64,
}

impl RateRecord {
    fn fields(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.seed.to_string(),
            self.solution.trace.increments.len().to_string(),
            num(self.dh_to_oracle),
            num(self.sup_error),
            num(self.solution.trace.contraction),
            num(self.solution.bandwidth),
            format!("{:.3}", self.runtime_ms),
        ]
    }
}

/// Seeds `cfg.seed, cfg.seed + 1, ..` at every size, against the grid oracle.
pub fn rate_study(
    cfg: &RunConfig,
) -> Result<(Problem, LatticeFunction, Vec<RateRecord>), RunError> {
    let problem = Problem::new(cfg)?;
    let oracle = problem.oracle_g(cfg.oracle.tol, cfg.oracle.max_iter)?;
    let mut records = Vec::new();
    for &n in &cfg.study.sizes {
        for s in 0..cfg.study.seeds as u64 {
            let seed = cfg.seed.wrapping_add(s);
            let t0 = Instant::now();
            let solution = problem.solve(n, seed)?;
            let runtime_ms = t0.elapsed().as_secs_f64() * 1e3;
            records.push(RateRecord {
                n,
                seed,
                dh_to_oracle: hilbert_distance(&solution.g_hat, &oracle)?,
                sup_error: relative_sup_error(&solution.g_hat, &oracle)?,
                solution,
                runtime_ms,
            });
        }
    }
    Ok((problem, oracle, records))
}

pub type TestFunction = fn(&[f64]) -> f64;

/// Test functions of the reverse-representation study.
pub fn reverse_test_functions() -> Vec<(&'static str, TestFunction)> {
    fn inv_quadratic(x: &[f64]) -> f64 {
        1.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>())
    }
    fn cos_product(x: &[f64]) -> f64 {
        x.iter().map(|v| v.cos()).product()
    }
    fn gaussian_bump(x: &[f64]) -> f64 {
        (-x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>()).exp()
    }
    vec![
        ("inv_quadratic", inv_quadratic),
        ("cos_product", cos_product),
        ("gaussian_bump", gaussian_bump),
    ]
}

fn functional_times(spec: &FunctionalSpec) -> Option<f64> {
    match *spec {
        FunctionalSpec::Unit => None,
        FunctionalSpec::Moment { time, .. } | FunctionalSpec::Indicator { time, .. } => Some(time),
    }
}

fn eval_functional(spec: &FunctionalSpec, states: &BridgeStates<'_>) -> f64 {
    match *spec {
        FunctionalSpec::Unit => 1.0,
        FunctionalSpec::Moment { time, axis, power } => states.at_time(time)[axis].powi(power),
        FunctionalSpec::Indicator { time, axis, lo, hi } => {
            let v = states.at_time(time)[axis];
            if (lo..=hi).contains(&v) {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn build_potential(spec: &PotentialSpec) -> Result<Potential, RunError> {
    match spec {
        PotentialSpec::Atom(p) => Ok(Potential::Atom(p.clone())),
        PotentialSpec::File(f) => Ok(Potential::from_lattice(&formats::read_potential(f)?)?),
    }
}

fn solve_command(cfg: &RunConfig, out: &mut Writer<'_>, log: &mut RunLog) -> Result<(), RunError> {
    let problem = Problem::new(cfg)?;
    let sol = problem.solve(cfg.solver.n, cfg.seed)?;
    log.event(json!({"event": "solved", "iterations": sol.trace.increments.len(), "converged": sol.converged}));
    out.write("g_hat.pot", &formats::write_potential(&sol.g_hat))?;
    out.write("nu0.pot", &formats::write_potential(&sol.nu_0))?;
    out.write("nuT.pot", &formats::write_potential(&sol.nu_t))?;

    let t = &sol.trace;
    let mut trace = Table::new(formats::TRACE_COLUMNS);
    for k in 0..t.increments.len() {
        trace.row(&[
            (k + 1).to_string(),
            num(t.increments[k]),
            num(t.l1_norms[k]),
            t.clamped[k].to_string(),
            u8::from(t.straddles[k]).to_string(),
            t.fallbacks[k].to_string(),
        ]);
    }
    out.write("trace.csv", trace.as_str())?;

    let res = marginal_residuals(
        &problem.model,
        &sol.nu_0,
        &sol.nu_t,
        &*problem.rho0,
        &*problem.rho_t,
        cfg.solver.residual_paths,
        cfg.solver.steps,
        cfg.seed,
    )?;
    log.event(json!({"event": "residuals", "start_sup": res.start_sup, "end_sup": res.end_sup}));
    let mut table = Table::new(formats::RESIDUAL_COLUMNS);
    table.row(&["start".into(), num(res.start_sup), num(res.start_mean)]);
    table.row(&["end".into(), num(res.end_sup), num(res.end_mean)]);
    out.write("residuals.csv", table.as_str())?;

    out.outcome.summary = format!(
        "solve: {} iterations, last increment {:.3e}, kappa_hat {:.4}, bandwidth {:.4}, residual sup {:.3e}/{:.3e}",
        t.increments.len(),
        t.increments.last().copied().unwrap_or(0.0),
        t.contraction,
        sol.bandwidth,
        res.start_sup,
        res.end_sup
    );
    if !sol.converged {
        return Err(Error::NotConverged {
            iterations: t.increments.len(),
            last_increment: t.increments.last().copied().unwrap_or(f64::INFINITY),
        }
        .into());
    }
    Ok(())
}

fn fdd_command(cfg: &RunConfig, out: &mut Writer<'_>, log: &mut RunLog) -> Result<(), RunError> {
    let model = build_model(cfg)?;
    let f = &cfg.fdd;
    let nu0 = build_potential(&f.start)?;
    let nu_t = build_potential(&f.end)?;
    let d = cfg.model.dim;
    if nu0.dim() != d || nu_t.dim() != d {
        return Err(RunError::Config(format!(
            "potentials must be {d}-dimensional"
        )));
    }
    let horizon = cfg.model.horizon;
    let t_star = f.t_star.unwrap_or(0.5 * horizon);
    let obs: Vec<f64> = functional_times(&f.functional)
        .into_iter()
        .filter(|&t| t != t_star)
        .collect();
    let partition = TimePartition::with_observations(horizon, t_star, &obs)
        .map_err(|e| RunError::Config(e.to_string()))?;
    let mut query = FddQuery::new(partition, f.replications, cfg.seed);
    query.normalizer_paths = f.normalizer_paths;
    query.epsilon = f.epsilon;
    query.steps = f.steps;
    let spec = f.functional.clone();
    let g = move |s: &BridgeStates<'_>| eval_functional(&spec, s);
    let est = fdd_schrodinger_estimate(&model, &nu0, &nu_t, &g, &query)?;
    log.event(json!({"event": "fdd", "estimate": est.estimate.value, "std_error": est.estimate.std_error}));
    let mut table = Table::new(formats::FDD_COLUMNS);
    table.row(&[
        f.replications.to_string(),
        cfg.seed.to_string(),
        num(est.estimate.value),
        num(est.estimate.std_error),
        u8::from(!est.estimate.se_available).to_string(),
        num(est.normalizer),
        num(est.epsilon),
    ]);
    out.write("fdd.csv", table.as_str())?;
    out.outcome.summary = format!(
        "fdd: estimate {:.6} (SE {:.2e}{}), c0T {:.6}, epsilon {:.4}",
        est.estimate.value,
        est.estimate.std_error,
        if est.estimate.se_available {
            ""
        } else {
            ", unavailable"
        },
        est.normalizer,
        est.epsilon
    );
    Ok(())
}

fn study_command(cfg: &RunConfig, out: &mut Writer<'_>, log: &mut RunLog) -> Result<(), RunError> {
    match cfg.study.kind {
        StudyKind::Rate => {
            let (_, _, records) = rate_study(cfg)?;
            let mut table = Table::new(formats::RATE_COLUMNS);
            let mut trace = Table::new(&["N", "seed", "iteration", "increment"]);
            for r in &records {
                table.row(&r.fields());
                for (k, inc) in r.solution.trace.increments.iter().enumerate() {
                    trace.row(&[
                        r.n.to_string(),
                        r.seed.to_string(),
                        (k + 1).to_string(),
                        num(*inc),
                    ]);
                }
            }
            log.event(json!({"event": "study", "kind": "rate", "rows": records.len()}));
            out.write("study.csv", table.as_str())?;
            out.write("study_trace.csv", trace.as_str())?;
            out.outcome.summary = format!("rate study: {} runs", records.len());
        }
        StudyKind::Reverse => {
            let model = build_model(cfg)?;
            let mut table = Table::new(formats::REVERSE_COLUMNS);
            let mut rows = 0;
            for (k, (name, g)) in reverse_test_functions().into_iter().enumerate() {
                for &n in &cfg.study.sizes {
                    for s in 0..cfg.study.seeds as u64 {
                        let seed = cfg.seed.wrapping_add(s);
                        let streams =
                            SeedStream::new(seed, StreamDomain::ReverseBridge).with_epoch(k as u64);
                        let t0 = Instant::now();
                        let (mean, se) = reverse_expectation(
                            &model,
                            &cfg.study.point,
                            g,
                            n,
                            cfg.solver.steps,
                            streams,
                        )?;
                        table.row(&[
                            name.to_string(),
                            n.to_string(),
                            seed.to_string(),
                            num(mean),
                            num(se),
                            format!("{:.3}", t0.elapsed().as_secs_f64() * 1e3),
                        ]);
                        rows += 1;
                    }
                }
            }
            log.event(json!({"event": "study", "kind": "reverse", "rows": rows}));
            out.write("study.csv", table.as_str())?;
            out.outcome.summary = format!("reverse study: {rows} runs");
        }
        StudyKind::Density => {
            let model = build_model(cfg)?;
            let partition = TimePartition::midpoint(cfg.model.horizon)?;
            let y = &cfg.study.point;
            let mut table = Table::new(formats::DENSITY_COLUMNS);
            let mut rows = 0;
            for &n in &cfg.study.sizes {
                let eps = fr_bandwidth_rule(cfg.model.dim, n)?;
                for s in 0..cfg.study.seeds as u64 {
                    let seed = cfg.seed.wrapping_add(s);
                    let t0 = Instant::now();
                    let est = fr_joint_estimate(
                        &model,
                        &unit_functional,
                        y,
                        y,
                        &partition,
                        n,
                        n,
                        eps,
                        cfg.solver.steps,
                        seed,
                    )?;
                    table.row(&[
                        n.to_string(),
                        seed.to_string(),
                        num(est.value),
                        num(est.std_error),
                        u8::from(!est.se_available).to_string(),
                        num(eps),
                        format!("{:.3}", t0.elapsed().as_secs_f64() * 1e3),
                    ]);
                    rows += 1;
                }
            }
            log.event(json!({"event": "study", "kind": "fr_density", "rows": rows}));
            out.write("study.csv", table.as_str())?;
            out.outcome.summary = format!("fr_density study: {rows} runs");
        }
    }
    Ok(())
}

fn oracle_command(cfg: &RunConfig, out: &mut Writer<'_>, log: &mut RunLog) -> Result<(), RunError> {
    let (problem, lattice) = match &cfg.oracle.problem {
        Some(path) => (formats::read_grid_problem(path)?, None),
        None => {
            let p = Problem::new(cfg)?;
            let grid = p.grid_problem()?;
            out.write("problem.csv", &formats::write_grid_problem(&grid))?;
            (grid, Some((p.start, p.end)))
        }
    };
    let sol = grid_fixed_point(&problem, cfg.oracle.tol, cfg.oracle.max_iter)?;
    let (r0, rt) = problem.system_residuals(&sol.nu0, &sol.nu_t);
    log.event(json!({"event": "oracle", "iterations": sol.iterations(), "residual_start": r0, "residual_end": rt}));

    let mut table = Table::new(&["block", "index", "value"]);
    for (name, v) in [("g", &sol.g), ("nu0", &sol.nu0), ("nuT", &sol.nu_t)] {
        for (i, x) in v.iter().enumerate() {
            table.row(&[name.to_string(), i.to_string(), num(*x)]);
        }
    }
    out.write("oracle.csv", table.as_str())?;
    if let Some((start, end)) = &lattice {
        out.write(
            "g_star.pot",
            &formats::write_potential(&LatticeFunction::new(end.clone(), sol.g.clone())?),
        )?;
        out.write(
            "nu0_star.pot",
            &formats::write_potential(&LatticeFunction::new(start.clone(), sol.nu0.clone())?),
        )?;
        out.write(
            "nuT_star.pot",
            &formats::write_potential(&LatticeFunction::new(end.clone(), sol.nu_t.clone())?),
        )?;
    }
    let mut summary = format!(
        "oracle: {} iterations, residuals {:.3e}/{:.3e}, contraction ceiling {:.4}",
        sol.iterations(),
        r0,
        rt,
        problem.contraction_ceiling()
    );
    if let Some(path) = &cfg.oracle.compare {
        let other = formats::read_potential(path)?;
        if other.values().len() != sol.g.len() {
            return Err(RunError::Config(format!(
                "{} has {} nodes, the oracle has {}",
                path.display(),
                other.values().len(),
                sol.g.len()
            )));
        }
        let dh = hilbert_distance_values(other.values(), &sol.g)?;
        let mut cmp = Table::new(&["dH", "sup_rel"]);
        let star = LatticeFunction::new(other.lattice().clone(), sol.g.clone())?;
        let sup = relative_sup_error(&other, &star)?;
        cmp.row(&[num(dh), num(sup)]);
        out.write("compare.csv", cmp.as_str())?;
        summary.push_str(&format!(", dH to {} = {dh:.4e}", path.display()));
    }
    out.outcome.summary = summary;
    Ok(())
}

/// Runs the configured command, writing outputs under `output.dir`.
pub fn run(cfg: &RunConfig) -> Result<Outcome, RunError> {
    cfg.check_files()
        .map_err(|e| RunError::Config(e.to_string()))?;
    let log_path = cfg
        .output
        .log
        .clone()
        .unwrap_or_else(|| cfg.output.dir.join("run.jsonl"));
    let mut log = RunLog::open(&log_path)?;
    log.event(json!({
        "event": "start",
        "command": cfg.command.name(),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": sbfr_core::VERSION,
        "threads": rayon::current_num_threads(),
    }));
    let mut out = Writer::new(&cfg.output.dir)?;
    let result = match cfg.command {
        Command::Solve => solve_command(cfg, &mut out, &mut log),
        Command::Fdd => fdd_command(cfg, &mut out, &mut log),
        Command::Study => study_command(cfg, &mut out, &mut log),
        Command::Oracle => oracle_command(cfg, &mut out, &mut log),
    };
    let code = result.as_ref().map_or_else(RunError::exit_code, |_| 0);
    let error = result.as_ref().err().map(|e| e.to_string());
    log.event(json!({"event": "finish", "exit_code": code, "error": error}));
    result.map(|_| out.outcome)
}

/// Runs and reports; returns the process exit code.
pub fn execute(cfg: &RunConfig) -> i32 {
    match run(cfg) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
