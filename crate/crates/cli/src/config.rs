//! Run configuration: a sectioned `key = value` format.
//!
//! ```text
//! command = solve
//! seed = 7
//!
//! [model]
//! kind = brownian
//! dim = 1
//!
//! [marginals]
//! start = polynomial
//! start_lo = 0
//! start_hi = 1
//! start_coeffs = 0.6 0.8
//! ```
//!
//! `#` starts a comment. Vector values are whitespace separated; a single box
//! coordinate is broadcast to every axis. Unknown sections or keys and
//! repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sbfr_core::oracles::ModelKind;
use sbfr_core::regression::{BoundsConfig, EstimatorMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn err<T>(line: Option<usize>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Fdd,
    Study,
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Fdd => "fdd",
            Command::Study => "study",
            Command::Oracle => "oracle",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "solve" => Command::Solve,
            "fdd" => Command::Fdd,
            "study" => Command::Study,
            "oracle" => Command::Oracle,
            other => return Err(format!("unknown command '{other}'")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub sigma: f64,
    pub theta: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensitySpec {
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Polynomial {
        lo: Vec<f64>,
        hi: Vec<f64>,
        coeffs: Vec<f64>,
    },
    Lattice {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundsSpec {
    /// Computed from the closed-form model on the lattices.
    Auto,
    Explicit(BoundsConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub n: usize,
    pub steps: usize,
    pub alpha: f64,
    pub bandwidth: Option<f64>,
    pub k_max: Option<usize>,
    pub stop_tol: f64,
    pub resample: bool,
    pub lattice_nodes: usize,
    pub mode: EstimatorMode,
    pub bounds: BoundsSpec,
    pub residual_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Atom(Vec<f64>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalSpec {
    Unit,
    /// `x_axis(time)^power`.
    Moment {
        time: f64,
        axis: usize,
        power: i32,
    },
    /// `1{lo <= x_axis(time) <= hi}`.
    Indicator {
        time: f64,
        axis: usize,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FddSpec {
    pub start: PotentialSpec,
    pub end: PotentialSpec,
    pub replications: usize,
    pub normalizer_paths: usize,
    pub epsilon: Option<f64>,
    pub steps: usize,
    pub t_star: Option<f64>,
    pub functional: FunctionalSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    /// Solver error against the grid oracle over cloud sizes.
    Rate,
    /// Reverse-path representation against quadrature.
    Reverse,
    /// Forward-reverse transition density estimate.
    Density,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub problem: Option<PathBuf>,
    pub compare: Option<PathBuf>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub model: ModelSpec,
    pub start: DensitySpec,
    pub end: DensitySpec,
    pub solver: SolverSpec,
    pub fdd: FddSpec,
    pub study: StudySpec,
    pub oracle: OracleSpec,
    pub output: OutputSpec,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("", &["command", "seed"]),
    ("model", &["kind", "dim", "sigma", "theta", "horizon"]),
    (
        "marginals",
        &[
            "start",
            "start_lo",
            "start_hi",
            "start_coeffs",
            "start_file",
            "end",
            "end_lo",
            "end_hi",
            "end_coeffs",
            "end_file",
        ],
    ),
    (
        "solver",
        &[
            "n",
            "steps",
            "alpha",
            "bandwidth",
            "k_max",
            "stop_tol",
            "resample",
            "lattice_nodes",
            "mode",
            "bounds",
            "q_min",
            "q_max",
            "mass_min",
            "mass_max",
            "rho_min",
            "rho_max",
            "residual_paths",
        ],
    ),
    (
        "fdd",
        &[
            "start",
            "start_point",
            "start_file",
            "end",
            "end_point",
            "end_file",
            "replications",
            "normalizer_paths",
            "epsilon",
            "steps",
            "t_star",
            "functional",
            "time",
            "axis",
            "power",
            "lo",
            "hi",
        ],
    ),
    ("study", &["kind", "sizes", "seeds", "point"]),
    ("oracle", &["problem", "compare", "tol", "max_iter"]),
    ("output", &["dir", "log"]),
];

/// Raw entries of one section with their line numbers.
#[derive(Debug, Default)]
struct Section {
    entries: BTreeMap<String, (String, usize)>,
}

struct Reader {
    sections: BTreeMap<String, Section>,
}

impl Reader {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        sections.insert(String::new(), Section::default());
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return err(Some(line_no), "unterminated section header");
                };
                let name = name.trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) || name.is_empty() {
                    return err(Some(line_no), format!("unknown section [{name}]"));
                }
                if sections.contains_key(name) {
                    return err(Some(line_no), format!("section [{name}] appears twice"));
                }
                sections.insert(name.to_string(), Section::default());
                current = name.to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(
                    Some(line_no),
                    format!("expected 'key = value', got '{line}'"),
                );
            };
            let (key, value) = (key.trim(), value.trim());
            let allowed = SECTIONS
                .iter()
                .find(|(s, _)| *s == current)
                .map(|(_, keys)| *keys)
                .unwrap_or(&[]);
            if !allowed.contains(&key) {
                let place = if current.is_empty() {
                    "at top level".to_string()
                } else {
                    format!("in [{current}]")
                };
                return err(Some(line_no), format!("unknown key '{key}' {place}"));
            }
            if value.is_empty() {
                return err(Some(line_no), format!("key '{key}' has no value"));
            }
            let section = sections.get_mut(&current).expect("section inserted");
            if let Some((_, first)) = section.entries.get(key) {
                return err(
                    Some(line_no),
                    format!("duplicate key '{key}' (first set on line {first})"),
                );
            }
            section
                .entries
                .insert(key.to_string(), (value.to_string(), line_no));
        }
        Ok(Self { sections })
    }

    fn raw(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.sections
            .get(section)
            .and_then(|s| s.entries.get(key))
            .map(|(v, l)| (v.as_str(), *l))
    }

    fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| ConfigError {
                line: Some(line),
                message: format!("invalid value '{v}' for '{key}': {e}"),
            }),
        }
    }

    fn or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .split_whitespace()
                .map(|item| {
                    item.parse::<T>().map_err(|e| ConfigError {
                        line: Some(line),
                        message: format!("invalid entry '{item}' in '{key}': {e}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.raw(section, key).map(|(_, l)| l)
    }
}

fn parse_model_kind(s: &str) -> Result<ModelKind, String> {
    match s {
        "brownian" => Ok(ModelKind::Brownian),
        "ou" => Ok(ModelKind::OrnsteinUhlenbeck),
        "custom" => Err("custom models are not supported by the batch front end".into()),
        other => Err(format!("unknown model kind '{other}'")),
    }
}

fn model_kind_name(k: ModelKind) -> &'static str {
    match k {
        ModelKind::Brownian => "brownian",
        ModelKind::OrnsteinUhlenbeck => "ou",
    }
}

struct Word(String);

impl FromStr for Word {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(Word(s.to_string()))
    }
}

fn broadcast(
    v: Vec<f64>,
    dim: usize,
    line: Option<usize>,
    key: &str,
) -> Result<Vec<f64>, ConfigError> {
    match v.len() {
        1 => Ok(vec![v[0]; dim]),
        n if n == dim => Ok(v),
        n => err(
            line,
            format!("'{key}' has {n} entries, expected 1 or {dim}"),
        ),
    }
}

fn density_spec(r: &Reader, side: &str, dim: usize) -> Result<DensitySpec, ConfigError> {
    let kind = r
        .get::<Word>("marginals", side)?
        .map(|w| w.0)
        .unwrap_or_else(|| "uniform".into());
    let line = r.line("marginals", side);
    let boxed = |name: &str, default: f64| -> Result<Vec<f64>, ConfigError> {
        let key = format!("{side}_{name}");
        let v = r.list::<f64>("marginals", &key)?.unwrap_or(vec![default]);
        broadcast(v, dim, r.line("marginals", &key), &key)
    };
    match kind.as_str() {
        "uniform" => Ok(DensitySpec::Uniform {
            lo: boxed("lo", 0.0)?,
            hi: boxed("hi", 1.0)?,
        }),
        "polynomial" => {
            let key = format!("{side}_coeffs");
            let Some(coeffs) = r.list::<f64>("marginals", &key)? else {
                return err(line, format!("polynomial marginal needs '{key}'"));
            };
            Ok(DensitySpec::Polynomial {
                lo: boxed("lo", 0.0)?,
                hi: boxed("hi", 1.0)?,
                coeffs,
            })
        }
        "lattice" => {
            let key = format!("{side}_file");
            match r.get::<PathBuf>("marginals", &key)? {
                Some(file) => Ok(DensitySpec::Lattice { file }),
                None => err(line, format!("lattice marginal needs '{key}'")),
            }
        }
        other => err(line, format!("unknown density kind '{other}'")),
    }
}

fn potential_spec(r: &Reader, side: &str, dim: usize) -> Result<PotentialSpec, ConfigError> {
    let kind = r
        .get::<Word>("fdd", side)?
        .map(|w| w.0)
        .unwrap_or_else(|| "atom".into());
    let line = r.line("fdd", side);
    match kind.as_str() {
        "atom" => {
            let key = format!("{side}_point");
            let p = r.list::<f64>("fdd", &key)?.unwrap_or(vec![0.0]);
            Ok(PotentialSpec::Atom(broadcast(
                p,
                dim,
                r.line("fdd", &key),
                &key,
            )?))
        }
        "file" => {
            let key = format!("{side}_file");
            match r.get::<PathBuf>("fdd", &key)? {
                Some(f) => Ok(PotentialSpec::File(f)),
                None => err(line, format!("file potential needs '{key}'")),
            }
        }
        other => err(line, format!("unknown potential kind '{other}'")),
    }
}

fn positive(value: f64, key: &str, line: Option<usize>) -> Result<f64, ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        err(line, format!("'{key}' must be positive, got {value}"))
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let r = Reader::parse(text)?;
    let Some(command) = r.get::<Command>("", "command")? else {
        return err(None, "missing command");
    };
    let seed = r.or("", "seed", 0u64)?;

    let kind = match r.raw("model", "kind") {
        None => ModelKind::Brownian,
        Some((v, line)) => parse_model_kind(v).map_err(|m| ConfigError {
            line: Some(line),
            message: m,
        })?,
    };
    let dim = r.or("model", "dim", 1usize)?;
    if dim == 0 || dim > sbfr_core::lattice::MAX_DIM {
        return err(
            r.line("model", "dim"),
            format!("dim must lie in 1..={}", sbfr_core::lattice::MAX_DIM),
        );
    }
    let model = ModelSpec {
        kind,
        dim,
        sigma: positive(
            r.or("model", "sigma", 1.0)?,
            "sigma",
            r.line("model", "sigma"),
        )?,
        theta: r.or("model", "theta", 0.0)?,
        horizon: positive(
            r.or("model", "horizon", 1.0)?,
            "horizon",
            r.line("model", "horizon"),
        )?,
    };
    let start = density_spec(&r, "start", dim)?;
    let end = density_spec(&r, "end", dim)?;

    let bounds_keys = [
        "q_min", "q_max", "mass_min", "mass_max", "rho_min", "rho_max",
    ];
    let bounds_mode = r.get::<Word>("solver", "bounds")?.map(|w| w.0);
    let bounds = match bounds_mode.as_deref() {
        None | Some("auto") => {
            if let Some(k) = bounds_keys.iter().find(|k| r.raw("solver", k).is_some()) {
                return err(
                    r.line("solver", k),
                    format!("'{k}' requires bounds = explicit"),
                );
            }
            BoundsSpec::Auto
        }
        Some("explicit") => {
            let mut v = [0.0; 6];
            for (slot, key) in v.iter_mut().zip(bounds_keys) {
                match r.get::<f64>("solver", key)? {
                    Some(x) => *slot = x,
                    None => {
                        return err(
                            r.line("solver", "bounds"),
                            format!("explicit bounds need '{key}'"),
                        )
                    }
                }
            }
            let b =
                BoundsConfig::new(v[0], v[1], v[2], v[3], v[4], v[5]).map_err(|e| ConfigError {
                    line: r.line("solver", "bounds"),
                    message: e.to_string(),
                })?;
            BoundsSpec::Explicit(b)
        }
        Some(other) => {
            return err(
                r.line("solver", "bounds"),
                format!("bounds must be auto or explicit, got '{other}'"),
            )
        }
    };
    let mode = match r.get::<Word>("solver", "mode")?.map(|w| w.0).as_deref() {
        None | Some("self_normalized") => EstimatorMode::SelfNormalized,
        Some("direct") => EstimatorMode::Direct,
        Some(other) => {
            return err(
                r.line("solver", "mode"),
                format!("unknown estimator mode '{other}'"),
            )
        }
    };
    let k_max = match r.get::<Word>("solver", "k_max")?.map(|w| w.0).as_deref() {
        None | Some("auto") => None,
        Some(v) => match v.parse::<usize>() {
            Ok(k) if k >= 1 => Some(k),
            _ => {
                return err(
                    r.line("solver", "k_max"),
                    "k_max must be 'auto' or a positive integer",
                )
            }
        },
    };
    let solver = SolverSpec {
        n: r.or("solver", "n", 2000usize)?,
        steps: r.or("solver", "steps", sbfr_core::sde::DEFAULT_STEPS)?,
        alpha: r.or("solver", "alpha", 1.0)?,
        bandwidth: r.get("solver", "bandwidth")?,
        k_max,
        stop_tol: r.or("solver", "stop_tol", 1e-8)?,
        resample: r.or("solver", "resample", false)?,
        lattice_nodes: r.or("solver", "lattice_nodes", 0usize)?,
        mode,
        bounds,
        residual_paths: r.or("solver", "residual_paths", 200usize)?,
    };
    if solver.n < 10 {
        return err(r.line("solver", "n"), "n must be at least 10");
    }
    if !(solver.alpha > 0.0 && solver.alpha <= 1.0) {
        return err(r.line("solver", "alpha"), "alpha must lie in (0, 1]");
    }
    positive(solver.stop_tol, "stop_tol", r.line("solver", "stop_tol"))?;
    if solver.steps == 0 {
        return err(r.line("solver", "steps"), "steps must be positive");
    }
    if let Some(b) = solver.bandwidth {
        if !(b > 0.0 && b < 1.0) {
            return err(
                r.line("solver", "bandwidth"),
                "bandwidth must lie in (0, 1)",
            );
        }
    }
    if solver.lattice_nodes == 1 {
        return err(
            r.line("solver", "lattice_nodes"),
            "lattice needs at least 2 nodes per axis",
        );
    }
    if command == Command::Solve && solver.residual_paths == 0 {
        return err(
            r.line("solver", "residual_paths"),
            "residual_paths must be positive",
        );
    }

    let functional = match r.get::<Word>("fdd", "functional")?.map(|w| w.0).as_deref() {
        None | Some("unit") => FunctionalSpec::Unit,
        Some(kind @ ("moment" | "indicator")) => {
            let time = r.or("fdd", "time", 0.5 * model.horizon)?;
            if !(time > 0.0 && time < model.horizon) {
                return err(r.line("fdd", "time"), "observation time must lie in (0, T)");
            }
            let axis = r.or("fdd", "axis", 0usize)?;
            if axis >= dim {
                return err(r.line("fdd", "axis"), format!("axis must be below {dim}"));
            }
            if kind == "moment" {
                FunctionalSpec::Moment {
                    time,
                    axis,
                    power: r.or("fdd", "power", 1i32)?,
                }
            } else {
                let lo = r.or("fdd", "lo", f64::NEG_INFINITY)?;
                let hi = r.or("fdd", "hi", f64::INFINITY)?;
                if lo > hi {
                    return err(r.line("fdd", "lo"), "indicator needs lo <= hi");
                }
                FunctionalSpec::Indicator { time, axis, lo, hi }
            }
        }
        Some(other) => {
            return err(
                r.line("fdd", "functional"),
                format!("unknown functional '{other}'"),
            )
        }
    };
    let fdd = FddSpec {
        start: potential_spec(&r, "start", dim)?,
        end: potential_spec(&r, "end", dim)?,
        replications: r.or("fdd", "replications", 2000usize)?,
        normalizer_paths: r.or("fdd", "normalizer_paths", 10_000usize)?,
        epsilon: r.get("fdd", "epsilon")?,
        steps: r.or("fdd", "steps", sbfr_core::sde::DEFAULT_STEPS)?,
        t_star: r.get("fdd", "t_star")?,
        functional,
    };
    if fdd.replications == 0 {
        return err(
            r.line("fdd", "replications"),
            "replications must be positive",
        );
    }
    if fdd.steps == 0 {
        return err(r.line("fdd", "steps"), "steps must be positive");
    }
    if let Some(e) = fdd.epsilon {
        positive(e, "epsilon", r.line("fdd", "epsilon"))?;
    }
    if let Some(t) = fdd.t_star {
        if !(t > 0.0 && t < model.horizon) {
            return err(r.line("fdd", "t_star"), "t_star must lie in (0, T)");
        }
    }

    let study_kind = match r.get::<Word>("study", "kind")?.map(|w| w.0).as_deref() {
        None | Some("rate") => StudyKind::Rate,
        Some("reverse") => StudyKind::Reverse,
        Some("fr_density") => StudyKind::Density,
        Some(other) => {
            return err(
                r.line("study", "kind"),
                format!("unknown study kind '{other}'"),
            )
        }
    };
    let sizes = r
        .list::<usize>("study", "sizes")?
        .unwrap_or_else(|| vec![500, 1000, 2000, 4000, 8000]);
    if sizes.is_empty() || sizes.iter().any(|&n| n < 10) {
        return err(r.line("study", "sizes"), "study sizes must be at least 10");
    }
    let point_key_line = r.line("study", "point");
    let study = StudySpec {
        kind: study_kind,
        sizes,
        seeds: r.or("study", "seeds", 10usize)?,
        point: broadcast(
            r.list::<f64>("study", "point")?.unwrap_or(vec![0.0]),
            dim,
            point_key_line,
            "point",
        )?,
    };
    if study.seeds == 0 {
        return err(r.line("study", "seeds"), "seeds must be positive");
    }

    let oracle = OracleSpec {
        problem: r.get("oracle", "problem")?,
        compare: r.get("oracle", "compare")?,
        tol: positive(
            r.or("oracle", "tol", 1e-13)?,
            "tol",
            r.line("oracle", "tol"),
        )?,
        max_iter: r.or("oracle", "max_iter", 10_000usize)?,
    };
    let output = OutputSpec {
        dir: r.or("output", "dir", PathBuf::from("sbfr-out"))?,
        log: r.get("output", "log")?,
    };

    Ok(RunConfig {
        command,
        seed,
        model,
        start,
        end,
        solver,
        fdd,
        study,
        oracle,
        output,
    })
}

impl RunConfig {
    /// Checks that every referenced input file exists.
    pub fn check_files(&self) -> Result<(), ConfigError> {
        let mut files: Vec<&Path> = Vec::new();
        for d in [&self.start, &self.end] {
            if let DensitySpec::Lattice { file } = d {
                files.push(file);
            }
        }
        if self.command == Command::Fdd {
            for p in [&self.fdd.start, &self.fdd.end] {
                if let PotentialSpec::File(f) = p {
                    files.push(f);
                }
            }
        }
        if self.command == Command::Oracle {
            files.extend(self.oracle.problem.as_deref());
            files.extend(self.oracle.compare.as_deref());
        }
        match files.into_iter().find(|f| !f.exists()) {
            Some(f) => err(
                None,
                format!("referenced file {} does not exist", f.display()),
            ),
            None => Ok(()),
        }
    }

    /// Canonical text that parses back to an equal configuration.
    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        let nums = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, "command = {}", self.command.name());
        let _ = writeln!(s, "seed = {}", self.seed);

        let m = &self.model;
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "kind = {}", model_kind_name(m.kind));
        let _ = writeln!(s, "dim = {}", m.dim);
        let _ = writeln!(s, "sigma = {:?}", m.sigma);
        let _ = writeln!(s, "theta = {:?}", m.theta);
        let _ = writeln!(s, "horizon = {:?}", m.horizon);

        let _ = writeln!(s, "\n[marginals]");
        for (side, d) in [("start", &self.start), ("end", &self.end)] {
            match d {
                DensitySpec::Uniform { lo, hi } => {
                    let _ = writeln!(s, "{side} = uniform");
                    let _ = writeln!(s, "{side}_lo = {}", nums(lo));
                    let _ = writeln!(s, "{side}_hi = {}", nums(hi));
                }
                DensitySpec::Polynomial { lo, hi, coeffs } => {
                    let _ = writeln!(s, "{side} = polynomial");
                    let _ = writeln!(s, "{side}_lo = {}", nums(lo));
                    let _ = writeln!(s, "{side}_hi = {}", nums(hi));
                    let _ = writeln!(s, "{side}_coeffs = {}", nums(coeffs));
                }
                DensitySpec::Lattice { file } => {
                    let _ = writeln!(s, "{side} = lattice");
                    let _ = writeln!(s, "{side}_file = {}", file.display());
                }
            }
        }

        let v = &self.solver;
        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "n = {}", v.n);
        let _ = writeln!(s, "steps = {}", v.steps);
        let _ = writeln!(s, "alpha = {:?}", v.alpha);
        if let Some(b) = v.bandwidth {
            let _ = writeln!(s, "bandwidth = {b:?}");
        }
        match v.k_max {
            Some(k) => {
                let _ = writeln!(s, "k_max = {k}");
            }
            None => {
                let _ = writeln!(s, "k_max = auto");
            }
        }
        let _ = writeln!(s, "stop_tol = {:?}", v.stop_tol);
        let _ = writeln!(s, "resample = {}", v.resample);
        let _ = writeln!(s, "lattice_nodes = {}", v.lattice_nodes);
        let mode = match v.mode {
            EstimatorMode::SelfNormalized => "self_normalized",
            EstimatorMode::Direct => "direct",
        };
        let _ = writeln!(s, "mode = {mode}");
        match &v.bounds {
            BoundsSpec::Auto => {
                let _ = writeln!(s, "bounds = auto");
            }
            BoundsSpec::Explicit(b) => {
                let _ = writeln!(s, "bounds = explicit");
                for (k, x) in [
                    ("q_min", b.q_min),
                    ("q_max", b.q_max),
                    ("mass_min", b.mass_min),
                    ("mass_max", b.mass_max),
                    ("rho_min", b.rho_min),
                    ("rho_max", b.rho_max),
                ] {
                    let _ = writeln!(s, "{k} = {x:?}");
                }
            }
        }
        let _ = writeln!(s, "residual_paths = {}", v.residual_paths);

        let f = &self.fdd;
        let _ = writeln!(s, "\n[fdd]");
        for (side, p) in [("start", &f.start), ("end", &f.end)] {
            match p {
                PotentialSpec::Atom(x) => {
                    let _ = writeln!(s, "{side} = atom");
                    let _ = writeln!(s, "{side}_point = {}", nums(x));
                }
                PotentialSpec::File(path) => {
                    let _ = writeln!(s, "{side} = file");
                    let _ = writeln!(s, "{side}_file = {}", path.display());
                }
            }
        }
        let _ = writeln!(s, "replications = {}", f.replications);
        let _ = writeln!(s, "normalizer_paths = {}", f.normalizer_paths);
        if let Some(e) = f.epsilon {
            let _ = writeln!(s, "epsilon = {e:?}");
        }
        let _ = writeln!(s, "steps = {}", f.steps);
        if let Some(t) = f.t_star {
            let _ = writeln!(s, "t_star = {t:?}");
        }
        match f.functional {
            FunctionalSpec::Unit => {
                let _ = writeln!(s, "functional = unit");
            }
            FunctionalSpec::Moment { time, axis, power } => {
                let _ = writeln!(s, "functional = moment");
                let _ = writeln!(s, "time = {time:?}\naxis = {axis}\npower = {power}");
            }
            FunctionalSpec::Indicator { time, axis, lo, hi } => {
                let _ = writeln!(s, "functional = indicator");
                let _ = writeln!(
                    s,
                    "time = {time:?}\naxis = {axis}\nlo = {lo:?}\nhi = {hi:?}"
                );
            }
        }

        let st = &self.study;
        let _ = writeln!(s, "\n[study]");
        let kind = match st.kind {
            StudyKind::Rate => "rate",
            StudyKind::Reverse => "reverse",
            StudyKind::Density => "fr_density",
        };
        let _ = writeln!(s, "kind = {kind}");
        let sizes: Vec<String> = st.sizes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "sizes = {}", sizes.join(" "));
        let _ = writeln!(s, "seeds = {}", st.seeds);
        let _ = writeln!(s, "point = {}", nums(&st.point));

        let o = &self.oracle;
        let _ = writeln!(s, "\n[oracle]");
        if let Some(p) = &o.problem {
            let _ = writeln!(s, "problem = {}", p.display());
        }
        if let Some(p) = &o.compare {
            let _ = writeln!(s, "compare = {}", p.display());
        }
        let _ = writeln!(s, "tol = {:?}", o.tol);
        let _ = writeln!(s, "max_iter = {}", o.max_iter);

        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.output.dir.display());
        if let Some(l) = &self.output.log {
            let _ = writeln!(s, "log = {}", l.display());
        }
        s
    }
}
