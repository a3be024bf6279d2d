//! On-disk formats: potential dumps, grid problems and result tables.

use std::fmt::Write as _;
use std::path::Path;

use sbfr_core::oracles::GridProblem;
use sbfr_core::{BoxRegion, Lattice, LatticeFunction};

use crate::run::RunError;

pub const POTENTIAL_HEADER: &str = "SBFR-POTENTIAL v1";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn bad(path: &Path, line: usize, msg: impl std::fmt::Display) -> RunError {
    RunError::Config(format!("{}:{line}: {msg}", path.display()))
}

pub fn write_potential(f: &LatticeFunction) -> String {
    let lattice = f.lattice();
    let region = lattice.region();
    let mut s = String::new();
    let _ = writeln!(s, "{POTENTIAL_HEADER}");
    let _ = writeln!(s, "dim {}", lattice.dim());
    for k in 0..lattice.dim() {
        let _ = writeln!(
            s,
            "box {} {} {}",
            num(region.lo()[k]),
            num(region.hi()[k]),
            lattice.counts()[k]
        );
    }
    for v in f.values() {
        let _ = writeln!(s, "{}", num(*v));
    }
    s
}

pub fn parse_potential(text: &str, path: &Path) -> Result<LatticeFunction, RunError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, POTENTIAL_HEADER)) => {}
        _ => {
            return Err(bad(
                path,
                1,
                format!("expected header '{POTENTIAL_HEADER}'"),
            ))
        }
    }
    let (line, dim_line) = lines
        .next()
        .ok_or_else(|| bad(path, 2, "missing 'dim' line"))?;
    let dim: usize = dim_line
        .strip_prefix("dim ")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| bad(path, line, "expected 'dim <d>'"))?;
    let (mut lo, mut hi, mut counts) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..dim {
        let (line, l) = lines
            .next()
            .ok_or_else(|| bad(path, line + 1, "missing 'box' line"))?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            ["box", a, b, n] => a
                .parse::<f64>()
                .ok()
                .zip(b.parse::<f64>().ok())
                .zip(n.parse::<usize>().ok()),
            _ => None,
        };
        let ((a, b), n) = parsed.ok_or_else(|| bad(path, line, "expected 'box <lo> <hi> <n>'"))?;
        lo.push(a);
        hi.push(b);
        counts.push(n);
    }
    let mut values = Vec::new();
    for (line, l) in lines {
        if l.is_empty() {
            continue;
        }
        values.push(
            l.parse::<f64>()
                .map_err(|e| bad(path, line, format!("invalid value '{l}': {e}")))?,
        );
    }
    let region = BoxRegion::new(lo, hi).map_err(|e| bad(path, 3, e))?;
    let lattice = Lattice::new(region, counts).map_err(|e| bad(path, 3, e))?;
    LatticeFunction::new(lattice, values)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

pub fn read_potential(path: &Path) -> Result<LatticeFunction, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    parse_potential(&text, path)
}

/// `block,row,col,value` with blocks `w0`, `wT`, `rho0`, `rhoT`, `kernel` and,
/// when node coordinates are known, `x0` and `xT` (`col` is the axis).
pub fn write_grid_problem(p: &GridProblem) -> String {
    let mut s = String::from("block,row,col,value\n");
    let mut vector = |name: &str, v: &[f64]| {
        for (i, x) in v.iter().enumerate() {
            let _ = writeln!(s, "{name},{i},0,{}", num(*x));
        }
    };
    vector("w0", &p.w0);
    vector("wT", &p.w_t);
    vector("rho0", &p.rho0);
    vector("rhoT", &p.rho_t);
    let nt = p.n_end();
    for (k, x) in p.kernel.iter().enumerate() {
        let _ = writeln!(s, "kernel,{},{},{}", k / nt, k % nt, num(*x));
    }
    if p.dim > 0 {
        for (name, nodes) in [("x0", &p.start_nodes), ("xT", &p.end_nodes)] {
            for (i, node) in nodes.chunks(p.dim).enumerate() {
                for (k, x) in node.iter().enumerate() {
                    let _ = writeln!(s, "{name},{i},{k},{}", num(*x));
                }
            }
        }
    }
    s
}

pub fn parse_grid_problem(text: &str, path: &Path) -> Result<GridProblem, RunError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "block,row,col,value" => {}
        _ => return Err(bad(path, 1, "expected header 'block,row,col,value'")),
    }
    let mut entries: Vec<(String, usize, usize, f64, usize)> = Vec::new();
    for (i, l) in lines {
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        let parsed = match f.as_slice() {
            [b, r, c, v] => r
                .parse::<usize>()
                .ok()
                .zip(c.parse::<usize>().ok())
                .zip(v.parse::<f64>().ok())
                .map(|((r, c), v)| (b.to_string(), r, c, v, i + 1)),
            _ => None,
        };
        entries.push(parsed.ok_or_else(|| bad(path, i + 1, format!("malformed row '{l}'")))?);
    }
    let rows_of = |block: &str| {
        entries
            .iter()
            .filter(|e| e.0 == block)
            .map(|e| e.1 + 1)
            .max()
            .unwrap_or(0)
    };
    let (n0, nt) = (rows_of("rho0"), rows_of("rhoT"));
    let dim = entries
        .iter()
        .filter(|e| e.0 == "x0" || e.0 == "xT")
        .map(|e| e.2 + 1)
        .max()
        .unwrap_or(0);
    let mut blocks: Vec<(&str, Vec<f64>, usize)> = vec![
        ("w0", vec![f64::NAN; n0], 1),
        ("wT", vec![f64::NAN; nt], 1),
        ("rho0", vec![f64::NAN; n0], 1),
        ("rhoT", vec![f64::NAN; nt], 1),
        ("kernel", vec![f64::NAN; n0 * nt], nt),
        ("x0", vec![f64::NAN; n0 * dim], dim),
        ("xT", vec![f64::NAN; nt * dim], dim),
    ];
    for (b, r, c, v, line) in &entries {
        let Some((_, data, cols)) = blocks.iter_mut().find(|(name, _, _)| name == b) else {
            return Err(bad(path, *line, format!("unknown block '{b}'")));
        };
        let k = r * *cols + c;
        if c >= cols || k >= data.len() {
            return Err(bad(
                path,
                *line,
                format!("index ({r}, {c}) out of range for block '{b}'"),
            ));
        }
        if !data[k].is_nan() {
            return Err(bad(
                path,
                *line,
                format!("duplicate entry ({r}, {c}) in block '{b}'"),
            ));
        }
        data[k] = *v;
    }
    for (name, data, _) in &blocks {
        let coordinates = *name == "x0" || *name == "xT";
        if data.iter().any(|x| x.is_nan()) && !(coordinates && dim == 0) {
            return Err(RunError::Config(format!(
                "{}: block '{name}' is incomplete",
                path.display()
            )));
        }
    }
    let mut take = |name: &str| {
        let k = blocks
            .iter()
            .position(|b| b.0 == name)
            .expect("known block");
        std::mem::take(&mut blocks[k].1)
    };
    let (w0, w_t, rho0, rho_t, kernel) = (
        take("w0"),
        take("wT"),
        take("rho0"),
        take("rhoT"),
        take("kernel"),
    );
    let (x0, x_t) = (take("x0"), take("xT"));
    let mut p = GridProblem::from_matrix(kernel, rho0, rho_t, w0, w_t)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    if dim > 0 {
        p.dim = dim;
        p.start_nodes = x0;
        p.end_nodes = x_t;
    }
    Ok(p)
}

pub fn read_grid_problem(path: &Path) -> Result<GridProblem, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    parse_grid_problem(&text, path)
}

/// Builds a CSV table from a header and rows of preformatted fields.
#[derive(Debug, Clone, Default)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            text: format!("{}\n", columns.join(",")),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub const RATE_COLUMNS: &[&str] = &[
    "N",
    "seed",
    "iterations",
    "dH_to_oracle",
    "sup_error",
    "kappa_hat",
    "bandwidth",
    "runtime_ms",
];
pub const REVERSE_COLUMNS: &[&str] = &[
    "function",
    "N",
    "seed",
    "estimate",
    "std_error",
    "runtime_ms",
];
pub const DENSITY_COLUMNS: &[&str] = &[
    "N",
    "seed",
    "estimate",
    "std_error",
    "se_flag",
    "epsilon",
    "runtime_ms",
];
pub const FDD_COLUMNS: &[&str] = &[
    "R",
    "seed",
    "estimate",
    "std_error",
    "se_flag",
    "c0T",
    "epsilon",
];
pub const TRACE_COLUMNS: &[&str] = &[
    "iteration",
    "increment",
    "l1_norm",
    "clamped",
    "straddle",
    "fallbacks",
];
pub const RESIDUAL_COLUMNS: &[&str] = &["marginal", "sup_rel", "mean_rel"];

/// Parses a CSV produced by [`Table`] into header and rows.
pub fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|h| h.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}
