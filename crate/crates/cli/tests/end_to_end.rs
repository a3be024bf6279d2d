use std::path::Path;
use std::process::{Command, Output};

use sbfr_cli::formats::{parse_csv, read_potential, RATE_COLUMNS};
use sbfr_core::hilbert::hilbert_distance_values;

const FIXTURE: &str = "\
seed = 3
[model]
kind = brownian
[marginals]
start = polynomial
start_coeffs = 0.6 0.8
end = polynomial
end_coeffs = 1.4 -0.8
";

fn sbfr(sub: &str, config: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sbfr"));
    cmd.arg(sub).arg("--config").arg(config);
    match threads {
        Some(t) => cmd.env("SBFR_THREADS", t),
        None => cmd.env_remove("SBFR_THREADS"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, command: &str, extra: &str) -> std::path::PathBuf {
    let out = dir.join(format!("out_{name}"));
    let text = format!(
        "command = {command}\n{FIXTURE}{extra}\n[output]\ndir = {}\n",
        out.display()
    );
    let path = dir.join(format!("{name}.cfg"));
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_agrees_with_the_grid_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let solve = write_config(dir.path(), "solve", "solve", "[solver]\nn = 4000\n");
    let o = sbfr("solve", &solve, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out_solve");
    for f in [
        "g_hat.pot",
        "nu0.pot",
        "nuT.pot",
        "trace.csv",
        "residuals.csv",
        "run.jsonl",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let g_hat = read_potential(&out.join("g_hat.pot")).unwrap();
    assert!(std::fs::read_to_string(out.join("g_hat.pot"))
        .unwrap()
        .starts_with("SBFR-POTENTIAL v1\ndim 1\nbox "));

    let oracle = write_config(dir.path(), "oracle", "oracle", "");
    let o = sbfr("oracle", &oracle, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let g_star = read_potential(&dir.path().join("out_oracle/g_star.pot")).unwrap();
    let d = hilbert_distance_values(g_hat.values(), g_star.values()).unwrap();
    assert!(d < 0.5, "d_H(g_hat, g*) = {d}");

    let (header, rows) = parse_csv(&std::fs::read_to_string(out.join("residuals.csv")).unwrap());
    assert_eq!(header, ["marginal", "sup_rel", "mean_rel"]);
    for row in rows {
        let mean: f64 = row[2].parse().unwrap();
        assert!(mean < 0.2, "mean relative residual {mean}");
    }

    let log = std::fs::read_to_string(out.join("run.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["seed"], 3);
    assert!(first["version"].is_string() && first["threads"].is_number());
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["exit_code"], 0);
}

#[test]
fn exported_problem_reimports_to_the_same_solution() {
    let dir = tempfile::tempdir().unwrap();
    let first = write_config(dir.path(), "a", "oracle", "[solver]\nlattice_nodes = 12\n");
    assert!(sbfr("oracle", &first, None).status.success());
    let problem = dir.path().join("out_a/problem.csv");
    let second = write_config(
        dir.path(),
        "b",
        "oracle",
        &format!("[oracle]\nproblem = {}\n", problem.display()),
    );
    let o = sbfr("oracle", &second, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read_to_string(dir.path().join("out_a/oracle.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("out_b/oracle.csv")).unwrap();
    let (_, ra) = parse_csv(&a);
    let (_, rb) = parse_csv(&b);
    for (x, y) in ra.iter().zip(&rb) {
        let (u, v): (f64, f64) = (x[2].parse().unwrap(), y[2].parse().unwrap());
        assert!((u - v).abs() <= 1e-12 * u.abs(), "{x:?} vs {y:?}");
    }
}

#[test]
fn rate_study_emits_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "study",
        "study",
        "[study]\nkind = rate\nsizes = 200 400\nseeds = 2\n",
    );
    let o = sbfr("study", &cfg, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) =
        parse_csv(&std::fs::read_to_string(dir.path().join("out_study/study.csv")).unwrap());
    assert_eq!(header, RATE_COLUMNS);
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert_eq!(row.len(), RATE_COLUMNS.len());
        assert!(row.iter().skip(2).all(|v| v.parse::<f64>().is_ok()));
    }
    assert_eq!(
        rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(),
        ["200", "200", "400", "400"]
    );
}

#[test]
fn single_replication_reports_flagged_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "fdd",
        "fdd",
        "[fdd]\nreplications = 1\nnormalizer_paths = 10\n",
    );
    let o = sbfr("fdd", &cfg, None);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) =
        parse_csv(&std::fs::read_to_string(dir.path().join("out_fdd/fdd.csv")).unwrap());
    assert_eq!(
        header,
        [
            "R",
            "seed",
            "estimate",
            "std_error",
            "se_flag",
            "c0T",
            "epsilon"
        ]
    );
    assert_eq!(rows[0][0], "1");
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][4], "1");
}

#[test]
fn configuration_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let dup = dir.path().join("dup.cfg");
    std::fs::write(&dup, "command = solve\n[model]\ndim = 1\ndim = 1\n").unwrap();
    let o = sbfr("solve", &dup, None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let empty = dir.path().join("empty.cfg");
    std::fs::write(&empty, "").unwrap();
    let o = sbfr("solve", &empty, None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing command"));

    let solve = write_config(dir.path(), "s", "solve", "");
    assert_eq!(sbfr("fdd", &solve, None).status.code(), Some(2));
    assert_eq!(
        sbfr("solve", &dir.path().join("absent.cfg"), None)
            .status
            .code(),
        Some(2)
    );
    assert_eq!(sbfr("solve", &solve, Some("zero")).status.code(), Some(2));

    let missing = write_config(dir.path(), "m", "solve", "");
    let text = std::fs::read_to_string(&missing).unwrap().replace(
        "end = polynomial\nend_coeffs = 1.4 -0.8\n",
        "end = lattice\nend_file = nowhere.pot\n",
    );
    std::fs::write(&missing, text).unwrap();
    let o = sbfr("solve", &missing, None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.pot"));
}

#[test]
fn non_convergence_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "o",
        "oracle",
        "[oracle]\nmax_iter = 1\ntol = 1e-15\n",
    );
    let o = sbfr("oracle", &cfg, None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("out_o/run.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["exit_code"], 1);
}
