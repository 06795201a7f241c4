use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const KEYS: [&str; 12] = [
    "config",
    "continuity_defect",
    "continuity_projections",
    "converged",
    "duality_defect",
    "final_original_residual",
    "iterations",
    "problem",
    "relative_error_vs_direct",
    "residual_history",
    "status",
    "timings",
];

fn edvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edvs"))
        .args(args)
        .env_remove("EDVS_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a problem in a fresh directory and returns it with the file prefix.
fn generate(args: &[&str]) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("p");
    let mut full = vec!["generate"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", s(&prefix)]);
    let out = edvs(&full);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (dir, prefix)
}

fn file(prefix: &Path, ext: &str) -> String {
    format!("{}.{ext}", prefix.display())
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn keys(v: &Value) -> BTreeSet<&str> {
    v.as_object().unwrap().keys().map(String::as_str).collect()
}

#[test]
fn solves_the_1d_delta_problem() {
    let (dir, p) = generate(&["poisson1d", "--n", "5", "--boxes", "2", "--rhs-delta", "2"]);
    let sol = dir.path().join("u.txt");
    let out = edvs(&[
        "solve",
        "--matrix",
        &file(&p, "mtx"),
        "--partition",
        &file(&p, "part"),
        "--rhs",
        &file(&p, "rhs"),
        "--out",
        s(&sol),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(keys(&r), KEYS.into_iter().collect());
    assert_eq!(r["status"], "converged");
    assert_eq!(r["problem"]["n_derived"], 6);
    assert_eq!(r["problem"]["interface_dim"], 1);
    let u: Vec<f64> = fs::read_to_string(&sol)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    for (a, b) in u.iter().zip([0.5, 1.0, 1.5, 1.0, 0.5]) {
        assert!((a - b).abs() <= 1e-10, "{u:?}");
    }
}

#[test]
fn rhs_delta_flag_matches_rhs_file() {
    let (_dir, p) = generate(&["poisson1d", "--n", "9", "--boxes", "3", "--rhs-delta", "4"]);
    let base = ["solve", "--matrix", &file(&p, "mtx"), "--partition", &file(&p, "part")].map(String::from);
    let run = |extra: &[&str]| {
        let mut args: Vec<&str> = base.iter().map(String::as_str).collect();
        args.extend_from_slice(extra);
        report(&edvs(&args))["residual_history"].clone()
    };
    assert_eq!(run(&["--rhs", &file(&p, "rhs")]), run(&["--rhs-delta", "4"]));
}

#[test]
fn compare_direct_reports_error() {
    let (_dir, p) = generate(&["poisson2d", "--nx", "9", "--ny", "9", "--boxes", "2x2"]);
    let out = edvs(&[
        "solve",
        "--matrix",
        &file(&p, "mtx"),
        "--partition",
        &file(&p, "part"),
        "--compare-direct",
        "--krylov",
        "gmres",
        "--primal",
        "minmult=4",
    ]);
    assert!(out.status.success());
    let r = report(&out);
    assert!(r["relative_error_vs_direct"].as_f64().unwrap() <= 1e-9);
    assert_eq!(r["config"]["krylov"], "gmres");
    assert_eq!(r["problem"]["n_primal"], 4);
}

#[test]
fn primal_file_is_read() {
    let (dir, p) = generate(&["poisson2d", "--nx", "5", "--ny", "5", "--boxes", "2x2"]);
    let list = dir.path().join("primal.txt");
    fs::write(&list, "# corner\n12\n").unwrap();
    let spec = format!("file={}", list.display());
    let out = edvs(&[
        "solve",
        "--matrix",
        &file(&p, "mtx"),
        "--partition",
        &file(&p, "part"),
        "--primal",
        &spec,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&out)["problem"]["n_primal"], 4);

    // node 0 is interior
    fs::write(&list, "0\n").unwrap();
    let out = edvs(&[
        "solve",
        "--matrix",
        &file(&p, "mtx"),
        "--partition",
        &file(&p, "part"),
        "--primal",
        &spec,
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn non_convergence_exits_with_2() {
    let (_dir, p) = generate(&["poisson2d", "--nx", "17", "--ny", "17", "--boxes", "4x4"]);
    let out = edvs(&[
        "solve",
        "--matrix",
        &file(&p, "mtx"),
        "--partition",
        &file(&p, "part"),
        "--max-iters",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let r = report(&out);
    assert_eq!(keys(&r), KEYS.into_iter().collect());
    assert_eq!(r["status"], "not_converged");
    assert_eq!(r["converged"], false);
    assert_eq!(r["iterations"], 2);
    assert_eq!(r["residual_history"].as_array().unwrap().len(), 3);
    assert!(r["timings"].is_null());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no convergence"));
}

#[test]
fn bad_inputs_exit_with_1() {
    let (dir, p) = generate(&["poisson1d", "--n", "5", "--boxes", "2"]);
    let (mtx, part) = (file(&p, "mtx"), file(&p, "part"));
    let missing = dir.path().join("missing.mtx");
    for args in [
        vec!["solve", "--matrix", s(&missing), "--partition", &part],
        vec!["solve", "--matrix", &mtx, "--partition", &part, "--tol", "0"],
        vec!["solve", "--matrix", &mtx, "--partition", &part, "--bogus"],
        vec!["solve", "--matrix", &mtx],
        vec!["solve", "--matrix", &mtx, "--partition", &part, "--threads", "0"],
        vec!["solve", "--matrix", &mtx, "--partition", &part, "--krylov", "bicg"],
        vec!["solve", "--matrix", &mtx, "--partition", &part, "--primal", "some"],
    ] {
        let out = edvs(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(out.stdout.is_empty());
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"), "{args:?}");
    }
}

#[test]
fn non_local_partition_is_rejected() {
    let (dir, p) = generate(&["poisson1d", "--n", "5", "--boxes", "2"]);
    let part = dir.path().join("bad.part");
    fs::write(&part, "0 0\n1 0\n2 1\n3 1\n4 1\n").unwrap();
    let out = edvs(&["verify", "--matrix", &file(&p, "mtx"), "--partition", s(&part)]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("locality=FAIL"), "{text}");
    assert!(text.contains("(1,2)"), "{text}");

    let out = edvs(&["solve", "--matrix", &file(&p, "mtx"), "--partition", s(&part)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("setup"));
}

#[test]
fn verify_prints_counts() {
    let (_dir, p) = generate(&["poisson1d", "--n", "5", "--boxes", "2"]);
    let out = edvs(&["verify", "--matrix", &file(&p, "mtx"), "--partition", &file(&p, "part")]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("N=5 |X|=6 interior=4 interface=1 locality=PASS"));
    assert_eq!(lines.next(), Some("multiplicity histogram: {1: 4, 2: 1}"));
    assert_eq!(lines.next(), Some("interior block: block-diagonal over 2 subdomains"));
}

#[test]
fn verify_histogram_2d() {
    let (_dir, p) = generate(&["poisson2d", "--nx", "5", "--ny", "5", "--boxes", "2x2"]);
    let out = edvs(&["verify", "--matrix", &file(&p, "mtx"), "--partition", &file(&p, "part")]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("N=25 |X|=36 interior=16 interface=9 locality=PASS"),
        "{text}"
    );
    assert!(text.contains("{1: 16, 2: 8, 4: 1}"), "{text}");
}

#[test]
fn uncovered_node_fails_verify() {
    let (dir, p) = generate(&["poisson1d", "--n", "5", "--boxes", "2"]);
    let part = dir.path().join("gap.part");
    fs::write(&part, "0 0\n1 0\n2 0\n2 1\n4 1\n").unwrap();
    let out = edvs(&["verify", "--matrix", &file(&p, "mtx"), "--partition", s(&part)]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL") && text.contains('3'), "{text}");
}

#[test]
fn generated_files_round_trip() {
    let (_dir, p) = generate(&["poisson2d", "--nx", "4", "--ny", "3", "--boxes", "2x1"]);
    let mtx = fs::read_to_string(file(&p, "mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate real"));
    let part = fs::read_to_string(file(&p, "part")).unwrap();
    assert!(part.starts_with("# node subdomain"));
    let rhs = fs::read_to_string(file(&p, "rhs")).unwrap();
    assert_eq!(rhs.lines().filter(|l| !l.starts_with('#')).count(), 12);
    let out = edvs(&["info", "--matrix", &file(&p, "mtx"), "--partition", &file(&p, "part")]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("order=12"), "{text}");
    assert!(text.contains("subdomains=2"), "{text}");
}

#[test]
fn threads_env_var_is_honoured() {
    let (_dir, p) = generate(&["poisson2d", "--nx", "9", "--ny", "9", "--boxes", "3x3"]);
    let out = Command::new(env!("CARGO_BIN_EXE_edvs"))
        .args(["solve", "--matrix", &file(&p, "mtx"), "--partition", &file(&p, "part")])
        .env("EDVS_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(report(&out)["config"]["threads"], 3);
}
