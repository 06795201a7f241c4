use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use edvs_core::dual::interior_cross_couplings;
use edvs_core::io::{load_matrix, load_partition, load_vector, save_matrix, save_partition, save_vector};
use edvs_core::{
    build_derived_space, generate_box_partition, generate_poisson_1d, generate_poisson_2d, solve_dvs,
    validate_locality, DecompositionMap, Error, Krylov, NodeId, OriginalMatrix, OriginalVector, PrimalRule,
    ProblemInstance, SolveConfig,
};
use serde_json::{json, Value};

/// Derived-vector-space domain decomposition solver.
#[derive(Parser, Debug)]
#[command(name = "edvs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a Poisson test problem as `<out>.mtx`, `<out>.part` and `<out>.rhs`.
    Generate(GenerateArgs),
    /// Solve a problem and print a JSON report.
    Solve(SolveArgs),
    /// Check a partition against a matrix.
    Verify(VerifyArgs),
    /// Print a summary of a matrix and, optionally, a partition.
    Info(InfoArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Kind {
    Poisson1d,
    Poisson2d,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    kind: Kind,
    /// Number of nodes (poisson1d).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Subdomain count: `N` for poisson1d, `PxQ` (or `N` for `NxN`) for poisson2d.
    #[arg(long, default_value = "1")]
    boxes: String,
    /// Output prefix.
    #[arg(long)]
    out: PathBuf,
    /// Write the unit vector `e_k` as right-hand side instead of ones.
    #[arg(long)]
    rhs_delta: Option<usize>,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    /// Unknowns per node.
    #[arg(long, default_value_t = 1)]
    block_dim: usize,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Right-hand side file; ones when omitted.
    #[arg(long)]
    rhs: Option<PathBuf>,
    /// Use the unit vector `e_k` as right-hand side.
    #[arg(long, conflicts_with = "rhs")]
    rhs_delta: Option<usize>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Defaults to ten times the number of interface nodes.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value = "cg")]
    krylov: String,
    /// Worker threads, or `auto`.
    #[arg(long, env = "EDVS_THREADS", default_value = "auto")]
    threads: String,
    /// Also run a direct solve and report the relative difference.
    #[arg(long)]
    compare_direct: bool,
    /// `none`, `minmult=K` or `file=PATH` (one node id per line).
    #[arg(long, default_value = "none")]
    primal: String,
    /// Write the solution here, one value per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    block_dim: usize,
}

/// Top-level keys of the solve report.
const REPORT_KEYS: [&str; 12] = [
    "status",
    "converged",
    "iterations",
    "residual_history",
    "final_original_residual",
    "duality_defect",
    "continuity_defect",
    "relative_error_vs_direct",
    "continuity_projections",
    "problem",
    "timings",
    "config",
];

fn main() -> ExitCode {
    // usage errors exit with 1; 2 is reserved for non-convergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(args) => generate(&args),
        Command::Solve(args) => solve(&args),
        Command::Verify(args) => verify(&args),
        Command::Info(args) => info(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_boxes(spec: &str, two_d: bool) -> anyhow::Result<(usize, usize)> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .with_context(|| format!("bad box count {s:?}"))
    };
    match spec.split_once(['x', 'X']) {
        Some((a, b)) if two_d => Ok((parse(a)?, parse(b)?)),
        Some(_) => bail!("poisson1d takes a single box count, got {spec:?}"),
        None if two_d => {
            let n = parse(spec)?;
            Ok((n, n))
        }
        None => Ok((parse(spec)?, 1)),
    }
}

fn generate(args: &GenerateArgs) -> anyhow::Result<ExitCode> {
    let (matrix, dm) = match args.kind {
        Kind::Poisson1d => {
            let n = args.n.context("poisson1d needs --n")?;
            let (boxes, _) = parse_boxes(&args.boxes, false)?;
            (generate_poisson_1d(n)?, generate_box_partition(n, 1, boxes, 1)?)
        }
        Kind::Poisson2d => {
            let nx = args.nx.context("poisson2d needs --nx")?;
            let ny = args.ny.unwrap_or(nx);
            let (px, py) = parse_boxes(&args.boxes, true)?;
            (generate_poisson_2d(nx, ny)?, generate_box_partition(nx, ny, px, py)?)
        }
    };
    let n = matrix.n_nodes();
    let rhs = match args.rhs_delta {
        Some(k) => OriginalVector::unit(n, 1, k)?,
        None => OriginalVector::ones(n, 1),
    };
    let path = |ext: &str| {
        let mut p = args.out.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    save_matrix(&matrix, path(".mtx"))?;
    save_partition(&dm, path(".part"))?;
    save_vector(rhs.values(), path(".rhs"))?;
    eprintln!(
        "wrote {} nodes, {} subdomains to {}.{{mtx,part,rhs}}",
        n,
        dm.n_subdomains(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_problem(args: &ProblemArgs) -> anyhow::Result<(OriginalMatrix, DecompositionMap)> {
    let matrix = load_matrix(&args.matrix)?.with_block_dim(args.block_dim)?;
    let dm = load_partition(&args.partition, matrix.n_nodes())?;
    Ok((matrix, dm))
}

fn parse_primal(spec: &str) -> anyhow::Result<PrimalRule> {
    if spec == "none" {
        return Ok(PrimalRule::None);
    }
    if let Some(k) = spec.strip_prefix("minmult=") {
        return Ok(PrimalRule::MinMultiplicity(
            k.parse().with_context(|| format!("bad multiplicity {k:?}"))?,
        ));
    }
    if let Some(path) = spec.strip_prefix("file=") {
        let text = fs::read_to_string(path).with_context(|| format!("reading primal list {path}"))?;
        let nodes = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| l.parse().map(NodeId).with_context(|| format!("bad node id {l:?}")))
            .collect::<anyhow::Result<_>>()?;
        return Ok(PrimalRule::Explicit(nodes));
    }
    bail!("--primal must be none, minmult=K or file=PATH, got {spec:?}")
}

fn parse_threads(spec: &str) -> anyhow::Result<Option<usize>> {
    if spec == "auto" {
        return Ok(None);
    }
    let n: usize = spec.parse().with_context(|| format!("bad thread count {spec:?}"))?;
    if n == 0 {
        bail!("--threads must be at least 1");
    }
    Ok(Some(n))
}

fn solve(args: &SolveArgs) -> anyhow::Result<ExitCode> {
    let cfg = SolveConfig {
        tol: args.tol,
        max_iters: args.max_iters,
        krylov: args.krylov.parse::<Krylov>()?,
        threads: parse_threads(&args.threads)?,
        compare_direct: args.compare_direct,
        primal_rule: parse_primal(&args.primal)?,
    };
    cfg.validate()?;
    let (matrix, dm) = load_problem(&args.problem)?;
    let (n, d) = (matrix.n_nodes(), matrix.block_dim());
    let rhs = match (&args.rhs, args.rhs_delta) {
        (Some(path), _) => load_vector(path, d)?,
        (None, Some(k)) => OriginalVector::unit(n, d, k)?,
        (None, None) => OriginalVector::ones(n, d),
    };
    let problem = ProblemInstance::new(matrix, rhs, dm)?;

    match solve_dvs(&problem, &cfg) {
        Ok(solution) => {
            if let Some(out) = &args.out {
                save_vector(solution.u_hat.values(), out)?;
            }
            let mut report = serde_json::to_value(&solution.report)?;
            report["status"] = json!("converged");
            println!("{}", serde_json::to_string_pretty(&normalize(report))?);
            Ok(ExitCode::SUCCESS)
        }
        Err(e) if e.is_non_convergence() => {
            let Error::NonConvergence {
                iterations, history, ..
            } = e.root()
            else {
                unreachable!()
            };
            eprintln!("error: {e}");
            let mut report: BTreeMap<&str, Value> = REPORT_KEYS.iter().map(|&k| (k, Value::Null)).collect();
            report.insert("status", json!("not_converged"));
            report.insert("converged", json!(false));
            report.insert("iterations", json!(iterations));
            report.insert("residual_history", json!(history));
            let report = serde_json::to_value(report)?;
            println!("{}", serde_json::to_string_pretty(&normalize(report))?);
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

/// Restricts the top-level keys to `REPORT_KEYS`, filling gaps with null.
fn normalize(report: Value) -> Value {
    let Value::Object(mut map) = report else {
        return report;
    };
    let mut out = serde_json::Map::new();
    for key in REPORT_KEYS {
        out.insert(key.to_string(), map.remove(key).unwrap_or(Value::Null));
    }
    Value::Object(out)
}

fn format_histogram(hist: &BTreeMap<usize, usize>) -> String {
    let body: Vec<String> = hist.iter().map(|(m, c)| format!("{m}: {c}")).collect();
    format!("{{{}}}", body.join(", "))
}

fn verify(args: &VerifyArgs) -> anyhow::Result<ExitCode> {
    let matrix = load_matrix(&args.problem.matrix)?.with_block_dim(args.problem.block_dim)?;
    let dm = match load_partition(&args.problem.partition, matrix.n_nodes()) {
        Ok(dm) => dm,
        Err(e @ Error::Coverage { .. }) => {
            println!("partition=FAIL {e}");
            return Ok(ExitCode::from(1));
        }
        Err(e) => return Err(e.into()),
    };
    let ds = build_derived_space(&dm, &PrimalRule::None, matrix.block_dim())?;
    let locality = validate_locality(&matrix, &dm)?;
    println!(
        "N={} |X|={} interior={} interface={} locality={}",
        dm.n_nodes(),
        ds.len(),
        dm.interior().len(),
        dm.interface().len(),
        if locality.passed() { "PASS" } else { "FAIL" }
    );
    println!(
        "multiplicity histogram: {}",
        format_histogram(&dm.multiplicity_histogram())
    );
    if !locality.passed() {
        let pairs: Vec<String> = locality.violations.iter().map(|(p, q)| format!("({p},{q})")).collect();
        println!(
            "locality violations: {} first: {}",
            locality.n_violations,
            pairs.join(" ")
        );
        return Ok(ExitCode::from(1));
    }
    let cross = interior_cross_couplings(&matrix, &dm);
    if cross.is_empty() {
        println!("interior block: block-diagonal over {} subdomains", dm.n_subdomains());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("interior block: {} cross-subdomain couplings", cross.len());
        Ok(ExitCode::from(1))
    }
}

fn info(args: &InfoArgs) -> anyhow::Result<ExitCode> {
    let matrix = load_matrix(&args.matrix)?.with_block_dim(args.block_dim)?;
    let csr = matrix.csr();
    let (lower, upper) = csr.bandwidths();
    println!("matrix: {}", display(&args.matrix));
    println!(
        "  order={} nnz={} block_dim={} nodes={}",
        csr.n_rows(),
        csr.nnz(),
        matrix.block_dim(),
        matrix.n_nodes()
    );
    println!("  symmetric={} bandwidth=({lower},{upper})", matrix.is_symmetric());
    if let Some(path) = &args.partition {
        let dm = load_partition(path, matrix.n_nodes())?;
        println!("partition: {}", display(path));
        println!(
            "  subdomains={} interior={} interface={}",
            dm.n_subdomains(),
            dm.interior().len(),
            dm.interface().len()
        );
        for a in 0..dm.n_subdomains() {
            let nodes = dm.subdomain_nodes(edvs_core::SubdomainId(a));
            let interior = nodes.iter().filter(|&&p| dm.is_interior(p)).count();
            println!("  subdomain {a}: nodes={} interior={interior}", nodes.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}
