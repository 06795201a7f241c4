//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::io::Write;
use std::process::Command;
use std::time::Instant;

use edvs_core::dual::interior_cross_couplings;
use edvs_core::schur::{block_pseudo_inverse, pseudo_inverse_apply, schur_sigma, solve_via_schur, IndexSplit};
use edvs_core::{
    build_derived_space, generate_box_partition, generate_poisson_1d, generate_poisson_2d, inject,
    inner_product_derived, project_a, project_j, retract, solve_dvs, validate_locality, Block, ContinuityPolicy,
    DecompositionMap, DerivedSpace, DerivedVector, DualOperator, OriginalVector, PrimalRule, ProblemInstance,
    SolveConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dense_solve(p: &ProblemInstance) -> Vec<f64> {
    let a = p.matrix.csr().to_dense();
    a.lu()
        .solve(&DVector::from_column_slice(p.rhs.values()))
        .unwrap()
        .as_slice()
        .to_vec()
}

fn equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = Vec::new();
    for n in [5, 17, 101] {
        for boxes in 2..=8usize.min(n - 1) {
            cases.push(ProblemInstance::poisson_1d(n, boxes).map_err(|e| e.to_string())?);
        }
    }
    for n in [5, 9, 33] {
        for b in [2, 4] {
            cases.push(ProblemInstance::poisson_2d(n, n, b, b).map_err(|e| e.to_string())?);
        }
    }
    let count = cases.len();
    let mut worst = 0.0f64;
    for p in cases {
        let rhs = OriginalVector::from_scalars(random_vec(&mut rng, p.matrix.n_nodes()));
        let p = p.with_rhs(rhs).map_err(|e| e.to_string())?;
        let sol = solve_dvs(&p, &SolveConfig::default()).map_err(|e| format!("{:?}: {e}", p.metadata))?;
        let reference = dense_solve(&p);
        let err = diff_norm(sol.u_hat.values(), &reference) / norm(&reference);
        ensure(err <= 1e-8, || format!("{:?}: relative error {err:.2e}", p.metadata))?;
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("{count} problems, max relative error {worst:.2e}, {secs:.2} s"))
}

fn closed_form() -> Check {
    let n = 5;
    // inverse of tridiag(-1, 2, -1): G[i][j] = min(i+1, j+1) * (n - max(i, j)) / (n + 1)
    let k = 2;
    let expect: Vec<f64> = (0..n)
        .map(|i| ((i.min(k) + 1) * (n - i.max(k))) as f64 / (n + 1) as f64)
        .collect();
    ensure(expect == [0.5, 1.0, 1.5, 1.0, 0.5], || {
        format!("oracle gave {expect:?}")
    })?;

    let p = ProblemInstance::poisson_1d(n, 2)
        .and_then(|p| p.with_rhs(OriginalVector::unit(n, 1, k)?))
        .map_err(|e| e.to_string())?;
    let sol = solve_dvs(&p, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let err = diff_norm(sol.u_hat.values(), &expect);
    ensure(err <= 1e-10, || format!("solution {:?}", sol.u_hat.values()))?;

    let dense = p.matrix.csr().to_dense();
    let split = IndexSplit::new(vec![0, 1, 3, 4], vec![2], n).map_err(|e| e.to_string())?;
    let sigma = schur_sigma(&dense, &split).map_err(|e| e.to_string())?[(0, 0)];
    ensure((sigma - 2.0 / 3.0).abs() <= 1e-12, || format!("sigma = {sigma}"))?;
    let u_gamma = 1.0 / sigma;
    ensure((u_gamma - 1.5).abs() <= 1e-12, || format!("u_gamma = {u_gamma}"))?;
    ensure((sol.u_hat.values()[2] - 1.5).abs() <= 1e-10, || {
        "interface value".into()
    })?;
    Ok(format!("error {err:.1e}, sigma {sigma:.15}, u_gamma {u_gamma:.15}"))
}

/// Random memberships over `e` subdomains: each node joins a nonempty subset.
fn random_memberships(rng: &mut ChaCha8Rng, n: usize, e: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| loop {
            let m: Vec<usize> = (0..e).filter(|_| rng.random_bool(0.4)).collect();
            if !m.is_empty() {
                break m;
            }
        })
        .collect()
}

fn invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut decompositions: Vec<Vec<Vec<usize>>> = vec![
        vec![vec![0], vec![0], vec![0, 1], vec![1], vec![1]],
        generate_box_partition(9, 9, 2, 2).unwrap().pairs_as_memberships(),
        generate_box_partition(17, 1, 4, 1).unwrap().pairs_as_memberships(),
        generate_box_partition(7, 5, 3, 2).unwrap().pairs_as_memberships(),
    ];
    for (n, e) in [(12, 3), (20, 5), (30, 4), (8, 6)] {
        decompositions.push(random_memberships(&mut rng, n, e));
    }
    let spaces: Vec<(Vec<Vec<usize>>, DerivedSpace)> = decompositions
        .into_iter()
        .map(|mem| {
            let dm = DecompositionMap::from_memberships(mem.clone()).unwrap();
            let ds = build_derived_space(&dm, &PrimalRule::None, 1).unwrap();
            (mem, ds)
        })
        .collect();

    let oracle_ip = |mem: &[Vec<usize>], ds: &DerivedSpace, u: &[f64], v: &[f64]| -> f64 {
        ds.nodes()
            .iter()
            .enumerate()
            .map(|(k, dn)| u[k] * v[k] / mem[dn.node.0].len() as f64)
            .sum()
    };
    let trials = 1000;
    let mut worst = [0.0f64; 4];
    for t in 0..trials {
        let (mem, ds) = &spaces[t % spaces.len()];
        let len = ds.n_dofs();
        let u = DerivedVector::from_values(ds, random_vec(&mut rng, len)).unwrap();
        let v = DerivedVector::from_values(ds, random_vec(&mut rng, len)).unwrap();
        let scale = 1.0 + u.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));

        // a u from group averages computed here
        let mut avg = vec![0.0; len];
        for (k, dn) in ds.nodes().iter().enumerate() {
            let group: Vec<usize> = (0..len).filter(|&i| ds.nodes()[i].node == dn.node).collect();
            avg[k] = group.iter().map(|&i| u.values()[i]).sum::<f64>() / group.len() as f64;
        }
        let au = project_a(&u, ds).unwrap();
        let ju = project_j(&u, ds).unwrap();
        ensure(diff_norm(au.values(), &avg) <= 1e-14 * scale, || {
            format!("trial {t}: a u is not the average")
        })?;
        let aau = project_a(&au, ds).unwrap();
        let jju = project_j(&ju, ds).unwrap();
        let idem = diff_norm(aau.values(), au.values()).max(diff_norm(jju.values(), ju.values()));
        ensure(idem <= 1e-14 * scale, || format!("trial {t}: idempotence {idem:.2e}"))?;
        let sum = diff_norm(au.add(&ju).values(), u.values());
        ensure(sum <= 1e-15 * scale, || format!("trial {t}: a + j {sum:.2e}"))?;

        let jv = project_j(&v, ds).unwrap();
        let nu = oracle_ip(mem, ds, u.values(), u.values()).sqrt();
        let nv = oracle_ip(mem, ds, v.values(), v.values()).sqrt();
        let orth = oracle_ip(mem, ds, au.values(), jv.values()).abs() / (nu * nv);
        ensure(orth <= 1e-12, || format!("trial {t}: orthogonality {orth:.2e}"))?;
        let lib = inner_product_derived(&u, &v, ds).unwrap();
        let oracle = oracle_ip(mem, ds, u.values(), v.values());
        ensure((lib - oracle).abs() <= 1e-13 * nu * nv, || {
            format!("trial {t}: inner product")
        })?;

        let n = ds.n_original();
        let x = OriginalVector::from_scalars(random_vec(&mut rng, n));
        let y = OriginalVector::from_scalars(random_vec(&mut rng, n));
        let (ax, ay) = (inject(&x, ds).unwrap(), inject(&y, ds).unwrap());
        let plain: f64 = x.values().iter().zip(y.values()).map(|(a, b)| a * b).sum();
        let iso = (oracle_ip(mem, ds, ax.values(), ay.values()) - plain).abs() / (x.norm() * y.norm());
        ensure(iso <= 1e-12, || format!("trial {t}: isometry {iso:.2e}"))?;
        let back = retract(&ax, ds).unwrap();
        let inv = diff_norm(back.values(), x.values()) / (1.0 + x.max_abs());
        ensure(inv <= 1e-14, || format!("trial {t}: retract(inject) {inv:.2e}"))?;

        for (w, val) in worst.iter_mut().zip([idem / scale, orth, iso, inv]) {
            *w = w.max(val);
        }
    }
    Ok(format!(
        "{trials} trials over {} decompositions; idempotence {:.1e}, orthogonality {:.1e}, isometry {:.1e}, inverse {:.1e}",
        spaces.len(),
        worst[0],
        worst[1],
        worst[2],
        worst[3]
    ))
}

fn test_problems() -> Vec<ProblemInstance> {
    vec![
        ProblemInstance::poisson_1d(5, 2).unwrap(),
        ProblemInstance::poisson_1d(101, 8).unwrap(),
        ProblemInstance::poisson_2d(5, 5, 2, 2).unwrap(),
        ProblemInstance::poisson_2d(9, 9, 2, 2).unwrap(),
        ProblemInstance::poisson_2d(17, 17, 4, 4).unwrap(),
        ProblemInstance::poisson_2d(12, 7, 3, 2).unwrap(),
    ]
}

fn dual_fidelity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let problems = test_problems();
    let (mut dual_worst, mut block_worst) = (0.0f64, 0.0f64);
    for p in &problems {
        let ds = build_derived_space(&p.decomposition, &PrimalRule::None, 1).unwrap();
        let op = DualOperator::new(&p.matrix, &p.decomposition, &ds).map_err(|e| e.to_string())?;
        let dense = p.matrix.csr().to_dense();
        for _ in 0..100 {
            let x = random_vec(&mut rng, p.matrix.n_nodes());
            let u = inject(&OriginalVector::from_scalars(x.clone()), &ds).unwrap();
            let y = op.apply_dual(&u, ContinuityPolicy::Strict).map_err(|e| e.to_string())?;
            let mx = &dense * DVector::from_vec(x);
            let expect: Vec<f64> = ds.nodes().iter().map(|dn| mx[dn.node.0]).collect();
            let rel = diff_norm(y.values(), &expect) / mx.norm();
            ensure(rel <= 1e-12, || format!("{:?}: duality {rel:.2e}", p.metadata))?;
            dual_worst = dual_worst.max(rel);

            let (ui, ug) = (op.restrict(&u, false), op.restrict(&u, true));
            let add = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<_>>();
            let top = add(
                op.apply_block(Block::II, &ui).unwrap(),
                op.apply_block(Block::IGamma, &ug).unwrap(),
            );
            let bottom = add(
                op.apply_block(Block::GammaI, &ui).unwrap(),
                op.apply_block(Block::GammaGamma, &ug).unwrap(),
            );
            let rel = diff_norm(op.combine(&top, &bottom).values(), y.values()) / norm(y.values());
            ensure(rel <= 1e-12, || format!("{:?}: block reassembly {rel:.2e}", p.metadata))?;
            block_worst = block_worst.max(rel);
        }
    }
    Ok(format!(
        "{} problems x 100 vectors; duality {dual_worst:.1e}, reassembly {block_worst:.1e}",
        problems.len()
    ))
}

/// Symmetric `Q diag(lambda) Q^T` with the last `corank` eigenvalues zero.
fn spectral(rng: &mut ChaCha8Rng, n: usize, corank: usize, definite: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let lambda = DVector::from_fn(n, |i, _| {
        if i >= n - corank {
            0.0
        } else {
            let mag = rng.random_range(0.5..2.0);
            if definite || rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        }
    });
    let b = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    ((&b + b.transpose()) * 0.5, q)
}

fn random_split(rng: &mut ChaCha8Rng, n: usize) -> IndexSplit {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = rng.random_range(1..n);
    let (mut m, mut rest) = (idx[..cut].to_vec(), idx[cut..].to_vec());
    m.sort_unstable();
    rest.sort_unstable();
    IndexSplit::new(m, rest, n).unwrap()
}

fn pseudo_inverse_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..200 {
        let n = rng.random_range(4..=30);
        let corank = trial % 4;
        let (b, q) = spectral(&mut rng, n, corank, false);
        let w = &b * DVector::from_vec(random_vec(&mut rng, n));
        let v = pseudo_inverse_apply(&b, &w).map_err(|e| format!("trial {trial}: {e}"))?;
        let range = (&b * &v - &w).norm() / w.norm();
        ensure(range <= 1e-10, || format!("trial {trial}: B v != w ({range:.2e})"))?;
        let null = (q.columns(n - corank, corank).transpose() * &v).norm() / v.norm().max(1.0);
        ensure(null <= 1e-10, || format!("trial {trial}: null component {null:.2e}"))?;
    }
    for trial in 0..100 {
        let n = rng.random_range(4..=30);
        let (b, _) = spectral(&mut rng, n, 0, trial % 2 == 0);
        let split = random_split(&mut rng, n);
        let blocks = block_pseudo_inverse(&b, &split).map_err(|e| format!("assembly {trial}: {e}"))?;
        let inv = b.clone().try_inverse().ok_or("oracle inverse failed")?;
        let err = (blocks.assemble(n) - &inv).amax() / inv.amax();
        ensure(err <= 1e-10, || format!("assembly {trial}: {err:.2e}"))?;
    }
    for trial in 0..200 {
        let n = rng.random_range(4..=30);
        let (b, _) = spectral(&mut rng, n, trial % 4, true);
        let split = random_split(&mut rng, n);
        let w = &b * DVector::from_vec(random_vec(&mut rng, n));
        let v = solve_via_schur(&b, &w, &split).map_err(|e| format!("two-stage {trial}: {e}"))?;
        let reference = pseudo_inverse_apply(&b, &w).unwrap();
        let err = (&v - &reference).norm() / reference.norm().max(1.0);
        ensure(err <= 1e-10, || format!("two-stage {trial}: {err:.2e}"))?;
    }
    Ok("200 pseudo-inverse, 100 block-assembly, 200 two-stage trials".into())
}

fn block_diagonality() -> Check {
    let mut checked = 0;
    let mut grids: Vec<(usize, usize, usize, usize)> = Vec::new();
    for n in [5, 17, 40, 101] {
        for b in 1..=8usize.min(n - 1) {
            grids.push((n, 1, b, 1));
        }
    }
    for (nx, ny) in [(5, 5), (9, 9), (12, 7), (33, 33)] {
        for (px, py) in [(1, 1), (2, 2), (3, 2), (4, 4)] {
            grids.push((nx, ny, px, py));
        }
    }
    for (nx, ny, px, py) in grids {
        let a = if ny == 1 {
            generate_poisson_1d(nx)
        } else {
            generate_poisson_2d(nx, ny)
        }
        .unwrap();
        let dm = match generate_box_partition(nx, ny, px, py) {
            Ok(dm) => dm,
            Err(_) => continue,
        };
        if !validate_locality(&a, &dm).unwrap().passed() {
            continue;
        }
        let cross = interior_cross_couplings(&a, &dm);
        ensure(cross.is_empty(), || {
            format!("{nx}x{ny} / {px}x{py}: {} couplings", cross.len())
        })?;
        // pattern scan: interior-interior entries stay within one subdomain
        for (i, j, _) in a.csr().iter() {
            let (p, q) = (edvs_core::NodeId(i), edvs_core::NodeId(j));
            if dm.is_interior(p) && dm.is_interior(q) {
                ensure(dm.memberships(p) == dm.memberships(q), || format!("entry ({i},{j})"))?;
            }
        }
        checked += 1;
    }
    Ok(format!("{checked} generated problems"))
}

fn cg_termination() -> Check {
    let p = ProblemInstance::poisson_2d(9, 9, 2, 2).map_err(|e| e.to_string())?;
    let sol = solve_dvs(&p, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let dim = p.decomposition.interface().len();
    let last = *sol.report.residual_history.last().unwrap();
    ensure(last <= 1e-10, || format!("final residual {last:.2e}"))?;
    ensure(sol.report.iterations <= dim + 5, || {
        format!("{} iterations > {}", sol.report.iterations, dim + 5)
    })?;
    Ok(format!(
        "{} iterations, interface dimension {dim}, residual {last:.1e}",
        sol.report.iterations
    ))
}

fn run_cli(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_edvs"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("edvs {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    run_cli(&[
        "generate",
        "poisson2d",
        "--nx",
        "33",
        "--ny",
        "33",
        "--boxes",
        "4x4",
        "--out",
        &path("p"),
    ])?;
    let (mtx, part) = (path("p.mtx"), path("p.part"));
    let mut histories = Vec::new();
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let sol = path(&format!("u{threads}.txt"));
        let out = run_cli(&[
            "solve",
            "--matrix",
            &mtx,
            "--partition",
            &part,
            "--threads",
            threads,
            "--out",
            &sol,
        ])?;
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
        histories.push(report["residual_history"].clone());
        files.push(std::fs::read(&sol).map_err(|e| e.to_string())?);
    }
    ensure(histories[0] == histories[1], || "residual histories differ".into())?;
    ensure(files[0] == files[1], || "solution files differ".into())?;
    let iters = histories[0].as_array().map_or(0, |h| h.len() - 1);
    Ok(format!(
        "{iters} iterations, {} byte solution files identical",
        files[0].len()
    ))
}

trait MembershipLists {
    fn pairs_as_memberships(&self) -> Vec<Vec<usize>>;
}

impl MembershipLists for DecompositionMap {
    fn pairs_as_memberships(&self) -> Vec<Vec<usize>> {
        (0..self.n_nodes())
            .map(|p| self.memberships(edvs_core::NodeId(p)).iter().map(|a| a.0).collect())
            .collect()
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 direct-solve equivalence", equivalence),
        ("2 closed-form 1D solution", closed_form),
        ("3 derived-space invariants", invariants),
        ("4 dual-operator fidelity", dual_fidelity),
        ("5 pseudo-inverse and Schur suite", pseudo_inverse_suite),
        ("6 interior block-diagonality", block_diagonality),
        ("7 cg finite termination", cg_termination),
        ("8 thread-count determinism", determinism),
    ];
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for (name, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => writeln!(out, "criterion {name}: PASS ({detail}; {ms} ms)").unwrap(),
            Err(why) => {
                failed += 1;
                writeln!(out, "criterion {name}: FAIL ({why})").unwrap();
            }
        }
    }
    writeln!(out, "acceptance: {}/8 passed", 8 - failed).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
