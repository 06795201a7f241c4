//! The EDVS solve: interior blocks are factored per subdomain, the interface
//! problem is solved by a Krylov method on continuous derived vectors, and the
//! interior values follow by back-substitution.
//!
//! Every operator application is a set of independent per-subdomain tasks
//! followed by an exchange. Reductions are performed in a fixed order, so
//! results do not depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::derived::{
    build_derived_space, continuity_defect, derived_norm, duality_defect, inject, project_a, retract, weighted_dot,
    DerivedSpace, DerivedVector, NodeClass, PrimalRule,
};
use crate::dual::{exchange, split_by_subdomain, CONTINUITY_TOL};
use crate::error::{Error, Phase, Result, WithPhase};
use crate::factor::BandedLu;
use crate::problem::{
    validate_locality, DecompositionMap, NodeId, OriginalMatrix, OriginalVector, ProblemInstance, SubdomainId,
};
use crate::sparse::CsrMatrix;

/// Restart length of GMRES.
pub const GMRES_RESTART: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Krylov {
    #[default]
    Cg,
    Gmres,
}

impl fmt::Display for Krylov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Krylov::Cg => "cg",
            Krylov::Gmres => "gmres",
        })
    }
}

impl FromStr for Krylov {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cg" => Ok(Krylov::Cg),
            "gmres" => Ok(Krylov::Gmres),
            other => Err(Error::Config(format!("unknown krylov method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Relative residual target of the interface iteration.
    pub tol: f64,
    /// `None` means `10 * |interface nodes|` (at least 1).
    pub max_iters: Option<usize>,
    pub krylov: Krylov,
    /// `None` uses the rayon default.
    pub threads: Option<usize>,
    pub compare_direct: bool,
    pub primal_rule: PrimalRule,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: None,
            krylov: Krylov::Cg,
            threads: None,
            compare_direct: false,
            primal_rule: PrimalRule::None,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == Some(0) {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_max_iters(&self, n_interface: usize) -> usize {
        self.max_iters.unwrap_or((10 * n_interface).max(1))
    }
}

/// LU factorization of the interior-interior block of one subdomain.
#[derive(Debug, Clone)]
pub struct InteriorBlock {
    pub subdomain: SubdomainId,
    pub nodes: Vec<NodeId>,
    matrix: CsrMatrix,
    lu: BandedLu,
}

impl InteriorBlock {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.lu.solve(b)
    }
}

/// One factorization per subdomain, covering every interior node once.
#[derive(Debug, Clone)]
pub struct InteriorFactorization {
    blocks: Vec<InteriorBlock>,
}

impl InteriorFactorization {
    pub fn blocks(&self) -> &[InteriorBlock] {
        &self.blocks
    }
}

/// Factors the interior block of every subdomain concurrently.
pub fn factor_interior(matrix: &OriginalMatrix, dm: &DecompositionMap) -> Result<InteriorFactorization> {
    if matrix.n_nodes() != dm.n_nodes() {
        return Err(Error::Dimension(format!(
            "partition has {} nodes, matrix has {}",
            dm.n_nodes(),
            matrix.n_nodes()
        )));
    }
    let d = matrix.block_dim();
    let mut owned: Vec<Vec<NodeId>> = vec![Vec::new(); dm.n_subdomains()];
    for &p in dm.interior() {
        owned[dm.memberships(p)[0].0].push(p);
    }
    let blocks = owned
        .into_par_iter()
        .enumerate()
        .map(|(a, nodes)| {
            let dofs: Vec<usize> = nodes.iter().flat_map(|p| (0..d).map(move |c| p.0 * d + c)).collect();
            let block = matrix.csr().extract(&dofs, &dofs);
            let lu = BandedLu::factor(&block).map_err(|e| match e {
                Error::Singular { pivot } => Error::SingularBlock {
                    subdomain: SubdomainId(a),
                    pivot,
                    size: dofs.len(),
                },
                other => other,
            })?;
            Ok(InteriorBlock {
                subdomain: SubdomainId(a),
                nodes,
                matrix: block,
                lu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InteriorFactorization { blocks })
}

/// The dual right-hand side: the injection of `f_hat`.
pub fn assemble_dual_rhs(f_hat: &OriginalVector, ds: &DerivedSpace) -> Result<DerivedVector> {
    inject(f_hat, ds)
}

/// Couplings of one subdomain in the local numbering of its derived slice.
#[derive(Debug, Clone)]
struct LocalCoupling {
    /// First derived unknown of the slice.
    offset: usize,
    len: usize,
    interior: Vec<usize>,
    interface: Vec<usize>,
    /// `m(p)` for each interface unknown.
    weights: Vec<f64>,
    a_ig: CsrMatrix,
    a_gi: CsrMatrix,
    a_gg: CsrMatrix,
}

impl LocalCoupling {
    fn gather(&self, u: &[f64], local: &[usize]) -> Vec<f64> {
        local.iter().map(|&i| u[self.offset + i]).collect()
    }
}

/// Setup shared by all phases: derived space, factorization and local
/// couplings. Read-only once built.
#[derive(Debug, Clone)]
pub struct InterfaceSystem<'a> {
    ds: &'a DerivedSpace,
    factorization: InteriorFactorization,
    locals: Vec<LocalCoupling>,
    symmetric: bool,
    interface_dim: usize,
}

/// Outcome of the interface iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceSolve {
    pub u_gamma: DerivedVector,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Number of operator inputs that needed re-projection.
    pub projections: usize,
}

impl<'a> InterfaceSystem<'a> {
    pub fn new(matrix: &OriginalMatrix, dm: &DecompositionMap, ds: &'a DerivedSpace) -> Result<Self> {
        let factorization = factor_interior(matrix, dm).phase(Phase::Factor)?;
        Self::with_factorization(matrix, dm, ds, factorization)
    }

    pub fn with_factorization(
        matrix: &OriginalMatrix,
        dm: &DecompositionMap,
        ds: &'a DerivedSpace,
        factorization: InteriorFactorization,
    ) -> Result<Self> {
        if ds.block_dim() != matrix.block_dim() || ds.n_original() != matrix.n_nodes() {
            return Err(Error::Dimension("derived space does not match the matrix".into()));
        }
        let d = matrix.block_dim();
        let slices = split_by_subdomain(matrix, dm)?;
        let locals = slices
            .par_iter()
            .map(|s| {
                let range = ds.subdomain_range(s.subdomain);
                let (mut interior, mut interface, mut weights) = (Vec::new(), Vec::new(), Vec::new());
                for (i, &p) in s.local_nodes.iter().enumerate() {
                    let m = ds.multiplicity(p);
                    for c in 0..d {
                        if m == 1 {
                            interior.push(i * d + c);
                        } else {
                            interface.push(i * d + c);
                            weights.push(m as f64);
                        }
                    }
                }
                let a = &s.local_matrix;
                LocalCoupling {
                    offset: range.start * d,
                    len: range.len() * d,
                    a_ig: a.extract(&interior, &interface),
                    a_gi: a.extract(&interface, &interior),
                    a_gg: a.extract(&interface, &interface),
                    interior,
                    interface,
                    weights,
                }
            })
            .collect();
        Ok(Self {
            ds,
            factorization,
            locals,
            symmetric: matrix.is_symmetric(),
            interface_dim: dm.interface().len() * d,
        })
    }

    pub fn space(&self) -> &DerivedSpace {
        self.ds
    }

    pub fn factorization(&self) -> &InteriorFactorization {
        &self.factorization
    }

    /// Dimension of the continuous interface subspace.
    pub fn interface_dim(&self) -> usize {
        self.interface_dim
    }

    fn run_local<F>(&self, f: F) -> Result<DerivedVector>
    where
        F: Fn(&LocalCoupling, &InteriorBlock) -> Vec<f64> + Sync,
    {
        let partials: Vec<Option<Vec<f64>>> = self
            .locals
            .par_iter()
            .zip(self.factorization.blocks.par_iter())
            .map(|(loc, blk)| Some(f(loc, blk)))
            .collect();
        exchange(&partials, self.ds)
    }

    /// Interface right-hand side `a_hat (f_G - M_GI M_II^-1 f_I)` for the dual
    /// right-hand side `f`.
    pub fn interface_rhs(&self, f: &DerivedVector) -> Result<DerivedVector> {
        self.ds.check_derived(f)?;
        let f = f.values();
        self.run_local(|loc, blk| {
            let t = blk.solve(&loc.gather(f, &loc.interior));
            let y = loc.a_gi.mul_vec(&t);
            let mut out = vec![0.0; loc.len];
            for (k, &i) in loc.interface.iter().enumerate() {
                out[i] = f[loc.offset + i] - loc.weights[k] * y[k];
            }
            out
        })
    }

    /// Applies the interface Schur operator `a_hat S a_hat^-1`. Interior
    /// entries of the input are ignored and zero in the output. A
    /// discontinuous input is projected first; the flag reports whether that
    /// happened.
    pub fn apply_interface_operator(&self, v: &DerivedVector) -> Result<(DerivedVector, bool)> {
        self.ds.check_derived(v)?;
        let interface_only = self.interface_part(v);
        let projected = continuity_defect(&interface_only, self.ds)? > CONTINUITY_TOL;
        let v = if projected {
            project_a(&interface_only, self.ds)?
        } else {
            interface_only
        };
        let vals = v.values();
        let out = self.run_local(|loc, blk| {
            let vg = loc.gather(vals, &loc.interface);
            let t = blk.solve(&loc.a_ig.mul_vec(&vg));
            let mut y = loc.a_gg.mul_vec(&vg);
            let z = loc.a_gi.mul_vec(&t);
            let mut out = vec![0.0; loc.len];
            for (k, &i) in loc.interface.iter().enumerate() {
                y[k] -= z[k];
                out[i] = loc.weights[k] * y[k];
            }
            out
        })?;
        Ok((out, projected))
    }

    fn interface_part(&self, v: &DerivedVector) -> DerivedVector {
        let mut out = vec![0.0; v.len()];
        for loc in &self.locals {
            for &i in &loc.interface {
                out[loc.offset + i] = v.values()[loc.offset + i];
            }
        }
        DerivedVector::from_raw(out)
    }

    /// Solves the interface system `a_hat S a_hat^-1 u = g` with the
    /// constraint `j u = 0`.
    pub fn solve_interface(&self, g: &DerivedVector, cfg: &SolveConfig) -> Result<InterfaceSolve> {
        cfg.validate()?;
        if cfg.krylov == Krylov::Cg && !self.symmetric {
            return Err(Error::Config("cg requires a symmetric matrix; use gmres".into()));
        }
        self.ds.check_derived(g)?;
        let g = project_a(&self.interface_part(g), self.ds)?;
        let max_iters = cfg.resolved_max_iters(self.interface_dim / self.ds.block_dim().max(1));
        match cfg.krylov {
            Krylov::Cg => self.cg(&g, cfg.tol, max_iters),
            Krylov::Gmres => self.gmres(&g, cfg.tol, max_iters),
        }
    }

    fn dot(&self, u: &DerivedVector, v: &DerivedVector) -> f64 {
        weighted_dot(self.ds, u.values(), v.values())
    }

    /// Conjugate gradients with minimal-residual smoothing: the returned
    /// iterate is the point on the segment between the previous smoothed
    /// iterate and the current CG iterate with the smallest residual, so the
    /// recorded residuals never increase.
    fn cg(&self, g: &DerivedVector, tol: f64, max_iters: usize) -> Result<InterfaceSolve> {
        let ds = self.ds;
        let g_norm = derived_norm(g, ds);
        let mut x = DerivedVector::zeros(ds);
        if g_norm == 0.0 {
            return Ok(InterfaceSolve {
                u_gamma: x,
                iterations: 0,
                residual_history: vec![0.0],
                projections: 0,
            });
        }
        let mut history = vec![1.0];
        let mut projections = 0;
        let mut r = g.clone();
        let mut p = r.clone();
        let mut rr = self.dot(&r, &r);
        let (mut s, mut t) = (x.clone(), r.clone());
        for it in 1..=max_iters {
            let (q, flagged) = self.apply_interface_operator(&p)?;
            projections += usize::from(flagged);
            let pq = self.dot(&p, &q);
            if pq.is_nan() || pq <= 0.0 {
                return Err(Error::NonConvergence {
                    iterations: it - 1,
                    residual: *history.last().unwrap(),
                    history,
                });
            }
            let alpha = rr / pq;
            x.axpy(alpha, &p);
            r.axpy(-alpha, &q);
            x = project_a(&x, ds)?;
            r = project_a(&r, ds)?;

            let dr = r.sub(&t);
            let dd = self.dot(&dr, &dr);
            let eta = if dd > 0.0 { -self.dot(&t, &dr) / dd } else { 0.0 };
            s.axpy(eta, &x.sub(&s));
            t.axpy(eta, &dr);
            s = project_a(&s, ds)?;
            let rel = self.dot(&t, &t).sqrt() / g_norm;
            history.push(rel);
            if rel <= tol {
                return Ok(InterfaceSolve {
                    u_gamma: s,
                    iterations: it,
                    residual_history: history,
                    projections,
                });
            }
            let rr_new = self.dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            let mut next = r.clone();
            next.axpy(beta, &p);
            p = project_a(&next, ds)?;
        }
        Err(Error::NonConvergence {
            iterations: max_iters,
            residual: *history.last().unwrap(),
            history,
        })
    }

    fn gmres(&self, b: &DerivedVector, tol: f64, max_iters: usize) -> Result<InterfaceSolve> {
        let ds = self.ds;
        let b_norm = derived_norm(b, ds);
        let mut x = DerivedVector::zeros(ds);
        if b_norm == 0.0 {
            return Ok(InterfaceSolve {
                u_gamma: x,
                iterations: 0,
                residual_history: vec![0.0],
                projections: 0,
            });
        }
        let mut history = vec![1.0];
        let mut projections = 0;
        let mut total = 0;
        loop {
            let r = if total == 0 {
                b.clone()
            } else {
                let (ax, flagged) = self.apply_interface_operator(&x)?;
                projections += usize::from(flagged);
                project_a(&b.sub(&ax), ds)?
            };
            let beta = derived_norm(&r, ds);
            if beta / b_norm <= tol {
                return Ok(InterfaceSolve {
                    u_gamma: x,
                    iterations: total,
                    residual_history: history,
                    projections,
                });
            }
            let m = GMRES_RESTART;
            let mut basis = Vec::with_capacity(m + 1);
            let mut v0 = r;
            v0.scale(1.0 / beta);
            basis.push(v0);
            let mut h = vec![vec![0.0; m]; m + 1];
            let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
            let mut s = vec![0.0; m + 1];
            s[0] = beta;
            let mut k = 0;
            let mut done = false;
            while k < m && total < max_iters {
                let (w0, flagged) = self.apply_interface_operator(&basis[k])?;
                projections += usize::from(flagged);
                let mut w = project_a(&w0, ds)?;
                for (i, vi) in basis.iter().enumerate() {
                    h[i][k] = self.dot(&w, vi);
                    w.axpy(-h[i][k], vi);
                }
                let h_next = derived_norm(&w, ds);
                h[k + 1][k] = h_next;
                for i in 0..k {
                    let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                    h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                    h[i][k] = t;
                }
                let denom = h[k][k].hypot(h[k + 1][k]);
                if denom == 0.0 {
                    (cs[k], sn[k]) = (1.0, 0.0);
                } else {
                    (cs[k], sn[k]) = (h[k][k] / denom, h[k + 1][k] / denom);
                }
                h[k][k] = denom;
                h[k + 1][k] = 0.0;
                s[k + 1] = -sn[k] * s[k];
                s[k] *= cs[k];
                total += 1;
                k += 1;
                let rel = s[k].abs() / b_norm;
                history.push(rel);
                if rel <= tol || h_next == 0.0 {
                    done = true;
                    break;
                }
                w.scale(1.0 / h_next);
                basis.push(w);
            }
            // back-substitution for the least-squares coefficients
            let mut y = vec![0.0; k];
            for i in (0..k).rev() {
                let mut acc = s[i];
                for j in i + 1..k {
                    acc -= h[i][j] * y[j];
                }
                y[i] = if h[i][i] == 0.0 { 0.0 } else { acc / h[i][i] };
            }
            for (yi, vi) in y.iter().zip(&basis) {
                x.axpy(*yi, vi);
            }
            x = project_a(&x, ds)?;
            if done {
                return Ok(InterfaceSolve {
                    u_gamma: x,
                    iterations: total,
                    residual_history: history,
                    projections,
                });
            }
            if total >= max_iters {
                return Err(Error::NonConvergence {
                    iterations: total,
                    residual: *history.last().unwrap(),
                    history,
                });
            }
        }
    }

    /// Interior values `u_I = M_II^-1 (f_I - M_IG a_hat^-1 u_G)`, one block
    /// solve per subdomain. The result is zero on interface positions.
    pub fn back_substitute(&self, f: &DerivedVector, u_gamma: &DerivedVector) -> Result<DerivedVector> {
        self.ds.check_derived(f)?;
        self.ds.check_derived(u_gamma)?;
        let (f, ug) = (f.values(), u_gamma.values());
        let pieces: Vec<Vec<f64>> = self
            .locals
            .par_iter()
            .zip(self.factorization.blocks.par_iter())
            .map(|(loc, blk)| {
                let mut rhs = loc.gather(f, &loc.interior);
                loc.a_ig.mul_vec_add(
                    &loc.gather(ug, &loc.interface).iter().map(|v| -v).collect::<Vec<_>>(),
                    &mut rhs,
                );
                blk.solve(&rhs)
            })
            .collect();
        let mut out = vec![0.0; self.ds.n_dofs()];
        for (loc, piece) in self.locals.iter().zip(pieces) {
            for (&i, v) in loc.interior.iter().zip(piece) {
                out[loc.offset + i] = v;
            }
        }
        Ok(DerivedVector::from_raw(out))
    }
}

/// Direct solve of the original system by banded LU.
pub fn direct_solve(matrix: &OriginalMatrix, rhs: &OriginalVector) -> Result<OriginalVector> {
    if rhs.values().len() != matrix.n_dofs() {
        return Err(Error::Dimension(format!(
            "rhs has {} values, matrix has {} unknowns",
            rhs.values().len(),
            matrix.n_dofs()
        )));
    }
    let lu = BandedLu::factor(matrix.csr())?;
    OriginalVector::new(lu.solve(rhs.values()), matrix.block_dim())
}

fn relative_residual(matrix: &OriginalMatrix, u_hat: &OriginalVector, f_hat: &OriginalVector) -> f64 {
    let mu = matrix.mul_vec(u_hat);
    let r: f64 = mu
        .values()
        .iter()
        .zip(f_hat.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = f_hat.norm();
    if scale == 0.0 {
        r
    } else {
        r / scale
    }
}

fn relative_difference(u: &OriginalVector, reference: &OriginalVector) -> f64 {
    let diff: f64 = u
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = reference.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSummary {
    pub n_nodes: usize,
    pub block_dim: usize,
    pub n_subdomains: usize,
    pub n_derived: usize,
    pub n_interior: usize,
    pub n_interface: usize,
    pub n_primal: usize,
    pub n_dual: usize,
    pub interface_dim: usize,
    pub nnz: usize,
}

/// Wall-clock time per phase in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub setup_ms: f64,
    pub factor_ms: f64,
    pub rhs_ms: f64,
    pub interface_ms: f64,
    pub back_substitute_ms: f64,
    pub verify_ms: f64,
    pub direct_ms: Option<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub tol: f64,
    pub max_iters: usize,
    pub krylov: Krylov,
    pub threads: usize,
    pub compare_direct: bool,
    pub primal_rule: PrimalRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_original_residual: f64,
    pub duality_defect: f64,
    pub continuity_defect: f64,
    pub relative_error_vs_direct: Option<f64>,
    pub continuity_projections: usize,
    pub problem: ProblemSummary,
    pub timings: Timings,
    pub config: ConfigEcho,
}

/// Recomputed acceptance quantities of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verification {
    pub original_residual: f64,
    pub duality_defect: f64,
    pub continuity_defect: f64,
}

/// Recomputes the original residual, the duality defect between `u_hat` and
/// `u`, and the continuity defect of `u`, and stores them in `report`.
pub fn verify_solution(
    problem: &ProblemInstance,
    ds: &DerivedSpace,
    u_hat: &OriginalVector,
    u: &DerivedVector,
    report: &mut SolveReport,
) -> Result<Verification> {
    let v = Verification {
        original_residual: relative_residual(&problem.matrix, u_hat, &problem.rhs),
        duality_defect: duality_defect(u_hat, u, ds)?,
        continuity_defect: continuity_defect(u, ds)?,
    };
    report.final_original_residual = v.original_residual;
    report.duality_defect = v.duality_defect;
    report.continuity_defect = v.continuity_defect;
    Ok(v)
}

/// Result of [`solve_dvs`].
#[derive(Debug, Clone)]
pub struct DvsSolution {
    pub u_hat: OriginalVector,
    pub u: DerivedVector,
    pub space: DerivedSpace,
    pub report: SolveReport,
}

/// Runs the full pipeline on `problem`. Errors carry the phase they arose in.
pub fn solve_dvs(problem: &ProblemInstance, cfg: &SolveConfig) -> Result<DvsSolution> {
    cfg.validate().phase(Phase::Setup)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
        .phase(Phase::Setup)?;
    pool.install(|| solve_in_pool(problem, cfg, pool.current_num_threads()))
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn solve_in_pool(problem: &ProblemInstance, cfg: &SolveConfig, threads: usize) -> Result<DvsSolution> {
    let start = Instant::now();
    let mut timings = Timings::default();
    let (matrix, dm) = (&problem.matrix, &problem.decomposition);
    let d = matrix.block_dim();

    let t = Instant::now();
    if matrix.n_nodes() == 0 {
        return Err(Error::EmptyProblem("matrix has no nodes".into())).phase(Phase::Setup);
    }
    validate_locality(matrix, dm)
        .and_then(|r| r.into_result())
        .phase(Phase::Setup)?;
    let ds = build_derived_space(dm, &cfg.primal_rule, d).phase(Phase::Setup)?;
    timings.setup_ms = elapsed_ms(t);

    let t = Instant::now();
    let factorization = factor_interior(matrix, dm).phase(Phase::Factor)?;
    let system = InterfaceSystem::with_factorization(matrix, dm, &ds, factorization).phase(Phase::Factor)?;
    timings.factor_ms = elapsed_ms(t);

    let t = Instant::now();
    let f = assemble_dual_rhs(&problem.rhs, &ds).phase(Phase::Rhs)?;
    let g = system.interface_rhs(&f).phase(Phase::Rhs)?;
    timings.rhs_ms = elapsed_ms(t);

    let t = Instant::now();
    let interface = system.solve_interface(&g, cfg).phase(Phase::Interface)?;
    timings.interface_ms = elapsed_ms(t);

    let t = Instant::now();
    let u_i = system
        .back_substitute(&f, &interface.u_gamma)
        .phase(Phase::BackSubstitute)?;
    let u = u_i.add(&interface.u_gamma);
    let u_hat = retract(&u, &ds).phase(Phase::BackSubstitute)?;
    timings.back_substitute_ms = elapsed_ms(t);

    let n_interface = dm.interface().len();
    let classes = ds.classes();
    let mut report = SolveReport {
        converged: true,
        iterations: interface.iterations,
        residual_history: interface.residual_history,
        final_original_residual: f64::NAN,
        duality_defect: f64::NAN,
        continuity_defect: f64::NAN,
        relative_error_vs_direct: None,
        continuity_projections: interface.projections,
        problem: ProblemSummary {
            n_nodes: matrix.n_nodes(),
            block_dim: d,
            n_subdomains: dm.n_subdomains(),
            n_derived: ds.len(),
            n_interior: dm.interior().len(),
            n_interface,
            n_primal: classes.iter().filter(|&&c| c == NodeClass::Primal).count(),
            n_dual: classes.iter().filter(|&&c| c == NodeClass::Dual).count(),
            interface_dim: system.interface_dim(),
            nnz: matrix.nnz(),
        },
        timings: Timings::default(),
        config: ConfigEcho {
            tol: cfg.tol,
            max_iters: cfg.resolved_max_iters(n_interface),
            krylov: cfg.krylov,
            threads,
            compare_direct: cfg.compare_direct,
            primal_rule: cfg.primal_rule.clone(),
        },
    };

    let t = Instant::now();
    let v = verify_solution(problem, &ds, &u_hat, &u, &mut report).phase(Phase::Verify)?;
    timings.verify_ms = elapsed_ms(t);
    let acceptance = (10.0 * cfg.tol).max(1e-9);
    if v.original_residual.is_nan() || v.original_residual > acceptance {
        report.converged = false;
        return Err(Error::NonConvergence {
            iterations: report.iterations,
            residual: v.original_residual,
            history: report.residual_history,
        })
        .phase(Phase::Verify);
    }

    if cfg.compare_direct {
        let t = Instant::now();
        let direct = direct_solve(matrix, &problem.rhs).phase(Phase::Direct)?;
        report.relative_error_vs_direct = Some(relative_difference(&u_hat, &direct));
        timings.direct_ms = Some(elapsed_ms(t));
    }
    timings.total_ms = elapsed_ms(start);
    report.timings = timings;
    Ok(DvsSolution {
        u_hat,
        u,
        space: ds,
        report,
    })
}
