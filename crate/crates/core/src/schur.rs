//! Dense generalized Schur complements built on pseudo-inverses.
//!
//! For a square `B`, the pseudo-inverse maps `w` in the range of `B` to the
//! unique `v` with `B v = w` and `v` orthogonal to the null space of `B`. With
//! an index split `(M, N)` whose coordinate subspaces are orthogonal and
//! together contain `N(B)^perp`, the Schur complement
//! `sigma = B_NN - B_NM (B_MM)^-1 B_MN` yields a two-stage solve and explicit
//! formulas for the four blocks of `B^-1`.
//!
//! This module is dense and meant for desk-scale problems and as a reference
//! for the sparse solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Default relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Relative residual above which a right-hand side is declared inconsistent.
pub const RANGE_TOL: f64 = 1e-8;
/// Tolerance for the numerical subspace-containment and block checks.
pub const SPLIT_TOL: f64 = 1e-8;
/// Largest dense order accepted by this module.
pub const MAX_ORDER: usize = 2000;

fn check_square(b: &DenseMatrix) -> Result<()> {
    if !b.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if b.nrows() > MAX_ORDER {
        return Err(Error::Dimension(format!(
            "dense order {} exceeds {MAX_ORDER}",
            b.nrows()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Disjoint index lists `M` and `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSplit {
    m_set: Vec<usize>,
    n_set: Vec<usize>,
}

impl IndexSplit {
    pub fn new(m_set: Vec<usize>, n_set: Vec<usize>, order: usize) -> Result<Self> {
        let mut seen = vec![false; order];
        for &i in m_set.iter().chain(&n_set) {
            if i >= order {
                return Err(Error::Range { index: i, limit: order });
            }
            if seen[i] {
                return Err(Error::Config(format!("index {i} appears twice in the split")));
            }
            seen[i] = true;
        }
        Ok(Self { m_set, n_set })
    }

    pub fn m_set(&self) -> &[usize] {
        &self.m_set
    }

    pub fn n_set(&self) -> &[usize] {
        &self.n_set
    }
}

fn submatrix(b: &DenseMatrix, rows: &[usize], cols: &[usize]) -> DenseMatrix {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| b[(rows[i], cols[j])])
}

fn subvector(w: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| w[i]))
}

/// Singular triplets above the rank threshold, taken from the symmetric
/// eigendecomposition of `[[0, B], [B^T, 0]]`, whose positive eigenvalues are
/// the singular values of `B` with eigenvectors `(u; v) / sqrt(2)`.
#[derive(Debug, Clone)]
struct Svd {
    order: usize,
    /// Left singular vectors as columns.
    u: DenseMatrix,
    s: Vec<f64>,
    /// Right singular vectors as columns.
    v: DenseMatrix,
}

impl Svd {
    fn new(b: &DenseMatrix, tol: f64) -> Self {
        let n = b.nrows();
        let mut aug = DMatrix::zeros(2 * n, 2 * n);
        aug.view_mut((0, n), (n, n)).copy_from(b);
        aug.view_mut((n, 0), (n, n)).copy_from(&b.transpose());
        let eig = aug.symmetric_eigen();
        let smax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
        let threshold = tol * smax;
        let mut kept: Vec<usize> = (0..2 * n)
            .filter(|&i| eig.eigenvalues[i] > threshold && eig.eigenvalues[i] > 0.0)
            .collect();
        kept.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let half = |col: usize, top: bool| {
            let start = if top { 0 } else { n };
            let part = eig.eigenvectors.column(col).rows(start, n).into_owned();
            let norm = part.norm();
            part / norm
        };
        let mut u = DMatrix::zeros(n, kept.len());
        let mut v = DMatrix::zeros(n, kept.len());
        for (c, &i) in kept.iter().enumerate() {
            u.set_column(c, &half(i, true));
            v.set_column(c, &half(i, false));
        }
        Self {
            order: n,
            u,
            s: kept.iter().map(|&i| eig.eigenvalues[i]).collect(),
            v,
        }
    }

    fn rank(&self) -> usize {
        self.s.len()
    }

    /// Orthonormal basis of `N(B)^perp`.
    fn range_vectors(&self) -> &DenseMatrix {
        &self.v
    }

    /// Orthonormal basis of `N(B)`.
    fn null_vectors(&self) -> DenseMatrix {
        let n = self.order;
        let proj = DMatrix::identity(n, n) - &self.v * self.v.transpose();
        let eig = proj.symmetric_eigen();
        let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        DMatrix::from_fn(n, cols.len(), |r, c| eig.eigenvectors[(r, cols[c])])
    }

    fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let coef = DVector::from_iterator(
            self.rank(),
            self.s.iter().enumerate().map(|(i, s)| self.u.column(i).dot(w) / s),
        );
        &self.v * coef
    }

    fn matrix(&self) -> DenseMatrix {
        let mut scaled = self.v.clone();
        for (i, s) in self.s.iter().enumerate() {
            scaled.column_mut(i).scale_mut(1.0 / s);
        }
        scaled * self.u.transpose()
    }
}

/// Orthonormal basis of the null space of `B` and the projectors
/// `a_B` (onto `N(B)^perp`) and `j_B = I - a_B`.
#[derive(Debug, Clone)]
pub struct NullSpaceBasis {
    /// Basis vectors as columns.
    pub basis: DenseMatrix,
    pub a_b: DenseMatrix,
    pub j_b: DenseMatrix,
    pub rank: usize,
}

/// Null space of a square matrix; singular values at or below
/// `tol * sigma_max` count as zero.
pub fn null_space(b: &DenseMatrix, tol: f64) -> Result<NullSpaceBasis> {
    check_square(b)?;
    let svd = Svd::new(b, tol);
    let basis = svd.null_vectors();
    let n = b.nrows();
    let j_b = &basis * basis.transpose();
    let a_b = DMatrix::identity(n, n) - &j_b;
    Ok(NullSpaceBasis {
        basis,
        a_b,
        j_b,
        rank: svd.rank(),
    })
}

fn relative_residual(b: &DenseMatrix, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let r = (b * v - w).norm();
    let scale = w.norm();
    if scale == 0.0 {
        r
    } else {
        r / scale
    }
}

/// The unique `v` with `B v = w` orthogonal to `N(B)`. Fails when `w` is not
/// in the range of `B`.
pub fn pseudo_inverse_apply(b: &DenseMatrix, w: &DVector<f64>) -> Result<DVector<f64>> {
    check_square(b)?;
    if w.len() != b.nrows() {
        return Err(Error::Dimension(format!(
            "rhs has {} entries, matrix order {}",
            w.len(),
            b.nrows()
        )));
    }
    let v = Svd::new(b, RANK_TOL).apply(w);
    let residual = relative_residual(b, &v, w);
    if residual > RANGE_TOL {
        return Err(Error::InconsistentRhs { residual });
    }
    Ok(v)
}

/// Explicit pseudo-inverse matrix.
pub fn pseudo_inverse(b: &DenseMatrix) -> Result<DenseMatrix> {
    check_square(b)?;
    Ok(Svd::new(b, RANK_TOL).matrix())
}

/// Checks that `W(M) + W(N)` contains `N(B)^perp`. Returns the defect.
fn check_split(b: &DenseMatrix, split: &IndexSplit) -> Result<()> {
    let n = b.nrows();
    let mut inside = vec![false; n];
    for &i in split.m_set.iter().chain(&split.n_set) {
        if i >= n {
            return Err(Error::Range { index: i, limit: n });
        }
        inside[i] = true;
    }
    let svd = Svd::new(b, RANK_TOL);
    let range = svd.range_vectors();
    let mut defect = 0.0f64;
    for c in 0..range.ncols() {
        let outside: f64 = (0..n)
            .filter(|&r| !inside[r])
            .map(|r| range[(r, c)].powi(2))
            .sum::<f64>()
            .sqrt();
        defect = defect.max(outside);
    }
    if defect > SPLIT_TOL {
        return Err(Error::InvalidSplit { defect });
    }
    Ok(())
}

/// Generalized Schur complement `B_NN - B_NM (B_MM)^-1 B_MN`.
pub fn schur_sigma(b: &DenseMatrix, split: &IndexSplit) -> Result<DenseMatrix> {
    check_square(b)?;
    check_split(b, split)?;
    Ok(sigma_unchecked(
        b,
        split,
        &Svd::new(&submatrix(b, &split.m_set, &split.m_set), RANK_TOL).matrix(),
    ))
}

fn sigma_unchecked(b: &DenseMatrix, split: &IndexSplit, b_mm_pinv: &DenseMatrix) -> DenseMatrix {
    let (m, nn) = (&split.m_set, &split.n_set);
    submatrix(b, nn, nn) - submatrix(b, nn, m) * b_mm_pinv * submatrix(b, m, nn)
}

/// Two-stage solve: interface values from the Schur complement, then the
/// `M` values by back-substitution; the result is projected onto
/// `N(B)^perp` and checked against `B v = w`.
pub fn solve_via_schur(b: &DenseMatrix, w: &DVector<f64>, split: &IndexSplit) -> Result<DVector<f64>> {
    check_square(b)?;
    if w.len() != b.nrows() {
        return Err(Error::Dimension(format!(
            "rhs has {} entries, matrix order {}",
            w.len(),
            b.nrows()
        )));
    }
    check_split(b, split)?;
    let (m, nn) = (&split.m_set, &split.n_set);
    let b_mm = Svd::new(&submatrix(b, m, m), RANK_TOL);
    let b_mm_pinv = b_mm.matrix();
    let sigma = sigma_unchecked(b, split, &b_mm_pinv);

    let (w_m, w_n) = (subvector(w, m), subvector(w, nn));
    let rhs_n = &w_n - submatrix(b, nn, m) * b_mm.apply(&w_m);
    let v_n = Svd::new(&sigma, RANK_TOL).apply(&rhs_n);
    let v_m = b_mm.apply(&(&w_m - submatrix(b, m, nn) * &v_n));

    let mut v = DVector::zeros(b.nrows());
    for (k, &i) in m.iter().enumerate() {
        v[i] = v_m[k];
    }
    for (k, &i) in nn.iter().enumerate() {
        v[i] = v_n[k];
    }
    let ns = null_space(b, RANK_TOL)?;
    let v = &ns.a_b * v;
    let residual = relative_residual(b, &v, w);
    if residual > RANGE_TOL {
        return Err(Error::InconsistentRhs { residual });
    }
    Ok(v)
}

/// The four blocks of `B^-1` with respect to `(M, N)`.
#[derive(Debug, Clone)]
pub struct BlockInverse {
    pub mm: DenseMatrix,
    pub mn: DenseMatrix,
    pub nm: DenseMatrix,
    pub nn: DenseMatrix,
    split: IndexSplit,
}

impl BlockInverse {
    /// Scatters the blocks into an `order x order` matrix (zero outside `M + N`).
    pub fn assemble(&self, order: usize) -> DenseMatrix {
        let mut out = DMatrix::zeros(order, order);
        let (m, n) = (&self.split.m_set, &self.split.n_set);
        for (blk, rows, cols) in [(&self.mm, m, m), (&self.mn, m, n), (&self.nm, n, m), (&self.nn, n, n)] {
            for (r, &i) in rows.iter().enumerate() {
                for (c, &j) in cols.iter().enumerate() {
                    out[(i, j)] = blk[(r, c)];
                }
            }
        }
        out
    }
}

/// Block formulas for `B^-1` in terms of `(B_MM)^-1` and `sigma^-1`. The
/// assembled result is checked against the pseudo-inverse of `B`.
pub fn block_pseudo_inverse(b: &DenseMatrix, split: &IndexSplit) -> Result<BlockInverse> {
    check_square(b)?;
    check_split(b, split)?;
    let (m, nn) = (&split.m_set, &split.n_set);
    let b_mm_pinv = Svd::new(&submatrix(b, m, m), RANK_TOL).matrix();
    let sigma = sigma_unchecked(b, split, &b_mm_pinv);
    let sigma_svd = Svd::new(&sigma, RANK_TOL);
    let sigma_pinv = sigma_svd.matrix();

    let b_mn = submatrix(b, m, nn);
    let b_nm = submatrix(b, nn, m);
    let left = &b_mm_pinv * &b_mn; // (B_MM)^-1 B_MN
    let right = &b_nm * &b_mm_pinv; // B_NM (B_MM)^-1
    let blocks = BlockInverse {
        mm: &b_mm_pinv + &left * &sigma_pinv * &right,
        mn: -(&left * &sigma_pinv),
        nm: -(&sigma_pinv * &right),
        nn: sigma_pinv,
        split: split.clone(),
    };

    let reference = pseudo_inverse(b)?;
    let scale = reference.amax().max(f64::MIN_POSITIVE);
    let defect = (blocks.assemble(b.nrows()) - reference).amax() / scale;
    if defect > SPLIT_TOL {
        return Err(Error::SingularSchur {
            rank: sigma_svd.rank(),
            size: nn.len(),
            defect,
        });
    }
    Ok(blocks)
}
