//! Dual matrices: the derived-space operator `Q = a_hat Q_hat a_hat^-1`
//! induced by an original matrix `Q_hat`, applied matrix-free from
//! per-subdomain slices of `Q_hat`.
//!
//! Each stored entry of `Q_hat` is assigned to one subdomain shared by its row
//! and column node (the lowest such index), so the slices sum to `Q_hat`.
//! Applying `Q` to a continuous derived vector multiplies every slice by the
//! subdomain's local copy of the vector and then runs an exchange that
//! averages contributions over each descendant group.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::derived::{continuity_defect, project_a, DerivedSpace, DerivedVector};
use crate::error::{Error, Result};
use crate::problem::{DecompositionMap, NodeId, OriginalMatrix, SubdomainId};
use crate::sparse::CsrMatrix;

/// Relative continuity defect above which an input is not treated as continuous.
pub const CONTINUITY_TOL: f64 = 1e-12;

/// Size cap (in unknowns) for the explicit dense reference matrices.
pub const DENSE_REFERENCE_LIMIT: usize = 2000;

/// The entries of the original matrix assigned to one subdomain, in local
/// numbering: local unknown `i * d + c` is component `c` of `local_nodes[i]`.
#[derive(Debug, Clone)]
pub struct SubdomainSlice {
    pub subdomain: SubdomainId,
    pub local_nodes: Vec<NodeId>,
    pub local_matrix: CsrMatrix,
}

/// Splits `matrix` into per-subdomain slices. Entry `(p, q)` goes to the
/// lowest-index subdomain containing both `p` and `q`.
pub fn split_by_subdomain(matrix: &OriginalMatrix, dm: &DecompositionMap) -> Result<Vec<SubdomainSlice>> {
    if matrix.n_nodes() != dm.n_nodes() {
        return Err(Error::Dimension(format!(
            "partition has {} nodes, matrix has {}",
            dm.n_nodes(),
            matrix.n_nodes()
        )));
    }
    let d = matrix.block_dim();
    let e = dm.n_subdomains();
    let local_nodes: Vec<Vec<NodeId>> = (0..e).map(|a| dm.subdomain_nodes(SubdomainId(a))).collect();
    // local index of node p inside each of its subdomains, aligned with memberships
    let mut local_index: Vec<Vec<usize>> = vec![Vec::new(); dm.n_nodes()];
    for nodes in &local_nodes {
        for (i, p) in nodes.iter().enumerate() {
            local_index[p.0].push(i);
        }
    }
    let local_of = |p: NodeId, alpha: SubdomainId| -> usize {
        let pos = dm.memberships(p).binary_search(&alpha).expect("membership");
        local_index[p.0][pos]
    };

    let mut triplets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); e];
    let mut violations = Vec::new();
    let mut n_violations = 0;
    for (i, j, v) in matrix.csr().iter() {
        let (p, q) = (NodeId(i / d), NodeId(j / d));
        match dm.lowest_common_subdomain(p, q) {
            Some(alpha) => {
                let li = local_of(p, alpha) * d + i % d;
                let lj = local_of(q, alpha) * d + j % d;
                triplets[alpha.0].push((li, lj, v));
            }
            None => {
                n_violations += 1;
                if violations.len() < crate::problem::LocalityReport::MAX_LISTED && violations.last() != Some(&(p, q)) {
                    violations.push((p, q));
                }
            }
        }
    }
    if n_violations > 0 {
        return Err(Error::Locality {
            count: n_violations,
            pairs: violations,
        });
    }
    local_nodes
        .into_iter()
        .zip(triplets)
        .enumerate()
        .map(|(a, (nodes, trips))| {
            let n_local = nodes.len() * d;
            Ok(SubdomainSlice {
                subdomain: SubdomainId(a),
                local_nodes: nodes,
                local_matrix: CsrMatrix::from_triplets(n_local, n_local, &trips)?,
            })
        })
        .collect()
}

/// Sums the slices back into a global matrix of order `n_dofs`.
pub fn assemble_slices(slices: &[SubdomainSlice], n_dofs: usize, block_dim: usize) -> Result<CsrMatrix> {
    let d = block_dim;
    let mut triplets = Vec::new();
    for s in slices {
        for (li, lj, v) in s.local_matrix.iter() {
            let i = s.local_nodes[li / d].0 * d + li % d;
            let j = s.local_nodes[lj / d].0 * d + lj % d;
            triplets.push((i, j, v));
        }
    }
    CsrMatrix::from_triplets(n_dofs, n_dofs, &triplets)
}

/// Entries of the interior-interior block that couple interior nodes of two
/// different subdomains. Empty whenever the matrix is local to the partition.
pub fn interior_cross_couplings(matrix: &OriginalMatrix, dm: &DecompositionMap) -> Vec<(NodeId, NodeId)> {
    let d = matrix.block_dim();
    let mut out: Vec<(NodeId, NodeId)> = matrix
        .csr()
        .iter()
        .map(|(i, j, _)| (NodeId(i / d), NodeId(j / d)))
        .filter(|&(p, q)| dm.is_interior(p) && dm.is_interior(q) && dm.memberships(p)[0] != dm.memberships(q)[0])
        .collect();
    out.dedup();
    out
}

/// What `apply_dual` does with an input that is not continuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContinuityPolicy {
    /// Reject with [`Error::Continuity`].
    #[default]
    Strict,
    /// Apply the averaging projection first.
    Project,
}

/// One of the four blocks of the interior/interface split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    II,
    IGamma,
    GammaI,
    GammaGamma,
}

/// Interior/interface view used by [`DualOperator::apply_block`]. Restricted
/// vectors are indexed by the interior (resp. interface) derived positions in
/// ascending order, `d` values each.
#[derive(Debug, Clone)]
pub struct BlockView {
    pub interior_positions: Vec<usize>,
    pub interface_positions: Vec<usize>,
    /// Original interface nodes, ascending.
    pub interface_nodes: Vec<NodeId>,
    /// For each interface derived position, the index of its node in `interface_nodes`.
    interface_owner: Vec<usize>,
    m_ii: CsrMatrix,
    m_ig: CsrMatrix,
    m_gi: CsrMatrix,
    m_gg: CsrMatrix,
}

fn node_dofs(nodes: impl Iterator<Item = NodeId>, d: usize) -> Vec<usize> {
    nodes.flat_map(|p| (0..d).map(move |c| p.0 * d + c)).collect()
}

impl BlockView {
    fn new(matrix: &OriginalMatrix, ds: &DerivedSpace) -> Self {
        let d = matrix.block_dim();
        let interior_positions = ds.interior_positions();
        let interface_positions = ds.interface_positions();
        let mut interface_nodes: Vec<NodeId> = interface_positions.iter().map(|&k| ds.node(k).node).collect();
        interface_nodes.sort_unstable();
        interface_nodes.dedup();
        let interface_owner = interface_positions
            .iter()
            .map(|&k| interface_nodes.binary_search(&ds.node(k).node).unwrap())
            .collect();
        let i_dofs = node_dofs(interior_positions.iter().map(|&k| ds.node(k).node), d);
        let g_dofs = node_dofs(interface_nodes.iter().copied(), d);
        let csr = matrix.csr();
        Self {
            m_ii: csr.extract(&i_dofs, &i_dofs),
            m_ig: csr.extract(&i_dofs, &g_dofs),
            m_gi: csr.extract(&g_dofs, &i_dofs),
            m_gg: csr.extract(&g_dofs, &g_dofs),
            interior_positions,
            interface_positions,
            interface_nodes,
            interface_owner,
        }
    }

    /// Averages interface derived values onto the original interface nodes.
    fn retract_interface(&self, u: &[f64], d: usize) -> Vec<f64> {
        let mut sums = vec![0.0; self.interface_nodes.len() * d];
        let mut counts = vec![0usize; self.interface_nodes.len()];
        for (slot, &owner) in self.interface_owner.iter().enumerate() {
            counts[owner] += 1;
            for c in 0..d {
                sums[owner * d + c] += u[slot * d + c];
            }
        }
        for (owner, &m) in counts.iter().enumerate() {
            for c in 0..d {
                sums[owner * d + c] /= m as f64;
            }
        }
        sums
    }

    fn inject_interface(&self, values: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.interface_positions.len() * d];
        for (slot, &owner) in self.interface_owner.iter().enumerate() {
            out[slot * d..(slot + 1) * d].copy_from_slice(&values[owner * d..(owner + 1) * d]);
        }
        out
    }
}

/// Matrix-free dual of an original matrix.
#[derive(Debug, Clone)]
pub struct DualOperator<'a> {
    slices: Vec<SubdomainSlice>,
    ds: &'a DerivedSpace,
    block_view: BlockView,
}

impl<'a> DualOperator<'a> {
    /// Builds the operator; fails if the matrix is not local to the partition.
    pub fn new(matrix: &OriginalMatrix, dm: &DecompositionMap, ds: &'a DerivedSpace) -> Result<Self> {
        if ds.block_dim() != matrix.block_dim() || ds.n_original() != matrix.n_nodes() {
            return Err(Error::Dimension("derived space does not match the matrix".into()));
        }
        let slices = split_by_subdomain(matrix, dm)?;
        let block_view = BlockView::new(matrix, ds);
        Ok(Self { slices, ds, block_view })
    }

    pub fn slices(&self) -> &[SubdomainSlice] {
        &self.slices
    }

    pub fn space(&self) -> &DerivedSpace {
        self.ds
    }

    pub fn block_view(&self) -> &BlockView {
        &self.block_view
    }

    /// Computes `a_hat (Q_hat (a_hat^-1 u))` for continuous `u`: one local
    /// multiply per subdomain followed by an exchange.
    pub fn apply_dual(&self, u: &DerivedVector, policy: ContinuityPolicy) -> Result<DerivedVector> {
        let ds = self.ds;
        let projected;
        let u = {
            let defect = continuity_defect(u, ds)?;
            if defect > CONTINUITY_TOL {
                match policy {
                    ContinuityPolicy::Strict => return Err(Error::Continuity { defect }),
                    ContinuityPolicy::Project => {
                        projected = project_a(u, ds)?;
                        &projected
                    }
                }
            } else {
                u
            }
        };
        let d = ds.block_dim();
        let partials: Vec<Option<Vec<f64>>> = self
            .slices
            .par_iter()
            .map(|s| {
                let range = ds.subdomain_range(s.subdomain);
                let local = &u.values()[range.start * d..range.end * d];
                let mut y = s.local_matrix.mul_vec(local);
                // scaled so that the averaging exchange returns the plain sum
                for (i, p) in s.local_nodes.iter().enumerate() {
                    let m = ds.multiplicity(*p) as f64;
                    y[i * d..(i + 1) * d].iter_mut().for_each(|v| *v *= m);
                }
                Some(y)
            })
            .collect();
        exchange(&partials, ds)
    }

    /// Applies one block of the interior/interface split:
    /// `II = Q_hat_II`, `IGamma = Q_hat_IG a_hat^-1`, `GammaI = a_hat Q_hat_GI`,
    /// `GammaGamma = a_hat Q_hat_GG a_hat^-1`.
    pub fn apply_block(&self, block: Block, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.ds.block_dim();
        let bv = &self.block_view;
        let (n_i, n_g) = (bv.interior_positions.len() * d, bv.interface_positions.len() * d);
        let expected = match block {
            Block::II | Block::GammaI => n_i,
            Block::IGamma | Block::GammaGamma => n_g,
        };
        if u.len() != expected {
            return Err(Error::Dimension(format!(
                "block {block:?} expects {expected} values, got {}",
                u.len()
            )));
        }
        Ok(match block {
            Block::II => bv.m_ii.mul_vec(u),
            Block::IGamma => bv.m_ig.mul_vec(&bv.retract_interface(u, d)),
            Block::GammaI => bv.inject_interface(&bv.m_gi.mul_vec(u), d),
            Block::GammaGamma => bv.inject_interface(&bv.m_gg.mul_vec(&bv.retract_interface(u, d)), d),
        })
    }

    /// Restricts a derived vector to the interior or interface positions.
    pub fn restrict(&self, u: &DerivedVector, interface: bool) -> Vec<f64> {
        let d = self.ds.block_dim();
        let positions = if interface {
            &self.block_view.interface_positions
        } else {
            &self.block_view.interior_positions
        };
        positions
            .iter()
            .flat_map(|&k| u.values()[k * d..(k + 1) * d].iter().copied())
            .collect()
    }

    /// Inverse of [`DualOperator::restrict`]: places interior and interface
    /// values back into a derived vector.
    pub fn combine(&self, interior: &[f64], interface: &[f64]) -> DerivedVector {
        let d = self.ds.block_dim();
        let mut out = vec![0.0; self.ds.n_dofs()];
        for (slot, &k) in self.block_view.interior_positions.iter().enumerate() {
            out[k * d..(k + 1) * d].copy_from_slice(&interior[slot * d..(slot + 1) * d]);
        }
        for (slot, &k) in self.block_view.interface_positions.iter().enumerate() {
            out[k * d..(k + 1) * d].copy_from_slice(&interface[slot * d..(slot + 1) * d]);
        }
        DerivedVector::from_raw(out)
    }
}

/// Combines per-subdomain local arrays into a derived vector: every
/// descendant of `p` receives `(1 / m(p))` times the sum of the contributions
/// over the descendants of `p`, summed in ascending subdomain order.
/// `partials[alpha]` holds the values on the derived slice of subdomain `alpha`.
pub fn exchange(partials: &[Option<Vec<f64>>], ds: &DerivedSpace) -> Result<DerivedVector> {
    if partials.len() != ds.n_subdomains() {
        return Err(Error::IncompleteExchange(SubdomainId(
            partials.len().min(ds.n_subdomains()),
        )));
    }
    let d = ds.block_dim();
    let mut assembled = vec![0.0; ds.n_dofs()];
    for (a, partial) in partials.iter().enumerate() {
        let range = ds.subdomain_range(SubdomainId(a));
        let local = partial.as_ref().ok_or(Error::IncompleteExchange(SubdomainId(a)))?;
        if local.len() != range.len() * d {
            return Err(Error::Dimension(format!(
                "subdomain {a} contributed {} values, slice holds {}",
                local.len(),
                range.len() * d
            )));
        }
        assembled[range.start * d..range.end * d].copy_from_slice(local);
    }
    let averages = ds.group_averages(&assembled);
    Ok(DerivedVector::from_raw(ds.scatter(&averages)))
}

/// Explicit injection matrix (`|X| d x N d`, entries 0/1).
pub fn dense_injection(ds: &DerivedSpace) -> Result<DMatrix<f64>> {
    let d = ds.block_dim();
    let (rows, cols) = (ds.n_dofs(), ds.n_original() * d);
    if rows.max(cols) > DENSE_REFERENCE_LIMIT {
        return Err(Error::Dimension(format!(
            "dense reference limited to {DENSE_REFERENCE_LIMIT} unknowns"
        )));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (k, dn) in ds.nodes().iter().enumerate() {
        for c in 0..d {
            m[(k * d + c, dn.node.0 * d + c)] = 1.0;
        }
    }
    Ok(m)
}

/// Explicit retraction matrix: the transpose of the injection with rows
/// scaled by `1 / m(p)`.
pub fn dense_retraction(ds: &DerivedSpace) -> Result<DMatrix<f64>> {
    let mut r = dense_injection(ds)?.transpose();
    let d = ds.block_dim();
    for p in 0..ds.n_original() {
        let m = ds.multiplicity(NodeId(p)) as f64;
        for c in 0..d {
            r.row_mut(p * d + c).iter_mut().for_each(|v| *v /= m);
        }
    }
    Ok(r)
}

/// Explicit dense dual matrix `a_hat Q_hat a_hat^-1`.
pub fn dense_dual_matrix(matrix: &OriginalMatrix, ds: &DerivedSpace) -> Result<DMatrix<f64>> {
    let a = dense_injection(ds)?;
    let r = dense_retraction(ds)?;
    Ok(&a * matrix.csr().to_dense() * r)
}
