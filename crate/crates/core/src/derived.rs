//! Derived nodes, the derived vector space and its projections.
//!
//! Every membership `(p, alpha)` of an original node `p` in subdomain `alpha`
//! becomes one derived node. Derived nodes are stored grouped by subdomain, so
//! the nodes of one subdomain occupy a contiguous slice; the descendants of an
//! original node (all its derived copies) are kept as a secondary index.
//!
//! Derived vectors carry the inner product in which each derived entry is
//! weighted by `1 / m(p)`. The averaging projection `a` maps onto continuous
//! vectors (one value per descendant group) and `j = I - a` onto zero-average
//! vectors; the two ranges are orthogonal in the weighted inner product.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{DecompositionMap, NodeId, OriginalVector, SubdomainId};
use crate::sets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DerivedNode {
    pub node: NodeId,
    pub subdomain: SubdomainId,
}

/// Classification tag of a derived node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    /// `m(p) = 1`.
    Interior,
    /// Interface node selected as primal.
    Primal,
    /// Interface node not selected as primal.
    Dual,
}

/// How primal nodes are chosen among the interface nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimalRule {
    #[default]
    None,
    /// Interface nodes with multiplicity at least `k`.
    MinMultiplicity(usize),
    /// An explicit list of original nodes; each must be an interface node.
    Explicit(Vec<NodeId>),
}

#[derive(Debug, Clone)]
pub struct DerivedSpace {
    block_dim: usize,
    nodes: Vec<DerivedNode>,
    /// `subdomain_ptr[a]..subdomain_ptr[a + 1]` are the positions of subdomain `a`.
    subdomain_ptr: Vec<usize>,
    /// `descendant_ptr[p]..descendant_ptr[p + 1]` index into `descendant_pos`.
    descendant_ptr: Vec<usize>,
    descendant_pos: Vec<usize>,
    classes: Vec<NodeClass>,
    multiplicity: Vec<usize>,
}

/// Enumerates the derived nodes of `dm` and tags them interior, primal or
/// dual according to `primal_rule`.
pub fn build_derived_space(dm: &DecompositionMap, primal_rule: &PrimalRule, block_dim: usize) -> Result<DerivedSpace> {
    if block_dim == 0 {
        return Err(Error::Dimension("block dimension must be positive".into()));
    }
    let n = dm.n_nodes();
    let e = dm.n_subdomains();
    let multiplicity = dm.multiplicities();

    let mut primal = vec![false; n];
    match primal_rule {
        PrimalRule::None => {}
        PrimalRule::MinMultiplicity(k) => {
            for (p, &m) in multiplicity.iter().enumerate() {
                primal[p] = m > 1 && m >= *k;
            }
        }
        PrimalRule::Explicit(list) => {
            for &p in list {
                if p.0 >= n {
                    return Err(Error::Range { index: p.0, limit: n });
                }
                if multiplicity[p.0] == 1 {
                    return Err(Error::InvalidPrimal { node: p });
                }
                primal[p.0] = true;
            }
        }
    }

    let mut per_subdomain: Vec<Vec<NodeId>> = vec![Vec::new(); e];
    for (p, alpha) in dm.pairs() {
        per_subdomain[alpha.0].push(p);
    }
    let mut nodes = Vec::with_capacity(multiplicity.iter().sum());
    let mut subdomain_ptr = Vec::with_capacity(e + 1);
    subdomain_ptr.push(0);
    for (alpha, members) in per_subdomain.into_iter().enumerate() {
        nodes.extend(members.into_iter().map(|node| DerivedNode {
            node,
            subdomain: SubdomainId(alpha),
        }));
        subdomain_ptr.push(nodes.len());
    }

    let mut descendant_ptr = vec![0usize; n + 1];
    for (p, &m) in multiplicity.iter().enumerate() {
        descendant_ptr[p + 1] = descendant_ptr[p] + m;
    }
    let mut cursor = descendant_ptr[..n].to_vec();
    let mut descendant_pos = vec![0usize; nodes.len()];
    // positions ascend with subdomain, so each group is sorted by subdomain
    for (k, dn) in nodes.iter().enumerate() {
        descendant_pos[cursor[dn.node.0]] = k;
        cursor[dn.node.0] += 1;
    }

    let classes = nodes
        .iter()
        .map(|dn| {
            if multiplicity[dn.node.0] == 1 {
                NodeClass::Interior
            } else if primal[dn.node.0] {
                NodeClass::Primal
            } else {
                NodeClass::Dual
            }
        })
        .collect();

    Ok(DerivedSpace {
        block_dim,
        nodes,
        subdomain_ptr,
        descendant_ptr,
        descendant_pos,
        classes,
        multiplicity,
    })
}

impl DerivedSpace {
    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// Number of derived nodes `|X|`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of derived unknowns `|X| * d`.
    pub fn n_dofs(&self) -> usize {
        self.nodes.len() * self.block_dim
    }

    pub fn n_original(&self) -> usize {
        self.multiplicity.len()
    }

    pub fn n_subdomains(&self) -> usize {
        self.subdomain_ptr.len() - 1
    }

    pub fn nodes(&self) -> &[DerivedNode] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> DerivedNode {
        self.nodes[k]
    }

    pub fn class(&self, k: usize) -> NodeClass {
        self.classes[k]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }

    pub fn multiplicity(&self, p: NodeId) -> usize {
        self.multiplicity[p.0]
    }

    /// Weight `1 / m(p)` of derived position `k`.
    pub fn weight(&self, k: usize) -> f64 {
        1.0 / self.multiplicity[self.nodes[k].node.0] as f64
    }

    /// Positions of the subdomain's derived nodes.
    pub fn subdomain_range(&self, alpha: SubdomainId) -> Range<usize> {
        self.subdomain_ptr[alpha.0]..self.subdomain_ptr[alpha.0 + 1]
    }

    /// Positions of the descendants of `p`, in ascending subdomain order.
    pub fn descendants(&self, p: NodeId) -> &[usize] {
        &self.descendant_pos[self.descendant_ptr[p.0]..self.descendant_ptr[p.0 + 1]]
    }

    /// Position of `(p, alpha)`, if that derived node exists.
    pub fn position(&self, p: NodeId, alpha: SubdomainId) -> Option<usize> {
        self.descendants(p)
            .iter()
            .copied()
            .find(|&k| self.nodes[k].subdomain == alpha)
    }

    /// Positions tagged with any of `classes`, ascending.
    pub fn positions_of(&self, classes: &[NodeClass]) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| classes.contains(&self.classes[k]))
            .collect()
    }

    /// Interior derived positions `I`.
    pub fn interior_positions(&self) -> Vec<usize> {
        self.positions_of(&[NodeClass::Interior])
    }

    /// Interface derived positions `Gamma = pi + Delta`.
    pub fn interface_positions(&self) -> Vec<usize> {
        self.positions_of(&[NodeClass::Primal, NodeClass::Dual])
    }

    /// Verifies the structural invariants: the subdomain slices and the
    /// descendant groups each decompose the derived node set, `|Z(p)| = m(p)`,
    /// and the class tags are consistent with the multiplicities.
    pub fn check_invariants(&self) -> bool {
        let total: usize = self.multiplicity.iter().sum();
        if total != self.len() {
            return false;
        }
        let slices: Vec<Vec<usize>> = (0..self.n_subdomains())
            .map(|a| self.subdomain_range(SubdomainId(a)).collect())
            .collect();
        let slice_refs: Vec<&[usize]> = slices.iter().map(Vec::as_slice).collect();
        let groups: Vec<&[usize]> = (0..self.n_original()).map(|p| self.descendants(NodeId(p))).collect();
        let sizes_ok = (0..self.n_original()).all(|p| self.descendants(NodeId(p)).len() == self.multiplicity[p]);
        let members_ok = (0..self.n_original()).all(|p| {
            self.descendants(NodeId(p))
                .iter()
                .all(|&k| self.nodes[k].node == NodeId(p))
        });
        let tags_ok = self
            .nodes
            .iter()
            .zip(&self.classes)
            .all(|(dn, c)| (self.multiplicity[dn.node.0] == 1) == (*c == NodeClass::Interior));
        let interior = self.positions_of(&[NodeClass::Interior]);
        let primal = self.positions_of(&[NodeClass::Primal]);
        let dual = self.positions_of(&[NodeClass::Dual]);
        let interface = self.interface_positions();
        let n = self.len();
        sizes_ok
            && members_ok
            && tags_ok
            && sets::decomposes(n, &slice_refs)
            && sets::decomposes(n, &groups)
            && sets::decomposes(n, &[&interior, &dual, &primal])
            && sets::decomposes_subset(&interface, &[&dual, &primal])
    }

    pub(crate) fn check_derived(&self, u: &DerivedVector) -> Result<()> {
        if u.values.len() != self.n_dofs() {
            return Err(Error::Dimension(format!(
                "derived vector has {} values, space has {}",
                u.values.len(),
                self.n_dofs()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_original(&self, u: &OriginalVector) -> Result<()> {
        if u.values().len() != self.n_original() * self.block_dim || u.block_dim() != self.block_dim {
            return Err(Error::Dimension(format!(
                "original vector has {} values, expected {}",
                u.values().len(),
                self.n_original() * self.block_dim
            )));
        }
        Ok(())
    }

    /// Per-node sums over the descendant groups, `N * d` values. Each group is
    /// summed in ascending subdomain order.
    pub(crate) fn group_sums(&self, values: &[f64]) -> Vec<f64> {
        let d = self.block_dim;
        let mut sums = vec![0.0; self.n_original() * d];
        sums.par_chunks_mut(d).enumerate().for_each(|(p, out)| {
            for &k in self.descendants(NodeId(p)) {
                for (o, v) in out.iter_mut().zip(&values[k * d..(k + 1) * d]) {
                    *o += v;
                }
            }
        });
        sums
    }

    /// Per-node averages over the descendant groups.
    pub(crate) fn group_averages(&self, values: &[f64]) -> Vec<f64> {
        let d = self.block_dim;
        let mut avg = self.group_sums(values);
        avg.par_chunks_mut(d).enumerate().for_each(|(p, out)| {
            let m = self.multiplicity[p] as f64;
            out.iter_mut().for_each(|v| *v /= m);
        });
        avg
    }

    /// Copies per-node blocks onto every descendant.
    pub(crate) fn scatter(&self, original: &[f64]) -> Vec<f64> {
        let d = self.block_dim;
        let mut out = vec![0.0; self.n_dofs()];
        out.par_chunks_mut(d).enumerate().for_each(|(k, block)| {
            let p = self.nodes[k].node.0;
            block.copy_from_slice(&original[p * d..(p + 1) * d]);
        });
        out
    }
}

/// Values over the derived nodes, `d` reals per derived node, in the order of
/// [`DerivedSpace::nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedVector {
    values: Vec<f64>,
}

impl DerivedVector {
    pub fn zeros(ds: &DerivedSpace) -> Self {
        Self {
            values: vec![0.0; ds.n_dofs()],
        }
    }

    pub fn from_values(ds: &DerivedSpace, values: Vec<f64>) -> Result<Self> {
        let v = Self { values };
        ds.check_derived(&v)?;
        Ok(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DerivedVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &DerivedVector) -> DerivedVector {
        DerivedVector {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &DerivedVector) -> DerivedVector {
        DerivedVector {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Euclidean inner product of original vectors.
pub fn inner_product_original(u: &OriginalVector, v: &OriginalVector) -> Result<f64> {
    if u.values().len() != v.values().len() {
        return Err(Error::Dimension(format!(
            "inner product of vectors of length {} and {}",
            u.values().len(),
            v.values().len()
        )));
    }
    Ok(u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum())
}

/// Weighted inner product: each derived entry contributes its block product
/// scaled by `1 / m(p)`.
pub fn inner_product_derived(u: &DerivedVector, v: &DerivedVector, ds: &DerivedSpace) -> Result<f64> {
    ds.check_derived(u)?;
    ds.check_derived(v)?;
    Ok(weighted_dot(ds, u.values(), v.values()))
}

pub(crate) fn weighted_dot(ds: &DerivedSpace, u: &[f64], v: &[f64]) -> f64 {
    let d = ds.block_dim;
    u.chunks_exact(d)
        .zip(v.chunks_exact(d))
        .enumerate()
        .map(|(k, (a, b))| ds.weight(k) * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

/// Norm induced by the weighted inner product.
pub fn derived_norm(u: &DerivedVector, ds: &DerivedSpace) -> f64 {
    weighted_dot(ds, u.values(), u.values()).sqrt()
}

/// Averaging projection onto continuous vectors.
pub fn project_a(u: &DerivedVector, ds: &DerivedSpace) -> Result<DerivedVector> {
    ds.check_derived(u)?;
    Ok(DerivedVector::from_raw(ds.scatter(&ds.group_averages(u.values()))))
}

/// Complementary projection `u - a u` onto zero-average vectors.
pub fn project_j(u: &DerivedVector, ds: &DerivedSpace) -> Result<DerivedVector> {
    let au = project_a(u, ds)?;
    Ok(u.sub(&au))
}

/// Copies each original value onto all of its descendants.
pub fn inject(u: &OriginalVector, ds: &DerivedSpace) -> Result<DerivedVector> {
    ds.check_original(u)?;
    Ok(DerivedVector::from_raw(ds.scatter(u.values())))
}

/// Averages each descendant group back to its original node. On continuous
/// vectors this inverts [`inject`].
pub fn retract(u: &DerivedVector, ds: &DerivedSpace) -> Result<OriginalVector> {
    ds.check_derived(u)?;
    OriginalVector::new(ds.group_averages(u.values()), ds.block_dim)
}

/// Largest absolute disagreement `|u(p, alpha) - u_hat(p)|` over all derived nodes.
pub fn duality_defect(u_hat: &OriginalVector, u: &DerivedVector, ds: &DerivedSpace) -> Result<f64> {
    ds.check_original(u_hat)?;
    ds.check_derived(u)?;
    let d = ds.block_dim;
    let mut worst = 0.0f64;
    for (k, block) in u.values().chunks_exact(d).enumerate() {
        let orig = u_hat.block(ds.nodes[k].node);
        for (a, b) in block.iter().zip(orig) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// True when `u` equals the injection of `u_hat` to within
/// `tol * (1 + max |u_hat|)` at every derived node.
pub fn is_dual(u_hat: &OriginalVector, u: &DerivedVector, ds: &DerivedSpace, tol: f64) -> Result<bool> {
    Ok(duality_defect(u_hat, u, ds)? <= tol * (1.0 + u_hat.max_abs()))
}

/// Relative size `||j u|| / ||u||` of the discontinuous part (0 for `u = 0`).
pub fn continuity_defect(u: &DerivedVector, ds: &DerivedSpace) -> Result<f64> {
    let norm = derived_norm(u, ds);
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(derived_norm(&project_j(u, ds)?, ds) / norm)
}
