//! The original sequential problem: sparse matrix, right-hand side and the
//! node-to-subdomain memberships, plus desk-scale generators.
//!
//! A node `p` belongs to every subdomain whose closure contains it. Nodes in
//! exactly one subdomain are interior; nodes shared by several subdomains form
//! the interface. Matrices act on `N * d` unknowns, `d` consecutive unknowns per
//! node.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sets;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubdomainId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for SubdomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Node memberships in the closed subdomains, with multiplicities and the
/// interior/interface split of the original nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionMap {
    memberships: Vec<Vec<SubdomainId>>,
    n_subdomains: usize,
    interior: Vec<NodeId>,
    interface: Vec<NodeId>,
}

impl DecompositionMap {
    /// Builds the map from per-node subdomain lists. Lists are sorted and
    /// deduplicated; every node must belong to at least one subdomain.
    pub fn from_memberships(memberships: Vec<Vec<usize>>) -> Result<Self> {
        if memberships.is_empty() {
            return Err(Error::EmptyProblem("partition has no nodes".into()));
        }
        let mut sorted = Vec::with_capacity(memberships.len());
        let mut n_subdomains = 0;
        for (p, mut subs) in memberships.into_iter().enumerate() {
            subs.sort_unstable();
            subs.dedup();
            if subs.is_empty() {
                return Err(Error::Coverage { node: NodeId(p) });
            }
            n_subdomains = n_subdomains.max(subs[subs.len() - 1] + 1);
            sorted.push(subs.into_iter().map(SubdomainId).collect::<Vec<_>>());
        }
        let (interior, interface) = classify(&sorted);
        Ok(Self {
            memberships: sorted,
            n_subdomains,
            interior,
            interface,
        })
    }

    /// Builds the map from `(node, subdomain)` pairs; a node may appear in
    /// several pairs.
    pub fn from_pairs(n_nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut memberships = vec![Vec::new(); n_nodes];
        for &(p, alpha) in pairs {
            if p >= n_nodes {
                return Err(Error::Range {
                    index: p,
                    limit: n_nodes,
                });
            }
            memberships[p].push(alpha);
        }
        Self::from_memberships(memberships)
    }

    pub fn n_nodes(&self) -> usize {
        self.memberships.len()
    }

    pub fn n_subdomains(&self) -> usize {
        self.n_subdomains
    }

    /// Sorted subdomains whose closure contains `p`.
    pub fn memberships(&self, p: NodeId) -> &[SubdomainId] {
        &self.memberships[p.0]
    }

    pub fn multiplicity(&self, p: NodeId) -> usize {
        self.memberships[p.0].len()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.memberships.iter().map(Vec::len).collect()
    }

    /// Indicator: 1 when `p` lies in the closure of `alpha`.
    pub fn indicator(&self, alpha: SubdomainId, p: NodeId) -> usize {
        usize::from(self.memberships[p.0].binary_search(&alpha).is_ok())
    }

    pub fn interior(&self) -> &[NodeId] {
        &self.interior
    }

    pub fn interface(&self) -> &[NodeId] {
        &self.interface
    }

    pub fn is_interior(&self, p: NodeId) -> bool {
        self.memberships[p.0].len() == 1
    }

    /// Nodes contained in the closure of `alpha`, ascending.
    pub fn subdomain_nodes(&self, alpha: SubdomainId) -> Vec<NodeId> {
        (0..self.n_nodes())
            .map(NodeId)
            .filter(|&p| self.memberships[p.0].binary_search(&alpha).is_ok())
            .collect()
    }

    /// Subdomains shared by `p` and `q`, ascending.
    pub fn common_subdomains(&self, p: NodeId, q: NodeId) -> Vec<SubdomainId> {
        let (a, b) = (&self.memberships[p.0], &self.memberships[q.0]);
        a.iter().filter(|s| b.binary_search(s).is_ok()).copied().collect()
    }

    /// Lowest-index subdomain shared by `p` and `q`.
    pub fn lowest_common_subdomain(&self, p: NodeId, q: NodeId) -> Option<SubdomainId> {
        let (a, b) = (&self.memberships[p.0], &self.memberships[q.0]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Equal => return Some(a[i]),
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        None
    }

    /// Count of nodes per multiplicity value.
    pub fn multiplicity_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for subs in &self.memberships {
            *hist.entry(subs.len()).or_insert(0) += 1;
        }
        hist
    }

    /// Flattened `(node, subdomain)` pairs in node order.
    pub fn pairs(&self) -> Vec<(NodeId, SubdomainId)> {
        self.memberships
            .iter()
            .enumerate()
            .flat_map(|(p, subs)| subs.iter().map(move |&s| (NodeId(p), s)))
            .collect()
    }

    /// Checks coverage, multiplicity bookkeeping and that the interior and
    /// interface sets decompose the node set.
    pub fn check_invariants(&self) -> bool {
        let n = self.n_nodes();
        let covered = self.memberships.iter().all(|s| !s.is_empty());
        let interior: Vec<usize> = self.interior.iter().map(|p| p.0).collect();
        let interface: Vec<usize> = self.interface.iter().map(|p| p.0).collect();
        let split_ok = self.interior.iter().all(|&p| self.multiplicity(p) == 1)
            && self.interface.iter().all(|&p| self.multiplicity(p) > 1);
        covered && split_ok && sets::decomposes(n, &[&interior, &interface])
    }
}

fn classify(memberships: &[Vec<SubdomainId>]) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut interior = Vec::new();
    let mut interface = Vec::new();
    for (p, subs) in memberships.iter().enumerate() {
        if subs.len() == 1 {
            interior.push(NodeId(p));
        } else {
            interface.push(NodeId(p));
        }
    }
    (interior, interface)
}

/// Interior (`m = 1`) and interface (`m > 1`) original nodes.
pub fn classify_original_nodes(dm: &DecompositionMap) -> (Vec<NodeId>, Vec<NodeId>) {
    (dm.interior.clone(), dm.interface.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    General,
    Symmetric,
}

/// Square sparse matrix over `N * d` unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginalMatrix {
    csr: CsrMatrix,
    block_dim: usize,
    symmetry: Symmetry,
}

impl OriginalMatrix {
    pub fn new(csr: CsrMatrix, block_dim: usize, symmetry: Symmetry) -> Result<Self> {
        if csr.n_rows() != csr.n_cols() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, expected square",
                csr.n_rows(),
                csr.n_cols()
            )));
        }
        if block_dim == 0 || !csr.n_rows().is_multiple_of(block_dim) {
            return Err(Error::Dimension(format!(
                "matrix order {} is not a multiple of the block dimension {}",
                csr.n_rows(),
                block_dim
            )));
        }
        if symmetry == Symmetry::Symmetric && !csr.is_symmetric() {
            return Err(Error::Dimension("matrix flagged symmetric is not symmetric".into()));
        }
        Ok(Self {
            csr,
            block_dim,
            symmetry,
        })
    }

    /// Same entries regrouped with a different block dimension.
    pub fn with_block_dim(self, block_dim: usize) -> Result<Self> {
        Self::new(self.csr, block_dim, self.symmetry)
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    /// Flagged symmetric, or numerically symmetric entry for entry.
    pub fn is_symmetric(&self) -> bool {
        self.symmetry == Symmetry::Symmetric || self.csr.is_symmetric()
    }

    pub fn n_dofs(&self) -> usize {
        self.csr.n_rows()
    }

    pub fn n_nodes(&self) -> usize {
        self.csr.n_rows() / self.block_dim
    }

    pub fn nnz(&self) -> usize {
        self.csr.nnz()
    }

    pub fn mul_vec(&self, x: &OriginalVector) -> OriginalVector {
        OriginalVector {
            values: self.csr.mul_vec(&x.values),
            block_dim: self.block_dim,
        }
    }
}

/// Values over the original nodes, `d` reals per node.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginalVector {
    values: Vec<f64>,
    block_dim: usize,
}

impl OriginalVector {
    pub fn new(values: Vec<f64>, block_dim: usize) -> Result<Self> {
        if block_dim == 0 || !values.len().is_multiple_of(block_dim) {
            return Err(Error::Dimension(format!(
                "vector length {} is not a multiple of the block dimension {}",
                values.len(),
                block_dim
            )));
        }
        Ok(Self { values, block_dim })
    }

    /// Scalar (`d = 1`) vector.
    pub fn from_scalars(values: Vec<f64>) -> Self {
        Self { values, block_dim: 1 }
    }

    pub fn zeros(n_nodes: usize, block_dim: usize) -> Self {
        Self {
            values: vec![0.0; n_nodes * block_dim],
            block_dim,
        }
    }

    pub fn ones(n_nodes: usize, block_dim: usize) -> Self {
        Self {
            values: vec![1.0; n_nodes * block_dim],
            block_dim,
        }
    }

    /// Unit vector on unknown `k`.
    pub fn unit(n_nodes: usize, block_dim: usize, k: usize) -> Result<Self> {
        let mut v = Self::zeros(n_nodes, block_dim);
        if k >= v.values.len() {
            return Err(Error::Range {
                index: k,
                limit: v.values.len(),
            });
        }
        v.values[k] = 1.0;
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

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.block_dim
    }

    pub fn block(&self, p: NodeId) -> &[f64] {
        &self.values[p.0 * self.block_dim..(p.0 + 1) * self.block_dim]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Matrix, right-hand side and decomposition of one problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub matrix: OriginalMatrix,
    pub rhs: OriginalVector,
    pub decomposition: DecompositionMap,
    pub metadata: BTreeMap<String, String>,
}

impl ProblemInstance {
    pub fn new(matrix: OriginalMatrix, rhs: OriginalVector, decomposition: DecompositionMap) -> Result<Self> {
        if rhs.values.len() != matrix.n_dofs() || rhs.block_dim != matrix.block_dim() {
            return Err(Error::Dimension(format!(
                "rhs has {} values (block {}), matrix has {} unknowns (block {})",
                rhs.values.len(),
                rhs.block_dim,
                matrix.n_dofs(),
                matrix.block_dim()
            )));
        }
        if decomposition.n_nodes() != matrix.n_nodes() {
            return Err(Error::Dimension(format!(
                "partition has {} nodes, matrix has {}",
                decomposition.n_nodes(),
                matrix.n_nodes()
            )));
        }
        Ok(Self {
            matrix,
            rhs,
            decomposition,
            metadata: BTreeMap::new(),
        })
    }

    /// 1D Poisson on `n` nodes split into `boxes` closed intervals, rhs of ones.
    pub fn poisson_1d(n: usize, boxes: usize) -> Result<Self> {
        let matrix = generate_poisson_1d(n)?;
        let dm = generate_box_partition(n, 1, boxes, 1)?;
        let mut problem = Self::new(matrix, OriginalVector::ones(n, 1), dm)?;
        problem.metadata.insert("kind".into(), "poisson1d".into());
        problem.metadata.insert("n".into(), n.to_string());
        problem.metadata.insert("boxes".into(), boxes.to_string());
        Ok(problem)
    }

    /// 2D Poisson on an `nx * ny` grid split into `px * py` boxes, rhs of ones.
    pub fn poisson_2d(nx: usize, ny: usize, px: usize, py: usize) -> Result<Self> {
        let matrix = generate_poisson_2d(nx, ny)?;
        let dm = generate_box_partition(nx, ny, px, py)?;
        let mut problem = Self::new(matrix, OriginalVector::ones(nx * ny, 1), dm)?;
        problem.metadata.insert("kind".into(), "poisson2d".into());
        problem.metadata.insert("grid".into(), format!("{nx}x{ny}"));
        problem.metadata.insert("boxes".into(), format!("{px}x{py}"));
        Ok(problem)
    }

    pub fn with_rhs(mut self, rhs: OriginalVector) -> Result<Self> {
        if rhs.values.len() != self.matrix.n_dofs() || rhs.block_dim != self.matrix.block_dim() {
            return Err(Error::Dimension(format!(
                "rhs has {} values, matrix has {} unknowns",
                rhs.values.len(),
                self.matrix.n_dofs()
            )));
        }
        self.rhs = rhs;
        Ok(self)
    }
}

/// Outcome of the locality check.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityReport {
    /// Number of offending node pairs.
    pub n_violations: usize,
    /// Up to [`LocalityReport::MAX_LISTED`] offending pairs, in row-major order.
    pub violations: Vec<(NodeId, NodeId)>,
}

impl LocalityReport {
    pub const MAX_LISTED: usize = 20;

    pub fn passed(&self) -> bool {
        self.n_violations == 0
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::Locality {
                count: self.n_violations,
                pairs: self.violations,
            })
        }
    }
}

/// Checks that every structurally nonzero entry couples two nodes sharing at
/// least one subdomain.
pub fn validate_locality(matrix: &OriginalMatrix, dm: &DecompositionMap) -> Result<LocalityReport> {
    if matrix.n_nodes() != dm.n_nodes() {
        return Err(Error::Dimension(format!(
            "partition has {} nodes, matrix has {}",
            dm.n_nodes(),
            matrix.n_nodes()
        )));
    }
    let d = matrix.block_dim();
    let mut report = LocalityReport {
        n_violations: 0,
        violations: Vec::new(),
    };
    let mut last: Option<(usize, usize)> = None;
    for (i, j, _) in matrix.csr().iter() {
        let (p, q) = (i / d, j / d);
        // entries of one node block are contiguous within a row
        if last == Some((p, q)) {
            continue;
        }
        last = Some((p, q));
        if dm.lowest_common_subdomain(NodeId(p), NodeId(q)).is_none() {
            report.n_violations += 1;
            if report.violations.len() < LocalityReport::MAX_LISTED {
                report.violations.push((NodeId(p), NodeId(q)));
            }
        }
    }
    Ok(report)
}

/// Three-point Laplacian with homogeneous Dirichlet ends eliminated.
pub fn generate_poisson_1d(n: usize) -> Result<OriginalMatrix> {
    if n == 0 {
        return Err(Error::EmptyProblem("poisson1d needs n >= 1".into()));
    }
    let mut triplets = Vec::with_capacity(3 * n);
    for i in 0..n {
        if i > 0 {
            triplets.push((i, i - 1, -1.0));
        }
        triplets.push((i, i, 2.0));
        if i + 1 < n {
            triplets.push((i, i + 1, -1.0));
        }
    }
    OriginalMatrix::new(CsrMatrix::from_triplets(n, n, &triplets)?, 1, Symmetry::Symmetric)
}

/// Five-point Laplacian on an `nx * ny` grid, row-major numbering
/// `p = j * nx + i`.
pub fn generate_poisson_2d(nx: usize, ny: usize) -> Result<OriginalMatrix> {
    if nx == 0 || ny == 0 {
        return Err(Error::EmptyProblem(format!("poisson2d grid {nx}x{ny}")));
    }
    let n = nx * ny;
    let mut triplets = Vec::with_capacity(5 * n);
    for j in 0..ny {
        for i in 0..nx {
            let p = j * nx + i;
            if j > 0 {
                triplets.push((p, p - nx, -1.0));
            }
            if i > 0 {
                triplets.push((p, p - 1, -1.0));
            }
            triplets.push((p, p, 4.0));
            if i + 1 < nx {
                triplets.push((p, p + 1, -1.0));
            }
            if j + 1 < ny {
                triplets.push((p, p + nx, -1.0));
            }
        }
    }
    OriginalMatrix::new(CsrMatrix::from_triplets(n, n, &triplets)?, 1, Symmetry::Symmetric)
}

/// Cut positions splitting `0..n` into `parts` closed ranges
/// `[cuts[k], cuts[k + 1]]`, rounded to the nearest node.
fn cut_positions(n: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|k| (k * (n - 1) + parts / 2) / parts).collect()
}

/// Box partition of an `nx * ny` grid into `px * py` closed boxes. Nodes on a
/// cut line belong to every box touching it. Box `(bx, by)` has subdomain id
/// `by * px + bx`.
pub fn generate_box_partition(nx: usize, ny: usize, px: usize, py: usize) -> Result<DecompositionMap> {
    if nx == 0 || ny == 0 {
        return Err(Error::EmptyProblem(format!("grid {nx}x{ny}")));
    }
    if px == 0 || py == 0 {
        return Err(Error::Config(format!("box counts must be positive, got {px}x{py}")));
    }
    if px > nx {
        return Err(Error::Range { index: px, limit: nx });
    }
    if py > ny {
        return Err(Error::Range { index: py, limit: ny });
    }
    let (cx, cy) = (cut_positions(nx, px), cut_positions(ny, py));
    let boxes_of = |cuts: &[usize], i: usize| -> Vec<usize> {
        (0..cuts.len() - 1)
            .filter(|&k| cuts[k] <= i && i <= cuts[k + 1])
            .collect()
    };
    let mut memberships = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let ys = boxes_of(&cy, j);
        for i in 0..nx {
            let xs = boxes_of(&cx, i);
            let subs = ys
                .iter()
                .flat_map(|&by| xs.iter().map(move |&bx| by * px + bx))
                .collect();
            memberships.push(subs);
        }
    }
    DecompositionMap::from_memberships(memberships)
}
