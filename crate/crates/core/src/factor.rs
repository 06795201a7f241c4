//! Sparse direct solves: reverse Cuthill-McKee reordering followed by a banded
//! LU factorization with partial pivoting.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Reverse Cuthill-McKee ordering of the symmetrized pattern of `a`.
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in a.iter() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    for list in adj.iter_mut() {
        list.sort_by_key(|&v| (degree[v], v));
    }

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut starts: Vec<usize> = (0..n).collect();
    starts.sort_by_key(|&v| (degree[v], v));
    for start in starts {
        if visited[start] {
            continue;
        }
        let root = pseudo_peripheral(start, &adj);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Finds a node of (near) maximal eccentricity in the component of `start`.
fn pseudo_peripheral(start: usize, adj: &[Vec<usize>]) -> usize {
    let mut root = start;
    let mut depth = 0;
    loop {
        let levels = bfs_levels(root, adj);
        let max_level = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if max_level <= depth {
            return root;
        }
        depth = max_level;
        let candidate = (0..adj.len())
            .filter(|&v| levels[v] == Some(max_level))
            .min_by_key(|&v| (adj[v].len(), v))
            .unwrap();
        root = candidate;
    }
}

fn bfs_levels(root: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut levels = vec![None; adj.len()];
    levels[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let next = levels[v].unwrap() + 1;
        for &w in &adj[v] {
            if levels[w].is_none() {
                levels[w] = Some(next);
                queue.push_back(w);
            }
        }
    }
    levels
}

/// LU factorization `P A = L U` of a reordered band matrix.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    /// Row `i` stores columns `i - lower ..= i + upper + lower`.
    band: Vec<f64>,
    pivots: Vec<usize>,
    /// `perm[new] = old`.
    perm: Vec<usize>,
}

impl BandedLu {
    /// Factors a square sparse matrix. Fails with [`Error::Singular`] on a
    /// pivot that vanishes relative to the largest entry.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::Dimension(format!(
                "cannot factor a {}x{} matrix",
                a.n_rows(),
                a.n_cols()
            )));
        }
        let n = a.n_rows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut lower, mut upper) = (0usize, 0usize);
        for (i, j, _) in a.iter() {
            let (pi, pj) = (inv[i], inv[j]);
            if pi > pj {
                lower = lower.max(pi - pj);
            } else {
                upper = upper.max(pj - pi);
            }
        }
        let width = 2 * lower + upper + 1;
        let mut band = vec![0.0; n * width];
        let mut scale = 0.0f64;
        for (i, j, v) in a.iter() {
            let (pi, pj) = (inv[i], inv[j]);
            band[pi * width + (pj + lower - pi)] += v;
            scale = scale.max(v.abs());
        }

        let mut lu = Self {
            n,
            lower,
            upper,
            band,
            pivots: vec![0; n],
            perm,
        };
        let tiny = scale * f64::EPSILON * (n.max(1) as f64);
        for k in 0..n {
            let last_row = (k + lower).min(n - 1);
            let last_col = (k + upper + lower).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).abs();
            for i in k + 1..=last_row {
                let v = lu.at(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tiny || !best.is_finite() {
                return Err(Error::Singular { pivot: k });
            }
            lu.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a_kj, a_pj) = (lu.idx(k, j), lu.idx(p, j));
                    lu.band.swap(a_kj, a_pj);
                }
            }
            let pivot = lu.at(k, k);
            for i in k + 1..=last_row {
                let l = lu.at(i, k) / pivot;
                let ik = lu.idx(i, k);
                lu.band[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let (ij, kj) = (lu.idx(i, j), lu.idx(k, j));
                        lu.band[ij] -= l * lu.band[kj];
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.lower + self.upper + 1) + (j + self.lower - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[self.idx(i, j)]
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Lower and upper bandwidth after reordering.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "BandedLu::solve: wrong rhs length");
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                let last = (k + self.lower).min(n - 1);
                for (i, xi) in x.iter_mut().enumerate().take(last + 1).skip(k + 1) {
                    *xi -= self.at(i, k) * xk;
                }
            }
        }
        for i in (0..n).rev() {
            let last = (i + self.upper + self.lower).min(n - 1);
            let s = (i + 1..=last).fold(x[i], |s, j| s - self.at(i, j) * x[j]);
            x[i] = s / self.at(i, i);
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}
