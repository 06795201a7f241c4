//! Text file formats: Matrix Market coordinate matrices, partition files
//! (`node_id subdomain_id` per line) and vectors (one real per line).
//!
//! Reals are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces values bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::problem::{DecompositionMap, OriginalMatrix, OriginalVector, Symmetry};
use crate::sparse::CsrMatrix;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a Matrix Market coordinate file with real (or integer) values.
/// Symmetric storage is expanded to full storage.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<OriginalMatrix> {
    parse_matrix_market(&read_to_string(path.as_ref())?)
}

pub fn parse_matrix_market(text: &str) -> Result<OriginalMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty file, expected %%MatrixMarket header"))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::parse(line_no, format!("bad header: {header:?}")));
    }
    if tokens[2] != "coordinate" {
        return Err(Error::parse(line_no, format!("unsupported format {:?}", tokens[2])));
    }
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(Error::parse(line_no, format!("unsupported field {:?}", tokens[3])));
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(Error::parse(line_no, format!("unsupported symmetry {other:?}"))),
    };

    let mut content = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });

    let (size_line, size) = content
        .next()
        .ok_or_else(|| Error::parse(line_no + 1, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(size_line, format!("bad size line: {e}")))?;
    if dims.len() != 3 {
        return Err(Error::parse(size_line, "size line must hold rows, cols and nnz"));
    }
    let (n_rows, n_cols, nnz) = (dims[0], dims[1], dims[2]);
    if n_rows != n_cols {
        return Err(Error::Dimension(format!(
            "matrix is {n_rows}x{n_cols}, expected square"
        )));
    }

    let mut triplets = Vec::with_capacity(match symmetry {
        Symmetry::General => nnz,
        Symmetry::Symmetric => 2 * nnz,
    });
    let mut count = 0;
    for (ln, line) in content {
        count += 1;
        if count > nnz {
            return Err(Error::parse(ln, format!("more than {nnz} entries")));
        }
        let mut fields = line.split_whitespace();
        let mut index = |name: &str, limit: usize| -> Result<usize> {
            let tok = fields
                .next()
                .ok_or_else(|| Error::parse(ln, format!("missing {name} index")))?;
            let idx: usize = tok
                .parse()
                .map_err(|e| Error::parse(ln, format!("bad {name} index {tok:?}: {e}")))?;
            if idx == 0 || idx > limit {
                return Err(Error::parse(ln, format!("{name} index {idx} outside 1..={limit}")));
            }
            Ok(idx - 1)
        };
        let i = index("row", n_rows)?;
        let j = index("column", n_cols)?;
        let tok = fields.next().ok_or_else(|| Error::parse(ln, "missing value"))?;
        let v: f64 = tok
            .parse()
            .map_err(|e| Error::parse(ln, format!("bad value {tok:?}: {e}")))?;
        if fields.next().is_some() {
            return Err(Error::parse(ln, "trailing tokens after value"));
        }
        match symmetry {
            Symmetry::General => triplets.push((i, j, v)),
            Symmetry::Symmetric => {
                if j > i {
                    return Err(Error::parse(ln, "symmetric storage must hold the lower triangle"));
                }
                triplets.push((i, j, v));
                if i != j {
                    triplets.push((j, i, v));
                }
            }
        }
    }
    if count != nnz {
        return Err(Error::parse(
            text.lines().count().max(1),
            format!("expected {nnz} entries, found {count}"),
        ));
    }
    let csr = CsrMatrix::from_triplets(n_rows, n_cols, &triplets)?;
    OriginalMatrix::new(csr, 1, symmetry)
}

/// Writes `matrix` in Matrix Market coordinate format; symmetric matrices
/// store their lower triangle.
pub fn write_matrix_market<W: Write>(matrix: &OriginalMatrix, mut out: W) -> std::io::Result<()> {
    let csr = matrix.csr();
    let symmetric = matrix.symmetry() == Symmetry::Symmetric;
    let entries: Vec<(usize, usize, f64)> = csr.iter().filter(|&(i, j, _)| !symmetric || j <= i).collect();
    let kind = if symmetric { "symmetric" } else { "general" };
    writeln!(out, "%%MatrixMarket matrix coordinate real {kind}")?;
    writeln!(out, "{} {} {}", csr.n_rows(), csr.n_cols(), entries.len())?;
    for (i, j, v) in entries {
        writeln!(out, "{} {} {:?}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn save_matrix(matrix: &OriginalMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_matrix_market(matrix, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a partition file: `node_id subdomain_id` pairs, whitespace
/// separated, `#` starts a comment.
pub fn load_partition(path: impl AsRef<Path>, n_nodes: usize) -> Result<DecompositionMap> {
    parse_partition(&read_to_string(path.as_ref())?, n_nodes)
}

pub fn parse_partition(text: &str, n_nodes: usize) -> Result<DecompositionMap> {
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::parse(ln, format!("expected `node subdomain`, got {line:?}")));
        }
        let node: usize = fields[0]
            .parse()
            .map_err(|e| Error::parse(ln, format!("bad node id {:?}: {e}", fields[0])))?;
        let sub: usize = fields[1]
            .parse()
            .map_err(|e| Error::parse(ln, format!("bad subdomain id {:?}: {e}", fields[1])))?;
        pairs.push((node, sub));
    }
    DecompositionMap::from_pairs(n_nodes, &pairs)
}

pub fn write_partition<W: Write>(dm: &DecompositionMap, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# node subdomain")?;
    for (p, alpha) in dm.pairs() {
        writeln!(out, "{p} {alpha}")?;
    }
    Ok(())
}

pub fn save_partition(dm: &DecompositionMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_partition(dm, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a vector file: one real per line, `d` consecutive lines per node.
pub fn load_vector(path: impl AsRef<Path>, block_dim: usize) -> Result<OriginalVector> {
    parse_vector(&read_to_string(path.as_ref())?, block_dim)
}

pub fn parse_vector(text: &str, block_dim: usize) -> Result<OriginalVector> {
    let mut values = Vec::new();
    for (ln, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|e| Error::parse(ln, format!("bad value {line:?}: {e}")))?;
        values.push(v);
    }
    OriginalVector::new(values, block_dim)
}

pub fn write_vector<W: Write>(values: &[f64], mut out: W) -> std::io::Result<()> {
    for v in values {
        writeln!(out, "{v:?}")?;
    }
    Ok(())
}

pub fn save_vector(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_vector(values, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
