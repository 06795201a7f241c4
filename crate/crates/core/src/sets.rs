//! Set-decomposition predicate over index sets.

/// True when the family covers `0..universe` and its members are pairwise
/// disjoint. Empty members are allowed.
pub fn decomposes(universe: usize, family: &[&[usize]]) -> bool {
    let mut seen = vec![false; universe];
    for member in family {
        for &x in member.iter() {
            if x >= universe || seen[x] {
                return false;
            }
            seen[x] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

/// True when `subset` decomposes into the family (every element of the family
/// lies in `subset`, members disjoint, union equal to `subset`).
pub fn decomposes_subset(subset: &[usize], family: &[&[usize]]) -> bool {
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return false;
    }
    let mut members: Vec<usize> = family.iter().flat_map(|m| m.iter().copied()).collect();
    members.sort_unstable();
    members == sorted
}
