use edvs_core::{
    build_derived_space, inject, inner_product_derived, inner_product_original, project_a, project_j, retract,
    DecompositionMap, DerivedSpace, DerivedVector, NodeId, OriginalVector, PrimalRule,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random decomposition: every node gets a nonempty subset of `e` subdomains,
/// plus a vector of values per derived dof.
fn decomposition() -> impl Strategy<Value = (Vec<Vec<usize>>, usize, usize)> {
    (1usize..25, 1usize..6, 1usize..4).prop_flat_map(|(n, e, d)| {
        let masks = prop::collection::vec(1u32..(1 << e), n);
        (masks, Just(e), Just(d)).prop_map(|(masks, e, d)| {
            let memberships = masks
                .into_iter()
                .map(|m| (0..e).filter(|a| m & (1 << a) != 0).collect())
                .collect();
            (memberships, e, d)
        })
    })
}

fn values(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn setup(memberships: &[Vec<usize>], d: usize) -> (DecompositionMap, DerivedSpace) {
    let dm = DecompositionMap::from_memberships(memberships.to_vec()).unwrap();
    let ds = build_derived_space(&dm, &PrimalRule::None, d).unwrap();
    (dm, ds)
}

/// Weighted inner product computed from the membership lists alone.
fn oracle_inner(memberships: &[Vec<usize>], d: usize, ds: &DerivedSpace, u: &[f64], v: &[f64]) -> f64 {
    ds.nodes()
        .iter()
        .enumerate()
        .map(|(k, dn)| {
            let m = memberships[dn.node.0].len() as f64;
            (0..d).map(|c| u[k * d + c] * v[k * d + c]).sum::<f64>() / m
        })
        .sum()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn derived_nodes_match_memberships((memberships, e, d) in decomposition()) {
        let (_, ds) = setup(&memberships, d);
        let total: usize = memberships.iter().map(Vec::len).sum();
        prop_assert_eq!(ds.len(), total);
        prop_assert!(ds.n_subdomains() <= e);
        prop_assert!(ds.check_invariants());
        for (p, members) in memberships.iter().enumerate() {
            prop_assert_eq!(ds.descendants(NodeId(p)).len(), members.len());
            for &k in ds.descendants(NodeId(p)) {
                prop_assert_eq!(ds.node(k).node, NodeId(p));
            }
        }
    }

    #[test]
    fn projections_are_complementary((memberships, _e, d) in decomposition(), seed in any::<u64>()) {
        let (_, ds) = setup(&memberships, d);
        let u = DerivedVector::from_values(&ds, values(ds.n_dofs(), seed)).unwrap();
        let au = project_a(&u, &ds).unwrap();
        let ju = project_j(&u, &ds).unwrap();
        let scale = 1.0 + max_abs(u.values());
        prop_assert!(max_abs_diff(project_a(&au, &ds).unwrap().values(), au.values()) <= 1e-14 * scale);
        prop_assert!(max_abs_diff(project_j(&ju, &ds).unwrap().values(), ju.values()) <= 1e-14 * scale);
        prop_assert!(max_abs_diff(au.add(&ju).values(), u.values()) <= 1e-15 * scale);

        // a u is the group average, computed here from scratch
        for (k, dn) in ds.nodes().iter().enumerate() {
            for c in 0..d {
                let group: Vec<usize> = ds.nodes().iter().enumerate()
                    .filter(|(_, o)| o.node == dn.node).map(|(i, _)| i).collect();
                let avg = group.iter().map(|&i| u.values()[i * d + c]).sum::<f64>() / group.len() as f64;
                prop_assert!((au.values()[k * d + c] - avg).abs() <= 1e-14 * scale);
            }
        }
    }

    #[test]
    fn ranges_are_orthogonal((memberships, _e, d) in decomposition(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let (_, ds) = setup(&memberships, d);
        let u = DerivedVector::from_values(&ds, values(ds.n_dofs(), s1)).unwrap();
        let v = DerivedVector::from_values(&ds, values(ds.n_dofs(), s2)).unwrap();
        let au = project_a(&u, &ds).unwrap();
        let jv = project_j(&v, &ds).unwrap();
        let ip = oracle_inner(&memberships, d, &ds, au.values(), jv.values());
        let norms = oracle_inner(&memberships, d, &ds, u.values(), u.values()).sqrt()
            * oracle_inner(&memberships, d, &ds, v.values(), v.values()).sqrt();
        prop_assert!(ip.abs() <= 1e-12 * norms.max(f64::MIN_POSITIVE));
        let lib = inner_product_derived(&au, &jv, &ds).unwrap();
        prop_assert!((lib - ip).abs() <= 1e-13 * norms.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn injection_is_an_isometry((memberships, _e, d) in decomposition(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let (dm, ds) = setup(&memberships, d);
        let n = dm.n_nodes();
        let x = OriginalVector::new(values(n * d, s1), d).unwrap();
        let y = OriginalVector::new(values(n * d, s2), d).unwrap();
        let (ax, ay) = (inject(&x, &ds).unwrap(), inject(&y, &ds).unwrap());
        let lhs = oracle_inner(&memberships, d, &ds, ax.values(), ay.values());
        let rhs: f64 = x.values().iter().zip(y.values()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (x.norm() * y.norm()).max(f64::MIN_POSITIVE));
        prop_assert!((inner_product_original(&x, &y).unwrap() - rhs).abs() <= 1e-12 * (x.norm() * y.norm()).max(f64::MIN_POSITIVE));
        // injected vectors are continuous
        prop_assert!(max_abs_diff(project_j(&ax, &ds).unwrap().values(), &vec![0.0; ds.n_dofs()]) <= 1e-15 * (1.0 + x.max_abs()));
    }

    #[test]
    fn retraction_inverts_injection((memberships, _e, d) in decomposition(), seed in any::<u64>()) {
        let (dm, ds) = setup(&memberships, d);
        let x = OriginalVector::new(values(dm.n_nodes() * d, seed), d).unwrap();
        let back = retract(&inject(&x, &ds).unwrap(), &ds).unwrap();
        prop_assert!(max_abs_diff(back.values(), x.values()) <= 1e-14 * (1.0 + x.max_abs()));
    }
}

#[test]
fn weighted_inner_product_example() {
    let dm = DecompositionMap::from_pairs(5, &[(0, 0), (1, 0), (2, 0), (2, 1), (3, 1), (4, 1)]).unwrap();
    let ds = build_derived_space(&dm, &PrimalRule::None, 1).unwrap();
    let ones = DerivedVector::from_values(&ds, vec![1.0; 6]).unwrap();
    assert_eq!(inner_product_derived(&ones, &ones, &ds).unwrap(), 5.0);
}
