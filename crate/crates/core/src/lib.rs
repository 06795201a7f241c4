//! Derived-vector-space domain decomposition.
//!
//! A problem `M u = f` on original nodes is paired with a decomposition into
//! closed subdomains. Each node is copied once per subdomain containing it,
//! giving the derived nodes on which the solver works. Interior blocks are
//! block-diagonal by subdomain, so they are factored independently and the
//! remaining interface problem is solved by a Krylov iteration on continuous
//! derived vectors.
//!
//! ```
//! use edvs_core::{solve_dvs, ProblemInstance, SolveConfig};
//!
//! let problem = ProblemInstance::poisson_2d(9, 9, 2, 2)?;
//! let solution = solve_dvs(&problem, &SolveConfig::default())?;
//! assert!(solution.report.final_original_residual < 1e-9);
//! # Ok::<(), edvs_core::Error>(())
//! ```

pub mod derived;
pub mod dual;
pub mod error;
pub mod factor;
pub mod io;
pub mod problem;
pub mod schur;
pub mod sets;
pub mod solver;
pub mod sparse;

pub use derived::{
    build_derived_space, continuity_defect, derived_norm, duality_defect, inject, inner_product_derived,
    inner_product_original, is_dual, project_a, project_j, retract, DerivedNode, DerivedSpace, DerivedVector,
    NodeClass, PrimalRule,
};
pub use dual::{exchange, split_by_subdomain, Block, ContinuityPolicy, DualOperator, SubdomainSlice};
pub use error::{Error, Phase, Result};
pub use problem::{
    classify_original_nodes, generate_box_partition, generate_poisson_1d, generate_poisson_2d, validate_locality,
    DecompositionMap, LocalityReport, NodeId, OriginalMatrix, OriginalVector, ProblemInstance, SubdomainId, Symmetry,
};
pub use schur::{block_pseudo_inverse, null_space, pseudo_inverse_apply, schur_sigma, solve_via_schur, IndexSplit};
pub use solver::{
    assemble_dual_rhs, direct_solve, factor_interior, solve_dvs, verify_solution, DvsSolution, InterfaceSystem,
    InteriorFactorization, Krylov, SolveConfig, SolveReport,
};
pub use sparse::CsrMatrix;
