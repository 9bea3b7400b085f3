//! P1 finite-element machinery on [`Mesh`](crate::mesh::Mesh): quadrature,
//! sparse assembly, the stabilised form `B_lambda = lambda A + M` and the
//! iterative linear solvers.

mod assembly;
mod quadrature;
mod sparse;

pub use assembly::{
    assemble_mass, assemble_stiffness, assemble_weighted_load, b_lambda, local_mass, local_stiffness,
    norm_lambda, prolongate, DofMap, FeFunction, FeSpace,
};
pub use quadrature::{triangle_quadrature, QuadratureRule};
pub use sparse::{cg_solve, cg_solve_from, dot, minres_solve, norm2, CsrMatrix, SolveInfo};

/// Relative residual tolerance for the global SPD solves.
pub const CG_TOL: f64 = 1e-12;

/// Iteration cap for CG as a multiple of the system size.
pub fn cg_maxit(n: usize) -> usize {
    (10 * n).max(100)
}
