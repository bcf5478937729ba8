//! Sparse linear algebra: CSR storage, conjugate gradients, a simplicial
//! LDL^T / LDU direct factorization with nested-dissection ordering, and
//! generalized eigenvalue estimates used for coercivity certificates.

mod cg;
mod csr;
mod eigen;
mod factor;
mod ordering;

pub use cg::{solve_cg, solve_cg_projected, CgOutcome};
pub use csr::{SparseOperator, TripletBuilder};
pub use eigen::{smallest_eig_spd, smallest_singular_value};
pub use factor::LduFactor;
pub use ordering::Ordering;
