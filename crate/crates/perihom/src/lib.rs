//! Finite-element toolkit for periodic homogenization of semilinear elliptic
//! problems with localized coefficient defects.
//!
//! The crate solves Dirichlet problems of the form
//!
//! ```text
//! div( (a(x/eps) + b(x/eps)) grad u + c(x,u) ) = d(x,u)   in Omega,
//! u = 0                                                   on the boundary,
//! ```
//!
//! where `a` is a periodic tensor, `b` a localized defect, and `c`, `d`
//! semilinear lower-order terms. It provides
//!
//! * structured simplicial meshes for unit cells (periodic) and rectangles
//!   ([`mesh`]),
//! * coefficient/nonlinearity galleries with coercivity checks ([`coeffs`]),
//! * P1 assembly, sparse solvers and a discrete dual-norm surrogate
//!   ([`assembly`], [`sparse`]),
//! * cell-problem solutions, homogenized tensors and flux correctors
//!   ([`cell`]),
//! * Steklov smoothing, boundary cutoffs and corrector-expansion approximate
//!   solutions ([`corrector`]),
//! * Newton and frozen-Jacobian contraction solvers ([`solver`]),
//! * epsilon-ladder convergence, defect-decay and residual-decay studies
//!   ([`study`]),
//! * a JSON experiment configuration shared with the `perihom` CLI
//!   ([`config`]) and artifact export helpers ([`export`]).

pub mod assembly;
pub mod cell;
pub mod coeffs;
pub mod config;
pub mod corrector;
pub mod export;
pub mod mesh;
pub mod quad;
pub mod solver;
pub mod sparse;
pub mod study;

mod error;

pub use error::{Error, Result};
