//! Numerical laboratory for L∞ variational problems in the plane.
//!
//! The crate builds approximate absolute minimizers for the functional
//! `ess-sup H(Du)` by minimizing the exponential energy `∫ exp(H(Dv)/ε)`
//! on a uniform grid, and verifies the structural identities, Sobolev
//! bounds, determinant-measure properties and cone comparisons that such
//! minimizers satisfy.
//!
//! Modules:
//! - [`hamiltonian`]: convex energy densities H(p), their convexity
//!   profiles, mollification and strong-convexification.
//! - [`grid`]: uniform 2D grid fields with finite-difference calculus.
//! - [`solver`]: damped-Newton minimization of the exponential energy,
//!   ε-continuation and the δ-pipeline for non-smooth H.
//! - [`identities`]: pointwise structural identities, checked exactly on a
//!   closed-form registry and to discretization order on grid fields.
//! - [`diagnostics`]: quantitative estimates evaluated on solved fields.
//! - [`cones`]: cone functions, Lipschitz characterization, comparison
//!   with cones, McShane extension.

pub mod cones;
pub mod diagnostics;
pub mod exec;
pub mod grid;
pub mod hamiltonian;
pub mod identities;
pub mod math;
pub mod rng;
pub mod solver;

pub use grid::{Grid2D, GridFunction, Rect, Region, TestFunction};
pub use hamiltonian::Hamiltonian;
pub use math::{SymMat2, Vec2};
