//! Quantitative stochastic homogenization on periodic lattices.
//!
//! The crate computes correctors `φ_i`, skew flux correctors `σ_i` and the
//! homogenized matrix `a_h` for random conductance fields on a torus, measures
//! the sublinear growth of `(φ, σ)`, and runs the decay experiments that compare
//! heterogeneous solutions with their corrected homogenized counterparts.
//!
//! Module layout follows the data flow of an experiment:
//!
//! * [`lattice`] – grids, fields, finite differences, balls and cutoffs
//! * [`coefficients`] – conductance fields and seeded ensembles
//! * [`solver`] – preconditioned CG for `-∇·a∇u = ∇·g + f`
//! * [`correctors`] – `φ`, `q`, `σ`, `a_h` and their certification
//! * [`growth`] – growth profile `ω(r)`, exponent fit and `r_*` detection
//! * [`excess`] – a-harmonic samples and intrinsic excess decay
//! * [`experiments`] – two-scale error, Green's function and compactness checks

// NaN must fail range checks, so `!(x > 0.0)` is intended throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod correctors;
mod error;
pub mod excess;
pub mod experiments;
pub mod fit;
pub mod lattice;
mod reduce;
pub mod rng;
pub mod solver;
pub mod growth;

pub use error::{Error, Result};
