//! Adaptive finite elements with separate marking.
//!
//! The crate provides newest-vertex bisection meshes ([`mesh`]), triangle
//! quadrature and data oscillation ([`quadrature`]), bulk marking and
//! thresholding data approximation ([`marking`]), lowest-order
//! Raviart-Thomas mixed and least-squares Poisson solvers ([`fem_mixed`],
//! [`fem_ls`]), the separate/collective adaptive loops ([`driver`]) and
//! empirical checks of the convergence axioms ([`axioms`]).

pub mod error;
pub mod mesh;
pub mod quadrature;

pub use error::{Error, Result};
pub mod marking;
pub mod rt0;
pub mod sparse;
pub mod fem_mixed;
pub mod fem_ls;
pub mod driver;
pub mod axioms;
