//! Branch continuation and verification toolkit for the constrained plasma
//! equilibrium problem
//!
//! ```text
//!   -Δψ = (α + λψ)^p  in Ω,   ∫_Ω (α + λψ)^p = 1,   ψ = 0 on ∂Ω,
//! ```
//!
//! on unit-measure domains, together with its free-boundary dual, the
//! spectral theory of the linearized operator, the free-energy formulation,
//! and a genericity probe over randomly perturbed domains.

pub mod continuation;
pub mod dual;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod newton;
pub mod operators;
pub mod probe;
pub mod report;
pub mod spectrum;
pub mod variational;
pub mod verify;

pub use error::{Error, Result};
