//! Numerical Morse homology for the quasilinear energy
//! f(u) = (1/2p)∫(1+|∇u|²)^p + ∫G(u) on boxes in one or two dimensions with
//! zero Dirichlet data.
//!
//! The pipeline finds critical points by deflated Newton, reads Morse indices
//! off the pencil (d²f(ū), ⟨·,·⟩_ū), counts connecting descent orbits mod 2 and
//! assembles the resulting ℤ₂ chain complex.

// `!(x > 0.0)` style tests are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critical_search;
pub mod discretization;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod functional;
pub mod morse_complex;
pub mod spectral;

pub use error::{Error, Result};
