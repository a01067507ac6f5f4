//! Numerical lab for a nonpolynomial differential-difference nonlinear
//! Schrödinger equation with information-theoretic shift potentials.

// `!(x > 0.0)` style guards also reject NaN; stencil loops index several arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod exact;
pub mod io;
pub mod model;
pub mod potentials;
pub mod stationary;

pub use error::{NlsError, Result};
pub use model::{DensityField, ExtensionPolicy, ExternalPotential, Grid1D, ModelParams, WaveField};
pub use potentials::{NodeGuard, PotentialField, PotentialKind};
