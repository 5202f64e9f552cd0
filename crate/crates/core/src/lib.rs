//! Finite-difference / FFT solver for two-asset European options under
//! exponential Normal Tempered Stable Lévy models.

pub mod error;
pub mod experiment;
pub mod fft_conv;
pub mod grids;
pub mod levy;
pub mod linsolve;
pub mod mc;
pub mod payoff;
pub mod quadrature;
pub mod sparse;
pub mod spatial_ops;
pub mod special;
pub mod stepper;

pub use error::{PideError, Result};
