//! Dark-soliton chains for one-dimensional defocusing nonlinear Schrödinger
//! equations written in hydrodynamical variables (η, v).
//!
//! The crate computes traveling-wave profiles, the energy and momentum
//! functionals, the spectrum of the linearized operator, periodic
//! pseudo-spectral time evolution, modulation (speed/position) tracking of
//! soliton chains, and a set of diagnostics for localized momenta.

pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod field_ops;
pub mod linearization;
pub mod localization;
pub mod modulation;
pub mod nonlinearity;
pub mod profile;
pub mod quadrature;

pub use error::{Error, Result};
pub use field_ops::{FieldOps, Grid, HydroField};
pub use nonlinearity::Nonlinearity;
