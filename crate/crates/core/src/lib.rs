//! Spectral laboratory for the Korteweg–de Vries equation with white-noise data on a torus.
//!
//! The crate discretizes `R/2L0Z` with `N` Fourier modes and provides:
//!
//! * [`field`] / [`grid`]: periodic fields, Sobolev norms, dealiased products;
//! * [`noise`]: truncated white noise with counter-based seeding;
//! * [`spectral`]: `-∂² + q`, its resolvent and diagonal Green's function `g(x; q, k)`;
//! * [`flows`]: the `H_k` flows and KdV, with conservation monitoring;
//! * [`diagnostics`]: multiscale resolvent identities, weighted norms, kernel decay;
//! * [`stats`]: Monte Carlo batteries with versioned JSON reports.

pub mod diagnostics;
pub mod error;
mod fft;
pub mod field;
pub mod flows;
pub mod grid;
pub mod noise;
pub mod spectral;
pub mod stats;

pub use error::{LabError, Result};
pub use field::{Field, FieldJson, SobolevWeight};
pub use grid::TorusGrid;
pub use noise::NoiseSampler;
pub use spectral::{DiagGreen, GreenMethod, Resolvent, SchrodingerOp, SpectralPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
