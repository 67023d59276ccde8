//! Numerical laboratory for the normalized Sasaki–Ricci flow in reduced
//! transverse Monge–Ampère form on U(1)-symmetric models.
//!
//! Everything lives on the moment interval `y ∈ [-1, 1]`. A transverse Kähler
//! metric is encoded by its potential `φ` relative to a background profile
//! `ϕ₀`, and all integrals use the reduced measure `dm = D dy` with total
//! volume 2.

pub mod app;
pub mod check;
pub mod config;
pub mod continuity;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod geometry;
pub mod io;
pub mod spectral1d;
pub mod stability;

pub use error::{Error, Result};
pub use geometry::{BackgroundGeometry, GeometryConfig, MetricState};
pub use spectral1d::{Field, Grid};

/// Reduced volume of every state.
pub const VOL: f64 = 2.0;
