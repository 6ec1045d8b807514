//! Immersed-boundary finite differences for the complete electrode model of
//! electrical impedance tomography on Cartesian grids, with gradient-based
//! reconstruction of the interior conductivity and of electrode positions.

pub mod assembly;
pub mod config;
pub mod conductivity;
pub mod convergence;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod inverse;
pub mod io;
pub mod mesh;
pub mod quadrature;
pub mod shapes;
pub mod solve;
pub mod sparse;

pub use error::{Error, Result};
