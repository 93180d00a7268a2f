//! Twin-experiment workbench for learned-covariance ensemble data
//! assimilation on a two-layer quasi-geostrophic model.

pub mod cov;
pub mod da;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod qg;
pub mod rng;
pub mod unet;

pub use error::{Error, Result};
pub use grid::GridSpec;
