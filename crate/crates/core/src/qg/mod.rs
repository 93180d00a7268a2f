//! Two-layer quasi-geostrophic model, regridding, and snapshot helpers.

mod fft;
mod model;
mod regrid;

pub use fft::{Fft2, FftScratch};
pub use model::{
    ModelParams, ModelState, Numerics, QgModel, Snapshot, Startup, SECONDS_PER_DAY, SECONDS_PER_YEAR,
};
pub use regrid::{regrid, regrid_field, sample_bilinear, RegridMethod};
pub(crate) use regrid::axis_weights;
