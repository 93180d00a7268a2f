//! Assimilation algorithms sharing one linear-solve core.

mod config;
mod cycle;
mod ensemble;
mod obs;
mod solve;


pub use config::{DAConfig, Method};
pub use cycle::{
    en3dvar_cycle, enkf_cycle, threedvar_cycle, unetkf_cycle, EnsemblePatchSource, Localization, ObsSet,
    PatchSource, Perturber,
};
pub use ensemble::{relax_to_prior, Ensemble};
pub use obs::{apply_h, sample_observations, ObsBatch, ObsOperator, ObsRow, OBS_ERROR_SD, OBS_PER_CYCLE};
pub use solve::{oi_increment, KalmanSolver};
