//! Covariance machinery: localization, ensemble and climatological
//! covariances, patch extraction and gain assembly from patches.

mod climatology;
mod ensemble;
mod gain;
mod localization;
mod patch;

#[cfg(test)]
mod tests;

pub use climatology::{climatological_b, ClimatologicalB};
pub use ensemble::{
    ensemble_cov_terms, ensemble_mean, extract_patch_samples, perturbation_cov_terms, EnsemblePatches,
    Perturbations,
};
pub use gain::{patches_to_gain_terms, GainTerms};
pub use localization::{gaspari_cohn, LocalizationSpec};
pub use patch::{channel, window, CovPatch, CovPatchSample, PatchProvider, ZeroPatches};
