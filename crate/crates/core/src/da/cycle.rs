use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::ensemble::{relax_to_prior, Ensemble};
use super::obs::{ObsBatch, ObsOperator};
use super::solve::KalmanSolver;
use crate::cov::{
    patches_to_gain_terms, perturbation_cov_terms, EnsemblePatches, GainTerms, LocalizationSpec,
    PatchProvider, Perturbations,
};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::rng::SeedTree;

/// Linearized observations for one analysis: operator, values and `diag(R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsSet {
    pub op: ObsOperator,
    pub y: Vec<f64>,
    pub r: Vec<f64>,
}

impl ObsSet {
    pub fn new(op: ObsOperator, y: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if y.len() != op.len() || r.len() != op.len() {
            return Err(Error::config("observation values, R and operator differ in length"));
        }
        if r.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("observation error variances must be > 0"));
        }
        Ok(Self { op, y, r })
    }

    pub fn from_batch(batch: &ObsBatch, grid: &GridSpec) -> Result<Self> {
        batch.validate()?;
        Self::new(batch.operator(grid), batch.values.clone(), batch.r_diag())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn innovation(&self, x: &[f64]) -> Vec<f64> {
        self.y.iter().zip(self.op.apply(x)).map(|(y, hx)| y - hx).collect()
    }
}

/// Observation perturbations `εᵢ ~ N(0, R)`, one independent stream per
/// (member, cycle).
#[derive(Debug, Clone, Copy)]
pub struct Perturber {
    seeds: SeedTree,
    cycle: u64,
    enabled: bool,
}

impl Perturber {
    pub fn new(seeds: SeedTree, cycle: u64) -> Self {
        Self {
            seeds,
            cycle,
            enabled: true,
        }
    }

    /// All `εᵢ = 0`.
    pub fn disabled() -> Self {
        Self {
            seeds: SeedTree::new(0),
            cycle: 0,
            enabled: false,
        }
    }

    pub fn draw(&self, member: usize, r: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return vec![0.0; r.len()];
        }
        let mut rng = self.seeds.stream("obs-perturbation", member as u64, self.cycle);
        r.iter()
            .map(|v| Normal::new(0.0, v.sqrt()).unwrap().sample(&mut rng))
            .collect()
    }
}

/// Gaspari–Cohn localization applied through covariance patches of side `patch`.
#[derive(Debug, Clone)]
pub struct Localization {
    pub spec: LocalizationSpec,
    pub patch: usize,
}

impl Localization {
    pub fn new(radius_m: f64, grid: GridSpec, patch: usize) -> Result<Self> {
        Ok(Self {
            spec: LocalizationSpec::new(radius_m, grid)?,
            patch,
        })
    }
}

fn add(x: &[f64], dx: &[f64]) -> Vec<f64> {
    x.iter().zip(dx).map(|(a, b)| a + b).collect()
}

/// How the perturbation enters each member's innovation.
#[derive(Clone, Copy)]
enum Perturb {
    /// `y° - (H xᵢ + εᵢ)`.
    Model,
    /// `(y° + εᵢ) - H xᵢ`.
    Obs,
}

/// Update every member with its own perturbed innovation, sharing one
/// factorization.
fn member_updates(
    members: &[Vec<f64>],
    obs: &ObsSet,
    terms: &GainTerms,
    eps: &Perturber,
    mode: Perturb,
    learned: bool,
) -> Result<Vec<Vec<f64>>> {
    let solver = if learned {
        KalmanSolver::repaired(terms, &obs.r)?
    } else {
        KalmanSolver::new(terms, &obs.r)?
    };
    Ok(members
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let e = eps.draw(i, &obs.r);
            let d: Vec<f64> = match mode {
                Perturb::Model => obs.innovation(x).iter().zip(&e).map(|(d, e)| d - e).collect(),
                Perturb::Obs => obs.innovation(x).iter().zip(&e).map(|(d, e)| d + e).collect(),
            };
            add(x, &solver.increment(&d))
        })
        .collect())
}

/// 3DVar with a static background covariance served as patches.
pub fn threedvar_cycle(
    xb: &[f64],
    obs: &ObsSet,
    b: &dyn PatchProvider,
    loc: Option<&LocalizationSpec>,
) -> Result<Vec<f64>> {
    if obs.is_empty() {
        return Ok(xb.to_vec());
    }
    let terms = patches_to_gain_terms(b, &obs.op, loc)?;
    let solver = KalmanSolver::new(&terms, &obs.r)?;
    Ok(add(xb, &solver.increment(&obs.innovation(xb))))
}

/// Ensemble of independent 3DVar analyses, each against `y° + εᵢ`.
pub fn en3dvar_cycle(
    ens: &Ensemble,
    obs: &ObsSet,
    b: &dyn PatchProvider,
    loc: Option<&LocalizationSpec>,
    eps: &Perturber,
) -> Result<Ensemble> {
    if obs.is_empty() {
        return Ok(ens.clone());
    }
    let terms = patches_to_gain_terms(b, &obs.op, loc)?;
    Ensemble::new(member_updates(ens.members(), obs, &terms, eps, Perturb::Obs, false)?)
}

/// Perturbed-observation EnKF with relaxation to prior perturbations.
/// With localization the gain terms are assembled from exact ensemble
/// patches; without it they come straight from the perturbations.
pub fn enkf_cycle(
    ens: &Ensemble,
    obs: &ObsSet,
    loc: Option<&Localization>,
    alpha: f64,
    eps: &Perturber,
) -> Result<Ensemble> {
    if ens.size() < 2 {
        return Err(Error::config("EnKF needs at least 2 members"));
    }
    if obs.is_empty() {
        return Ok(ens.clone());
    }
    let (_, perts) = Perturbations::from_members(ens.members())?;
    if !perts.total_variance().is_finite() {
        return Err(Error::EnsembleCollapse("non-finite ensemble spread".into()));
    }
    let terms = match loc {
        None => perturbation_cov_terms(&perts, &obs.op, None)?,
        Some(l) => {
            let provider = EnsemblePatches::new(*l.spec.grid(), l.patch, perts)?;
            patches_to_gain_terms(&provider, &obs.op, Some(&l.spec))?
        }
    };
    let posterior = member_updates(ens.members(), obs, &terms, eps, Perturb::Model, false)?;
    Ensemble::new(relax_to_prior(ens.members(), &posterior, alpha)?)
}

/// Something that turns a forecast into covariance patches: a trained
/// network, or the ensemble itself.
pub trait PatchSource: Sync {
    fn provider<'s>(&'s self, mean: &[f64], ens: &Ensemble) -> Result<Box<dyn PatchProvider + 's>>;
}

/// Patch source that reads exact sample covariances off the ensemble.
#[derive(Debug, Clone)]
pub struct EnsemblePatchSource {
    pub grid: GridSpec,
    pub patch: usize,
}

impl PatchSource for EnsemblePatchSource {
    fn provider<'s>(&'s self, _mean: &[f64], ens: &Ensemble) -> Result<Box<dyn PatchProvider + 's>> {
        Ok(Box::new(EnsemblePatches::from_members(self.grid, self.patch, ens.members())?))
    }
}

/// EnKF with the ensemble covariance replaced by source-predicted patches.
/// A single member gets one unperturbed OI update. Predicted covariances
/// may be indefinite; see [`KalmanSolver::repaired`].
pub fn unetkf_cycle(
    ens: &Ensemble,
    obs: &ObsSet,
    source: &dyn PatchSource,
    loc: Option<&LocalizationSpec>,
    alpha: f64,
    eps: &Perturber,
) -> Result<Ensemble> {
    if obs.is_empty() {
        return Ok(ens.clone());
    }
    let provider = source.provider(ens.mean(), ens)?;
    let terms = patches_to_gain_terms(provider.as_ref(), &obs.op, loc)?;
    if ens.size() == 1 {
        let x = &ens.members()[0];
        let solver = KalmanSolver::repaired(&terms, &obs.r)?;
        return Ensemble::new(vec![add(x, &solver.increment(&obs.innovation(x)))]);
    }
    let posterior = member_updates(ens.members(), obs, &terms, eps, Perturb::Model, true)?;
    Ensemble::new(relax_to_prior(ens.members(), &posterior, alpha)?)
}
