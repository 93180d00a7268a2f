//! One twin experiment: cycle a DA method against the truth and record
//! daily verification.

use rayon::prelude::*;

use super::stats::{layer_rmse, mean, truth_on_grid};
use super::truth::{advance_days, ControlRun, Truth};
use crate::cov::{window, CovPatchSample, EnsemblePatches, LocalizationSpec, Perturbations};
use crate::da::{
    en3dvar_cycle, enkf_cycle, sample_observations, threedvar_cycle, unetkf_cycle, DAConfig, Ensemble, Localization,
    Method, ObsBatch, ObsSet, PatchSource, Perturber, OBS_ERROR_SD, OBS_PER_CYCLE,
};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::qg::{ModelParams, ModelState, QgModel, RegridMethod, Snapshot, SECONDS_PER_DAY};
use crate::rng::SeedTree;
use crate::unet::{Checkpoint, NetSource, PatchDataset, PatchRecord, TransferSource};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub da: DAConfig,
    /// Forecast grid side.
    pub n: usize,
    /// Covariance patch side on the forecast grid.
    pub patch: usize,
    /// First truth day of the run.
    pub start_day: usize,
    pub days: usize,
    pub obs_per_cycle: usize,
    pub obs_error_sd: [f64; 2],
    /// Multiplier on the climatological B (3DVar, En3DVar).
    pub b_scale: f64,
    /// Grid the network was trained on, when it differs from `n`.
    pub transfer_from: Option<usize>,
    pub regrid: RegridMethod,
    /// Keep training samples at every `k`-th centre of each forecast.
    pub capture_stride: Option<usize>,
    /// Keep every forecast ensemble at cycle times.
    pub store_ensembles: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            da: DAConfig::default(),
            n: 32,
            patch: 16,
            start_day: 0,
            days: 365,
            obs_per_cycle: OBS_PER_CYCLE,
            obs_error_sd: OBS_ERROR_SD,
            b_scale: 1.0,
            transfer_from: None,
            regrid: RegridMethod::Bilinear,
            capture_stride: None,
            store_ensembles: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.da.validate()?;
        GridSpec::square(self.n)?;
        let c = self.da.cycle_days;
        if c.fract() != 0.0 || c < 1.0 {
            return Err(Error::config(format!("da.cycle_days must be a whole number of days, got {c}")));
        }
        if !self.patch.is_multiple_of(2) || self.patch == 0 || self.patch > self.n {
            return Err(Error::config(format!(
                "experiment.patch must be even and at most the grid size {}, got {}",
                self.n, self.patch
            )));
        }
        if self.obs_error_sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("obs.error_sd must be > 0 for both layers"));
        }
        if !(self.b_scale > 0.0) {
            return Err(Error::config("da.b_scale must be > 0"));
        }
        if self.capture_stride == Some(0) {
            return Err(Error::config("experiment.capture_stride must be >= 1"));
        }
        if let Some(c) = self.transfer_from {
            if c >= self.n || !self.n.is_multiple_of(c) {
                return Err(Error::config(format!(
                    "unet.transfer_from = {c} must be a coarser divisor of the grid size {}",
                    self.n
                )));
            }
        }
        Ok(())
    }

    fn cycle_every(&self) -> usize {
        self.da.cycle_days as usize
    }
}

/// Forecast ensemble at one analysis time.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEnsemble {
    pub day: usize,
    pub members: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    /// Verification times, seconds since truth day 0.
    pub times: Vec<f64>,
    pub cycle_times: Vec<f64>,
    pub rmse: [Vec<f64>; 2],
    /// Ensemble spread, when the run has at least two members.
    pub spread: Option<[Vec<f64>; 2]>,
    pub dataset: Option<PatchDataset>,
    pub ensembles: Vec<StoredEnsemble>,
}

impl ExperimentRecord {
    /// Time-mean RMSE per layer, skipping the first `skip_days`.
    pub fn mean_rmse(&self, skip_days: usize) -> [f64; 2] {
        let s = skip_days.min(self.times.len());
        [mean(&self.rmse[0][s..]), mean(&self.rmse[1][s..])]
    }

    /// Whether the time-mean spread stays within a factor of three of the
    /// time-mean RMSE in both layers.
    pub fn spread_consistent(&self, skip_days: usize) -> Option<bool> {
        let spread = self.spread.as_ref()?;
        let s = skip_days.min(self.times.len());
        let rmse = self.mean_rmse(skip_days);
        Some((0..2).all(|l| {
            let r = mean(&spread[l][s..]) / rmse[l];
            (1.0 / 3.0..=3.0).contains(&r)
        }))
    }
}

/// Inputs shared by matched experiments.
#[derive(Clone, Copy)]
pub struct Assets<'a> {
    pub truth: &'a Truth,
    /// Forecast-grid control run (initial members, climatological B).
    pub control: &'a ControlRun,
    pub checkpoint: Option<&'a Checkpoint>,
    /// Pre-generated observations; drawn from the seed when absent.
    pub observations: Option<&'a [ObsBatch]>,
}

enum Analysis {
    None,
    Var { b: crate::cov::ClimatologicalB, loc: LocalizationSpec },
    EnKF(Localization),
    UNet { source: Box<dyn PatchSource>, loc: LocalizationSpec },
}

fn analysis_for(cfg: &ExperimentConfig, grid: GridSpec, assets: &Assets) -> Result<Analysis> {
    let radius = cfg.da.localization_m;
    Ok(match cfg.da.method {
        Method::Control => Analysis::None,
        Method::ThreeDVar | Method::En3DVar => {
            let b = assets.control.climatological_b(cfg.patch)?;
            let scale = b.scale().map(|s| s * cfg.b_scale);
            Analysis::Var {
                b: b.with_scale(scale),
                loc: LocalizationSpec::new(radius, grid)?,
            }
        }
        Method::EnKF => Analysis::EnKF(Localization::new(radius, grid, cfg.patch)?),
        Method::UNetKF => {
            let ck = assets
                .checkpoint
                .ok_or_else(|| Error::config("unetkf needs a network checkpoint (da.checkpoint)"))?
                .clone();
            let source: Box<dyn PatchSource> = match cfg.transfer_from {
                None => {
                    if ck.p != cfg.patch {
                        return Err(Error::config(format!(
                            "checkpoint was trained on {0}×{0} patches, experiment uses {1}×{1}; \
                             set unet.transfer_from for cross-resolution use",
                            ck.p, cfg.patch
                        )));
                    }
                    Box::new(NetSource { checkpoint: ck, grid })
                }
                Some(c) => Box::new(TransferSource {
                    checkpoint: ck,
                    fine: grid,
                    coarse: GridSpec::new(c, grid.length())?,
                    method: cfg.regrid,
                }),
            };
            Analysis::UNet {
                source,
                loc: LocalizationSpec::new(radius, grid)?,
            }
        }
    })
}

/// Training samples from one forecast ensemble at every `stride`-th centre.
/// The subsample rotates with `day` so successive cycles cover different
/// centres.
pub fn capture_samples(
    members: &[Vec<f64>],
    grid: &GridSpec,
    p: usize,
    stride: usize,
    day: usize,
) -> Result<Vec<PatchRecord>> {
    if stride == 0 {
        return Err(Error::config("capture stride must be >= 1"));
    }
    let (mean, perts) = Perturbations::from_members(members)?;
    let provider = EnsemblePatches::new(*grid, p, perts)?;
    let centers: Vec<usize> = (0..grid.points()).filter(|c| (c + day).is_multiple_of(stride)).collect();
    Ok(centers
        .par_iter()
        .map(|&c| {
            PatchRecord::from(&CovPatchSample {
                cycle: day as u64,
                center: c,
                input: window(&mean, grid, c, p),
                output: provider.patch(c),
            })
        })
        .collect())
}

/// The seeded observation batch for one truth day.
pub fn observe(cfg: &ExperimentConfig, snap: &Snapshot, truth_grid: &GridSpec, day: usize) -> ObsBatch {
    sample_observations(
        snap.as_slice(),
        truth_grid,
        day as f64 * SECONDS_PER_DAY,
        cfg.obs_per_cycle,
        cfg.obs_error_sd,
        &mut SeedTree::new(cfg.da.seed).stream("obs", day as u64, 0),
    )
}

/// Observation batches for every cycle of an experiment.
pub fn observation_stream(cfg: &ExperimentConfig, truth: &Truth) -> Result<Vec<ObsBatch>> {
    cfg.validate()?;
    (cfg.start_day..cfg.start_day + cfg.days)
        .step_by(cfg.cycle_every())
        .map(|day| Ok(observe(cfg, truth.day(day)?, &truth.grid, day)))
        .collect()
}

/// Run one experiment. A pure function of the config and the assets.
pub fn run_experiment(cfg: &ExperimentConfig, assets: &Assets) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let truth = assets.truth;
    if cfg.start_day + cfg.days > truth.days() {
        return Err(Error::config(format!(
            "experiment needs truth days {}..{}, truth has {}",
            cfg.start_day,
            cfg.start_day + cfg.days,
            truth.days()
        )));
    }
    if assets.control.grid.n() != cfg.n {
        return Err(Error::config(format!(
            "control run is on a {}-grid, experiment on a {}-grid",
            assets.control.grid.n(),
            cfg.n
        )));
    }
    let grid = GridSpec::new(cfg.n, truth.grid.length())?;
    let model = QgModel::new(grid, ModelParams::for_grid(cfg.n))?;
    let seeds = SeedTree::new(cfg.da.seed);
    let perturb_seeds = seeds.child("perturb");
    let analysis = analysis_for(cfg, grid, assets)?;
    let n_mem = cfg.da.ensemble_size;
    let every = cfg.cycle_every();

    let t0 = cfg.start_day as f64 * SECONDS_PER_DAY;
    let mut states: Vec<ModelState> = assets
        .control
        .draw_members(n_mem, &seeds)?
        .iter()
        .map(|m| model.state_from_slice(m, t0))
        .collect::<Result<_>>()?;

    let mut rec = ExperimentRecord {
        config: cfg.clone(),
        times: Vec::with_capacity(cfg.days),
        cycle_times: Vec::new(),
        rmse: [Vec::with_capacity(cfg.days), Vec::with_capacity(cfg.days)],
        spread: (n_mem >= 2).then(|| [Vec::with_capacity(cfg.days), Vec::with_capacity(cfg.days)]),
        dataset: cfg.capture_stride.map(|_| PatchDataset::new(cfg.patch)),
        ensembles: Vec::new(),
    };

    for d in 0..cfg.days {
        let day = cfg.start_day + d;
        let time = day as f64 * SECONDS_PER_DAY;
        let snap = truth.day(day)?;
        let cycle = d / every;
        let mut ens = Ensemble::new(states.iter().map(|s| s.as_slice().to_vec()).collect())?;

        if d % every == 0 && !matches!(analysis, Analysis::None) {
            let at = |e: Error| e.at_cycle(cycle);
            if n_mem >= 2 && ens.spread(2).iter().all(|s| *s == 0.0) {
                return Err(at(Error::EnsembleCollapse(format!(
                    "all {n_mem} members identical before the analysis"
                ))));
            }
            if let (Some(stride), Some(ds)) = (cfg.capture_stride, rec.dataset.as_mut()) {
                ds.samples.extend(capture_samples(ens.members(), &grid, cfg.patch, stride, day).map_err(at)?);
            }
            if cfg.store_ensembles {
                rec.ensembles.push(StoredEnsemble {
                    day,
                    members: ens.members().to_vec(),
                });
            }
            let obs = match assets.observations {
                Some(all) => {
                    let batch = all.iter().find(|b| (b.time - time).abs() < 1.0).ok_or_else(|| {
                        at(Error::config(format!("observation file has no batch for day {day}")))
                    })?;
                    batch.validate().map_err(at)?;
                    ObsSet::from_batch(batch, &grid).map_err(at)?
                }
                None => ObsSet::from_batch(&observe(cfg, snap, &truth.grid, day), &grid).map_err(at)?,
            };
            let eps = Perturber::new(perturb_seeds, day as u64);
            ens = match &analysis {
                Analysis::None => unreachable!(),
                Analysis::Var { b, loc } if n_mem == 1 => {
                    Ensemble::new(vec![threedvar_cycle(&ens.members()[0], &obs, b, Some(loc)).map_err(at)?])?
                }
                Analysis::Var { b, loc } => en3dvar_cycle(&ens, &obs, b, Some(loc), &eps).map_err(at)?,
                Analysis::EnKF(loc) => enkf_cycle(&ens, &obs, Some(loc), cfg.da.relaxation, &eps).map_err(at)?,
                Analysis::UNet { source, loc } => {
                    unetkf_cycle(&ens, &obs, source.as_ref(), Some(loc), cfg.da.relaxation, &eps).map_err(at)?
                }
            };
            states = ens
                .members()
                .iter()
                .map(|m| model.state_from_slice(m, time))
                .collect::<Result<_>>()
                .map_err(at)?;
            rec.cycle_times.push(time);
        }

        let r = layer_rmse(ens.mean(), &truth_on_grid(snap, &truth.grid, &grid)?);
        rec.times.push(time);
        rec.rmse[0].push(r[0]);
        rec.rmse[1].push(r[1]);
        if let Some(s) = rec.spread.as_mut() {
            let sp = ens.spread(2);
            s[0].push(sp[0]);
            s[1].push(sp[1]);
        }
        if d + 1 < cfg.days {
            advance_days(&model, &mut states, 1).map_err(|e| e.at_cycle(cycle))?;
        }
    }
    Ok(rec)
}

/// Independent experiments over shared assets, run concurrently.
pub fn run_suite(configs: &[ExperimentConfig], assets: &Assets) -> Vec<Result<ExperimentRecord>> {
    configs.par_iter().map(|c| run_experiment(c, assets)).collect()
}
