//! Nature run and forecast-model control runs.

use rayon::prelude::*;

use crate::cov::{climatological_b, ClimatologicalB};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::qg::{ModelParams, QgModel, Snapshot, SECONDS_PER_DAY};
use crate::rng::SeedTree;

/// Settings for the high-resolution truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    pub n: usize,
    pub spinup_days: usize,
    /// Days recorded after spin-up.
    pub days: usize,
    /// Amplitude of the random initial PV.
    pub amplitude: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            n: 128,
            spinup_days: 730,
            days: 730,
            amplitude: 3e-6,
        }
    }
}

/// Daily truth snapshots; day 0 is the end of spin-up and snapshot times
/// count from there.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub grid: GridSpec,
    pub snapshots: Vec<Snapshot>,
}

impl Truth {
    pub fn days(&self) -> usize {
        self.snapshots.len()
    }

    pub fn day(&self, d: usize) -> Result<&Snapshot> {
        self.snapshots.get(d).ok_or_else(|| {
            Error::config(format!("truth covers {} days, day {d} requested", self.snapshots.len()))
        })
    }

    pub fn from_snapshots(snapshots: Vec<Snapshot>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::config("truth trajectory is empty"))?;
        let grid = GridSpec::square(first.n())?;
        for (d, s) in snapshots.iter().enumerate() {
            if s.n() != grid.n() || (s.time - d as f64 * SECONDS_PER_DAY).abs() > 1.0 {
                return Err(Error::config(format!("truth snapshot {d} is not daily on one grid")));
            }
        }
        Ok(Self { grid, snapshots })
    }
}

/// Free run from a seeded random state: spin up, then keep `days` daily
/// snapshots.
pub fn nature_run(cfg: &TruthConfig, seeds: &SeedTree) -> Result<Truth> {
    let grid = GridSpec::square(cfg.n)?;
    let model = QgModel::new(grid, ModelParams::for_grid(cfg.n))?;
    let spd = model.params().steps_per_day()?;
    let mut state = model.random_state(cfg.amplitude, seeds.derive("truth", 0, 0));
    model.advance(&mut state, cfg.spinup_days * spd)?;
    let t0 = state.time();
    let mut snapshots = Vec::with_capacity(cfg.days);
    for d in 0..cfg.days {
        if d > 0 {
            model.advance(&mut state, spd)?;
        }
        let mut s = state.snapshot();
        s.time -= t0;
        snapshots.push(s);
    }
    Ok(Truth { grid, snapshots })
}

/// Settings for the forecast-resolution control run that supplies the
/// climatological B and the pool of initial ensemble members.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub spinup_days: usize,
    pub years: usize,
    /// Days between stored states.
    pub stride_days: usize,
    /// Lag of the differences behind B.
    pub window_days: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            spinup_days: 730,
            years: 20,
            stride_days: 30,
            window_days: 60,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride_days == 0 || !self.window_days.is_multiple_of(self.stride_days) {
            return Err(Error::config(
                "control.window_days must be a positive multiple of control.stride_days",
            ));
        }
        if self.years == 0 {
            return Err(Error::config("control.years must be >= 1"));
        }
        Ok(())
    }
}

/// States of a long forecast-model run, `stride_days` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRun {
    pub grid: GridSpec,
    pub config: ControlConfig,
    pub states: Vec<Vec<f64>>,
}

impl ControlRun {
    pub fn generate(n: usize, cfg: &ControlConfig, seeds: &SeedTree) -> Result<Self> {
        cfg.validate()?;
        let grid = GridSpec::square(n)?;
        let model = QgModel::new(grid, ModelParams::for_grid(n))?;
        let spd = model.params().steps_per_day()?;
        let mut state = model.random_state(3e-6, seeds.derive("control", n as u64, 0));
        model.advance(&mut state, cfg.spinup_days * spd)?;
        let count = cfg.years * 365 / cfg.stride_days + 1;
        let mut states = Vec::with_capacity(count);
        for k in 0..count {
            if k > 0 {
                model.advance(&mut state, cfg.stride_days * spd)?;
            }
            states.push(state.as_slice().to_vec());
        }
        Ok(Self {
            grid,
            config: cfg.clone(),
            states,
        })
    }

    /// Homogeneous B from `window_days` differences, as `p × p` patches.
    pub fn climatological_b(&self, p: usize) -> Result<ClimatologicalB> {
        climatological_b(&self.states, &self.grid, self.config.window_days / self.config.stride_days, p)
    }

    /// `n` distinct stored states chosen by the seed.
    pub fn draw_members(&self, n: usize, seeds: &SeedTree) -> Result<Vec<Vec<f64>>> {
        if n > self.states.len() {
            return Err(Error::config(format!(
                "ensemble of {n} requested from a control run with {} states",
                self.states.len()
            )));
        }
        let picks = rand::seq::index::sample(&mut seeds.stream("init", n as u64, 0), self.states.len(), n);
        Ok(picks.into_iter().map(|i| self.states[i].clone()).collect())
    }
}

/// Advance every state `days` days in parallel.
pub(crate) fn advance_days(model: &QgModel, states: &mut [crate::qg::ModelState], days: usize) -> Result<()> {
    let steps = days * model.params().steps_per_day()?;
    states.par_iter_mut().try_for_each(|s| model.advance(s, steps))
}
