//! Verification statistics: RMSE against interpolated truth, effective
//! degrees of freedom from the autocorrelation e-folding time, and a
//! conservative two-sample t-test.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::qg::{regrid_field, RegridMethod, Snapshot};

/// Per-layer RMSE between two same-grid states laid out `[layer][iy][ix]`.
pub fn layer_rmse(a: &[f64], b: &[f64]) -> [f64; 2] {
    let np = a.len() / 2;
    let mut out = [0.0; 2];
    for (l, o) in out.iter_mut().enumerate() {
        let s: f64 = (0..np).map(|k| (a[l * np + k] - b[l * np + k]).powi(2)).sum();
        *o = (s / np as f64).sqrt();
    }
    out
}

/// Truth interpolated onto the analysis grid, one layer at a time.
pub fn truth_on_grid(truth: &Snapshot, from: &GridSpec, to: &GridSpec) -> Result<Vec<f64>> {
    Ok(regrid_field(truth.q.view(), from, to, RegridMethod::Bilinear)?.into_raw_vec_and_offset().0)
}

/// RMSE per layer per snapshot. Times must match to within a second.
pub fn rmse_series(
    analyses: &[Snapshot],
    truth: &[Snapshot],
    truth_grid: &GridSpec,
    da_grid: &GridSpec,
) -> Result<[Vec<f64>; 2]> {
    if analyses.len() != truth.len() {
        return Err(Error::Statistics(format!(
            "{} analyses against {} truth snapshots",
            analyses.len(),
            truth.len()
        )));
    }
    let mut out = [Vec::with_capacity(analyses.len()), Vec::with_capacity(analyses.len())];
    for (k, (a, t)) in analyses.iter().zip(truth).enumerate() {
        if (a.time - t.time).abs() > 1.0 {
            return Err(Error::Statistics(format!(
                "snapshot {k}: analysis at t = {} s, truth at t = {} s",
                a.time, t.time
            )));
        }
        if a.n() != da_grid.n() {
            return Err(Error::Statistics(format!("snapshot {k} is not on the {}-grid", da_grid.n())));
        }
        let r = layer_rmse(a.as_slice(), &truth_on_grid(t, truth_grid, da_grid)?);
        out[0].push(r[0]);
        out[1].push(r[1]);
    }
    Ok(out)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Lag at which the sample autocorrelation first falls below 1/e,
/// interpolated linearly between integer lags.
pub fn efolding_time(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 3 {
        return Err(Error::Statistics(format!("series of length {n} is too short (need >= 3)")));
    }
    let m = mean(series);
    let dev: Vec<f64> = series.iter().map(|v| v - m).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::Statistics("series is constant or non-finite".into()));
    }
    let threshold = (-1.0f64).exp();
    let mut prev = 1.0;
    for lag in 1..n {
        let r = dev[..n - lag].iter().zip(&dev[lag..]).map(|(a, b)| a * b).sum::<f64>() / c0;
        if r < threshold {
            return Ok((lag - 1) as f64 + (prev - threshold) / (prev - r));
        }
        prev = r;
    }
    Err(Error::Statistics(format!(
        "autocorrelation never drops below 1/e within {n} samples"
    )))
}

/// Effective degrees of freedom `N Δt / (2 T_e)`, with `T_e` in units of Δt.
pub fn efolding_dof(series: &[f64], dt: f64) -> Result<f64> {
    let te = efolding_time(series)? * dt;
    Ok(series.len() as f64 * dt / (2.0 * te))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignificanceResult {
    /// `mean(a) - mean(b)`.
    pub mean_diff: f64,
    pub t: f64,
    pub dof: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Two-sample t-test of equal means at the 95% level. Each series'
/// variance of the mean uses its own effective sample size; the test uses
/// the smaller of the two DOFs.
pub fn ttest_95(a: &[f64], b: &[f64], dt: f64) -> Result<SignificanceResult> {
    let (dof_a, dof_b) = (efolding_dof(a, dt)?, efolding_dof(b, dt)?);
    let se2 = variance(a) / dof_a.min(a.len() as f64) + variance(b) / dof_b.min(b.len() as f64);
    let mean_diff = mean(a) - mean(b);
    let t = if mean_diff == 0.0 { 0.0 } else { mean_diff / se2.sqrt() };
    let dof = dof_a.min(dof_b);
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Statistics(e.to_string()))?;
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(SignificanceResult {
        mean_diff,
        t,
        dof,
        p_value,
        significant: p_value < 0.05,
    })
}
