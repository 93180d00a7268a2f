use ndarray::{Array2, Array3};
use rayon::prelude::*;

use super::gain::GainTerms;
use super::localization::LocalizationSpec;
use super::patch::{check_patch_size, window, CovPatch, CovPatchSample, PatchProvider};
use crate::da::ObsOperator;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Ensemble perturbations stored state-major: row `i` holds every member's
/// deviation from the mean at state index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbations {
    data: Array2<f64>,
    norm: f64,
}

/// Member-order arithmetic mean, accumulated as deviations from the first
/// member so that identical members give back exactly that member.
pub fn ensemble_mean<S: AsRef<[f64]>>(members: &[S]) -> Vec<f64> {
    let Some(first) = members.first().map(|m| m.as_ref()) else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.len()];
    for m in &members[1..] {
        for ((a, v), f) in acc.iter_mut().zip(m.as_ref()).zip(first) {
            *a += v - f;
        }
    }
    let n = members.len() as f64;
    first.iter().zip(acc).map(|(f, a)| f + a / n).collect()
}

impl Perturbations {
    /// Mean and perturbations of an ensemble of at least two members.
    pub fn from_members<S: AsRef<[f64]>>(members: &[S]) -> Result<(Vec<f64>, Self)> {
        let n = members.len();
        if n < 2 {
            return Err(Error::config(format!(
                "ensemble covariance needs at least 2 members, got {n}"
            )));
        }
        let dim = members[0].as_ref().len();
        if members.iter().any(|m| m.as_ref().len() != dim) {
            return Err(Error::config("ensemble members differ in length"));
        }
        let mean = ensemble_mean(members);
        let mut data = Array2::zeros((dim, n));
        for (k, m) in members.iter().enumerate() {
            for (i, v) in m.as_ref().iter().enumerate() {
                data[[i, k]] = v - mean[i];
            }
        }
        Ok((
            mean,
            Self {
                data,
                norm: 1.0 / (n - 1) as f64,
            },
        ))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn members(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.data
    }

    /// Sample covariance between state indices `a` and `b`.
    #[inline]
    pub fn cov(&self, a: usize, b: usize) -> f64 {
        let (ra, rb) = (self.data.row(a), self.data.row(b));
        let (ra, rb) = (ra.as_slice().unwrap(), rb.as_slice().unwrap());
        ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>() * self.norm
    }

    /// Total variance, `trace(B)`.
    pub fn total_variance(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() * self.norm
    }
}

/// `BHᵀ` and `HBHᵀ` of the sample covariance, optionally Schur-localized,
/// without forming `B`.
pub fn ensemble_cov_terms<S: AsRef<[f64]>>(
    members: &[S],
    h: &ObsOperator,
    loc: Option<&LocalizationSpec>,
) -> Result<GainTerms> {
    let (_, perts) = Perturbations::from_members(members)?;
    perturbation_cov_terms(&perts, h, loc)
}

pub fn perturbation_cov_terms(
    perts: &Perturbations,
    h: &ObsOperator,
    loc: Option<&LocalizationSpec>,
) -> Result<GainTerms> {
    let dim = perts.dim();
    if h.state_len() != dim {
        return Err(Error::config(format!(
            "observation operator expects {} state values, ensemble has {dim}",
            h.state_len()
        )));
    }
    let m = h.len();
    let Some(loc) = loc else {
        // HX' (m × N), then the two products.
        let x = perts.matrix();
        let mut hx = Array2::zeros((m, perts.members()));
        for (j, row) in h.rows().iter().enumerate() {
            for &(i, w) in &row.stencil {
                hx.row_mut(j).scaled_add(w, &x.row(i));
            }
        }
        let bht = x.dot(&hx.t()) * perts.norm;
        let hbht = hx.dot(&hx.t()) * perts.norm;
        return Ok(GainTerms { bht, hbht });
    };

    let grid = loc.grid();
    if grid.state_len() != dim {
        return Err(Error::config("localization grid does not match the state size"));
    }
    let np = grid.points();
    let mut bht = Array2::zeros((dim, m));
    for (j, row) in h.rows().iter().enumerate() {
        for &(s, hw) in &row.stencil {
            let ps = s % np;
            for a in 0..dim {
                let ww = loc.weight(ps, a % np);
                if ww != 0.0 {
                    bht[[a, j]] += hw * ww * perts.cov(a, s);
                }
            }
        }
    }
    let mut hbht = Array2::zeros((m, m));
    for j in 0..m {
        for k in j..m {
            let mut acc = 0.0;
            for &(s, hs) in &h.rows()[j].stencil {
                for &(t, ht) in &h.rows()[k].stencil {
                    let ww = loc.weight(s % np, t % np);
                    if ww != 0.0 {
                        acc += hs * ht * ww * perts.cov(s, t);
                    }
                }
            }
            hbht[[j, k]] = acc;
            hbht[[k, j]] = acc;
        }
    }
    Ok(GainTerms { bht, hbht })
}

/// Raw sample-covariance patches computed from ensemble perturbations.
#[derive(Debug, Clone)]
pub struct EnsemblePatches {
    grid: GridSpec,
    p: usize,
    perts: Perturbations,
}

impl EnsemblePatches {
    pub fn new(grid: GridSpec, p: usize, perts: Perturbations) -> Result<Self> {
        check_patch_size(p, &grid)?;
        if perts.dim() != grid.state_len() {
            return Err(Error::config("ensemble state size does not match the grid"));
        }
        Ok(Self { grid, p, perts })
    }

    pub fn from_members<S: AsRef<[f64]>>(grid: GridSpec, p: usize, members: &[S]) -> Result<Self> {
        let (_, perts) = Perturbations::from_members(members)?;
        Self::new(grid, p, perts)
    }

    pub fn perturbations(&self) -> &Perturbations {
        &self.perts
    }

    pub fn patch(&self, center: usize) -> CovPatch {
        let (p, np) = (self.p, self.grid.points());
        let half = (p / 2) as isize;
        let mut data = Array3::zeros((3, p, p));
        for i in 0..p {
            for j in 0..p {
                let b = self.grid.shifted(center, i as isize - half, j as isize - half);
                data[[0, i, j]] = self.perts.cov(center, b);
                data[[1, i, j]] = self.perts.cov(center, np + b);
                data[[2, i, j]] = self.perts.cov(np + center, np + b);
            }
        }
        CovPatch { center, data }
    }
}

impl PatchProvider for EnsemblePatches {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn patch_size(&self) -> usize {
        self.p
    }

    fn patches(&self, centers: &[usize]) -> Result<Vec<CovPatch>> {
        Ok(centers.par_iter().map(|&c| self.patch(c)).collect())
    }
}

/// One training sample per gridpoint: the mean-PV window and the raw
/// (unlocalized) covariance patch around the same centre.
pub fn extract_patch_samples(
    mean: &[f64],
    perts: &Perturbations,
    grid: &GridSpec,
    p: usize,
    cycle: u64,
) -> Result<Vec<CovPatchSample>> {
    if mean.len() != grid.state_len() {
        return Err(Error::config("ensemble mean does not match the grid"));
    }
    let provider = EnsemblePatches::new(*grid, p, perts.clone())?;
    Ok((0..grid.points())
        .into_par_iter()
        .map(|c| CovPatchSample {
            cycle,
            center: c,
            input: window(mean, grid, c, p),
            output: provider.patch(c),
        })
        .collect())
}
