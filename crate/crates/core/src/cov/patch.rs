use ndarray::{Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Channel holding `Cov(x_a(center), x_b(center + offset))` for layers `a <= b`.
#[inline]
pub fn channel(la: usize, lb: usize) -> usize {
    la + lb
}

/// Covariances between one reference gridpoint and its `P × P`
/// neighbourhood, in three channels: layer 1, cross (layer 1 at the centre,
/// layer 2 at the offset point) and layer 2. Index `(i, j)` holds offset
/// `(i - P/2, j - P/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovPatch {
    pub center: usize,
    pub data: Array3<f64>,
}

impl CovPatch {
    pub fn zeros(center: usize, p: usize) -> Self {
        Self {
            center,
            data: Array3::zeros((3, p, p)),
        }
    }

    pub fn p(&self) -> usize {
        self.data.shape()[1]
    }

    #[inline]
    pub fn contains(&self, dy: isize, dx: isize) -> bool {
        let half = (self.p() / 2) as isize;
        (-half..half).contains(&dy) && (-half..half).contains(&dx)
    }

    /// Value at a grid offset, if the offset lies inside the patch.
    #[inline]
    pub fn get(&self, ch: usize, dy: isize, dx: isize) -> Option<f64> {
        if self.contains(dy, dx) {
            let half = (self.p() / 2) as isize;
            Some(self.data[[ch, (dy + half) as usize, (dx + half) as usize]])
        } else {
            None
        }
    }

    pub fn channel(&self, ch: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), ch)
    }

    /// Variance of layer `l` at the centre.
    pub fn center_variance(&self, l: usize) -> f64 {
        let h = self.p() / 2;
        self.data[[2 * l, h, h]]
    }
}

/// A training pair: localized mean PV in, raw covariance patch out.
#[derive(Debug, Clone, PartialEq)]
pub struct CovPatchSample {
    pub cycle: u64,
    pub center: usize,
    /// `2 × P × P` window of the ensemble mean.
    pub input: Array3<f64>,
    pub output: CovPatch,
}

/// Source of covariance patches at arbitrary grid centres.
pub trait PatchProvider {
    fn grid(&self) -> &GridSpec;
    fn patch_size(&self) -> usize;
    /// Patches for the requested centres, in order.
    fn patches(&self, centers: &[usize]) -> Result<Vec<CovPatch>>;
}

pub(crate) fn check_patch_size(p: usize, grid: &GridSpec) -> Result<()> {
    if p == 0 || !p.is_multiple_of(2) {
        return Err(Error::config(format!("patch size must be even and positive, got {p}")));
    }
    if p > grid.n() {
        return Err(Error::config(format!(
            "patch size {p} exceeds grid size {}",
            grid.n()
        )));
    }
    Ok(())
}

/// Periodic `layers × P × P` window of a layer-major field around `center`,
/// reference point at `(P/2, P/2)`.
pub fn window(field: &[f64], grid: &GridSpec, center: usize, p: usize) -> Array3<f64> {
    let layers = field.len() / grid.points();
    let half = (p / 2) as isize;
    let np = grid.points();
    Array3::from_shape_fn((layers, p, p), |(l, i, j)| {
        field[l * np + grid.shifted(center, i as isize - half, j as isize - half)]
    })
}

/// Provider returning zero covariance everywhere.
#[derive(Debug, Clone)]
pub struct ZeroPatches {
    pub grid: GridSpec,
    pub p: usize,
}

impl PatchProvider for ZeroPatches {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn patch_size(&self) -> usize {
        self.p
    }

    fn patches(&self, centers: &[usize]) -> Result<Vec<CovPatch>> {
        Ok(centers.iter().map(|&c| CovPatch::zeros(c, self.p)).collect())
    }
}
