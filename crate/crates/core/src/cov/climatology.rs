use ndarray::Array3;

use super::patch::{check_patch_size, CovPatch, PatchProvider};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Homogeneous static background covariance: one `3 × P × P` template
/// shared by every centre, with per-layer variance scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimatologicalB {
    grid: GridSpec,
    template: Array3<f64>,
    scale: [f64; 2],
}

impl ClimatologicalB {
    pub fn new(grid: GridSpec, template: Array3<f64>, scale: [f64; 2]) -> Result<Self> {
        let p = template.shape()[1];
        check_patch_size(p, &grid)?;
        if template.shape() != [3, p, p] {
            return Err(Error::config("climatological template must be 3 × P × P"));
        }
        if scale.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("climatological B scale must be >= 0"));
        }
        Ok(Self { grid, template, scale })
    }

    pub fn template(&self) -> &Array3<f64> {
        &self.template
    }

    pub fn scale(&self) -> [f64; 2] {
        self.scale
    }

    pub fn with_scale(mut self, scale: [f64; 2]) -> Self {
        self.scale = scale;
        self
    }

    /// Scaled template; identical for every centre.
    pub fn patch(&self, center: usize) -> CovPatch {
        let [s1, s2] = self.scale;
        let factors = [s1, (s1 * s2).sqrt(), s2];
        let mut data = self.template.clone();
        for (c, f) in factors.iter().enumerate() {
            data.index_axis_mut(ndarray::Axis(0), c).mapv_inplace(|v| v * f);
        }
        CovPatch { center, data }
    }
}

impl PatchProvider for ClimatologicalB {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn patch_size(&self) -> usize {
        self.template.shape()[1]
    }

    fn patches(&self, centers: &[usize]) -> Result<Vec<CovPatch>> {
        let one = self.patch(0);
        Ok(centers
            .iter()
            .map(|&c| CovPatch {
                center: c,
                data: one.data.clone(),
            })
            .collect())
    }
}

/// Static B from lagged differences `x(t + window) - x(t)` over consecutive
/// windows of a control trajectory. The covariance of the differences with
/// every centre is averaged over all centres, exploiting homogeneity.
pub fn climatological_b<S: AsRef<[f64]>>(
    trajectory: &[S],
    grid: &GridSpec,
    window: usize,
    p: usize,
) -> Result<ClimatologicalB> {
    check_patch_size(p, grid)?;
    if window == 0 {
        return Err(Error::config("climatological B window must be >= 1 snapshot"));
    }
    let dim = grid.state_len();
    if trajectory.iter().any(|s| s.as_ref().len() != dim) {
        return Err(Error::config("control trajectory does not match the grid"));
    }
    let k = trajectory.len().saturating_sub(1) / window;
    if k < 2 {
        return Err(Error::config(format!(
            "control trajectory of {} snapshots is too short for two {window}-snapshot differences",
            trajectory.len()
        )));
    }
    let diffs: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let (a, b) = (trajectory[i * window].as_ref(), trajectory[(i + 1) * window].as_ref());
            b.iter().zip(a).map(|(y, x)| y - x).collect()
        })
        .collect();
    let mut mean = vec![0.0; dim];
    for d in &diffs {
        mean.iter_mut().zip(d).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);

    let np = grid.points();
    let half = (p / 2) as isize;
    let mut template = Array3::zeros((3, p, p));
    for d in &diffs {
        let dev: Vec<f64> = d.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for c in 0..np {
            let (x1, x2) = (dev[c], dev[np + c]);
            for i in 0..p {
                for j in 0..p {
                    let b = grid.shifted(c, i as isize - half, j as isize - half);
                    template[[0, i, j]] += x1 * dev[b];
                    template[[1, i, j]] += x1 * dev[np + b];
                    template[[2, i, j]] += x2 * dev[np + b];
                }
            }
        }
    }
    template.mapv_inplace(|v| v / ((k - 1) * np) as f64);
    ClimatologicalB::new(*grid, template, [1.0, 1.0])
}
