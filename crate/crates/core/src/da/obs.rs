//! Observation batches and the linear observation operator.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::qg::axis_weights;

/// Default observation-error standard deviations per layer.
pub const OBS_ERROR_SD: [f64; 2] = [1e-5, 5e-7];
pub const OBS_PER_CYCLE: usize = 50;

/// One row of a sparse linear observation operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsRow {
    /// `(flat state index, weight)` pairs.
    pub stencil: Vec<(usize, f64)>,
}

/// Sparse linear map from state space to observation space.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsOperator {
    state_len: usize,
    rows: Vec<ObsRow>,
}

impl ObsOperator {
    pub fn new(state_len: usize, rows: Vec<ObsRow>) -> Result<Self> {
        for (j, row) in rows.iter().enumerate() {
            if let Some(&(idx, _)) = row.stencil.iter().find(|(i, _)| *i >= state_len) {
                return Err(Error::config(format!(
                    "observation row {j} references state index {idx} >= {state_len}"
                )));
            }
        }
        Ok(Self { state_len, rows })
    }

    /// Dense operator, for small test systems.
    pub fn from_dense(h: &ndarray::Array2<f64>) -> Self {
        let rows = h
            .rows()
            .into_iter()
            .map(|r| ObsRow {
                stencil: r.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(i, w)| (i, *w)).collect(),
            })
            .collect();
        Self {
            state_len: h.ncols(),
            rows,
        }
    }

    /// Bilinear interpolation of both layers at shared locations. Rows are
    /// ordered layer-major: all layer-1 observations, then all layer-2.
    pub fn bilinear(grid: &GridSpec, locations: &[(f64, f64)]) -> Self {
        let np = grid.points();
        let mut rows = Vec::with_capacity(2 * locations.len());
        for layer in 0..2 {
            for &(x, y) in locations {
                let (i0, i1, wy) = axis_weights(grid, y);
                let (j0, j1, wx) = axis_weights(grid, x);
                let mut stencil = Vec::with_capacity(4);
                for (iy, w_y) in [(i0, 1.0 - wy), (i1, wy)] {
                    for (ix, w_x) in [(j0, 1.0 - wx), (j1, wx)] {
                        let w = w_y * w_x;
                        if w != 0.0 {
                            stencil.push((layer * np + grid.index(iy, ix), w));
                        }
                    }
                }
                rows.push(ObsRow { stencil });
            }
        }
        Self {
            state_len: grid.state_len(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn state_len(&self) -> usize {
        self.state_len
    }

    pub fn rows(&self) -> &[ObsRow] {
        &self.rows
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.stencil.iter().map(|&(i, w)| w * x[i]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut h = ndarray::Array2::zeros((self.rows.len(), self.state_len));
        for (j, r) in self.rows.iter().enumerate() {
            for &(i, w) in &r.stencil {
                h[[j, i]] += w;
            }
        }
        h
    }
}

/// Observations valid at one assimilation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    pub time: f64,
    /// Positions in meters, shared by both layers.
    pub locations: Vec<(f64, f64)>,
    /// Layer-major values: every location for layer 1, then for layer 2.
    pub values: Vec<f64>,
    pub error_sd: [f64; 2],
}

impl ObsBatch {
    pub fn empty(time: f64) -> Self {
        Self {
            time,
            locations: Vec::new(),
            values: Vec::new(),
            error_sd: OBS_ERROR_SD,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn operator(&self, grid: &GridSpec) -> ObsOperator {
        ObsOperator::bilinear(grid, &self.locations)
    }

    /// Diagonal of R.
    pub fn r_diag(&self) -> Vec<f64> {
        let m = self.locations.len();
        (0..2 * m).map(|j| self.error_sd[j / m.max(1)].powi(2)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != 2 * self.locations.len() {
            return Err(Error::config(format!(
                "{} observation values for {} locations",
                self.values.len(),
                self.locations.len()
            )));
        }
        if self.error_sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("observation error sd must be >= 0"));
        }
        Ok(())
    }
}

/// Model equivalents at the given locations.
pub fn apply_h(state: &[f64], grid: &GridSpec, locations: &[(f64, f64)]) -> Vec<f64> {
    ObsOperator::bilinear(grid, locations).apply(state)
}

/// Draw `count` uniform locations over the domain and observe `truth` there
/// with Gaussian noise of the given per-layer standard deviation.
pub fn sample_observations<R: Rng>(
    truth: &[f64],
    grid: &GridSpec,
    time: f64,
    count: usize,
    error_sd: [f64; 2],
    rng: &mut R,
) -> ObsBatch {
    let l = grid.length();
    let locations: Vec<(f64, f64)> = (0..count)
        .map(|_| (rng.gen_range(0.0..l), rng.gen_range(0.0..l)))
        .collect();
    let mut values = apply_h(truth, grid, &locations);
    for (j, v) in values.iter_mut().enumerate() {
        let sd = error_sd[j / count];
        if sd > 0.0 {
            *v += Normal::new(0.0, sd).unwrap().sample(rng);
        }
    }
    ObsBatch {
        time,
        locations,
        values,
        error_sd,
    }
}
