use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Gaspari–Cohn fifth-order compactly supported correlation. `c` is the
/// length scale; the weight reaches zero at `d = 2c`.
pub fn gaspari_cohn(d: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::config(format!("localization length scale must be > 0, got {c}")));
    }
    Ok(gc(d.abs() / c))
}

#[inline]
fn gc(r: f64) -> f64 {
    if r <= 1.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        -0.25 * r3 * r2 + 0.5 * r2 * r2 + 0.625 * r3 - 5.0 / 3.0 * r2 + 1.0
    } else if r < 2.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        (r3 * r2 / 12.0 - 0.5 * r2 * r2 + 0.625 * r3 + 5.0 / 3.0 * r2 - 5.0 * r + 4.0
            - 2.0 / (3.0 * r))
            .max(0.0)
    } else {
        0.0
    }
}

/// Distance-based Schur weights on a periodic grid. Weights depend only on
/// the minimum-image offset, so they are tabulated once per grid.
#[derive(Debug, Clone)]
pub struct LocalizationSpec {
    radius_m: f64,
    grid: GridSpec,
    table: Vec<f64>,
}

impl LocalizationSpec {
    pub fn new(radius_m: f64, grid: GridSpec) -> Result<Self> {
        if !(radius_m > 0.0) {
            return Err(Error::config(format!("localization radius must be > 0, got {radius_m}")));
        }
        let n = grid.n();
        let dx = grid.dx();
        let table = (0..n * n)
            .map(|k| {
                let dy = grid.min_image((k / n) as isize) as f64;
                let dxx = grid.min_image((k % n) as isize) as f64;
                gc(dx * (dy * dy + dxx * dxx).sqrt() / radius_m)
            })
            .collect();
        Ok(Self { radius_m, grid, table })
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Weight for a grid offset `(dy, dx)`; any integer offset is accepted.
    #[inline]
    pub fn at_offset(&self, dy: isize, dx: isize) -> f64 {
        let n = self.grid.n();
        self.table[self.grid.wrap(dy) * n + self.grid.wrap(dx)]
    }

    /// Weight between two gridpoints (layer-independent point indices).
    #[inline]
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        let (ay, ax) = self.grid.coords(a);
        let (by, bx) = self.grid.coords(b);
        self.at_offset(by as isize - ay as isize, bx as isize - ax as isize)
    }

    /// `P × P` weights around `center`, reference point at `(P/2, P/2)`.
    /// Identical for every center.
    pub fn patch_weights(&self, center: usize, p: usize) -> Array2<f64> {
        let half = (p / 2) as isize;
        Array2::from_shape_fn((p, p), |(i, j)| {
            self.weight(center, self.grid.shifted(center, i as isize - half, j as isize - half))
        })
    }
}
