use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Interpolation used when moving a field between resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegridMethod {
    #[default]
    Bilinear,
    /// Trapezoid-weighted cell average; applies to coarsening only, and
    /// falls back to bilinear when refining.
    AreaWeighted,
    /// Keys cubic convolution (a = -1/2).
    Cubic,
}

impl std::str::FromStr for RegridMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "area" | "area-weighted" => Ok(Self::AreaWeighted),
            "cubic" => Ok(Self::Cubic),
            other => Err(Error::config(format!("unknown regrid method {other:?}"))),
        }
    }
}

/// Bilinear periodic sample at physical position `(x, y)` meters.
pub fn sample_bilinear(field: ArrayView2<f64>, grid: &GridSpec, x: f64, y: f64) -> f64 {
    let [(i0, i1, wy), (j0, j1, wx)] = [axis_weights(grid, y), axis_weights(grid, x)];
    (1.0 - wy) * ((1.0 - wx) * field[[i0, j0]] + wx * field[[i0, j1]])
        + wy * ((1.0 - wx) * field[[i1, j0]] + wx * field[[i1, j1]])
}

/// Lower node, upper node and fractional weight along one axis.
#[inline]
pub(crate) fn axis_weights(grid: &GridSpec, coord: f64) -> (usize, usize, f64) {
    let f = coord / grid.dx();
    let fl = f.floor();
    let w = f - fl;
    let i0 = grid.wrap(fl as isize);
    (i0, (i0 + 1) % grid.n(), w)
}

fn keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

fn sample_cubic(field: ArrayView2<f64>, grid: &GridSpec, x: f64, y: f64) -> f64 {
    let (fy, fx) = (y / grid.dx(), x / grid.dx());
    let (by, bx) = (fy.floor(), fx.floor());
    let mut acc = 0.0;
    for dy in -1..=2 {
        let wy = keys(fy - (by + dy as f64));
        let iy = grid.wrap(by as isize + dy);
        for dx in -1..=2 {
            let wx = keys(fx - (bx + dx as f64));
            acc += wy * wx * field[[iy, grid.wrap(bx as isize + dx)]];
        }
    }
    acc
}

fn area_average(field: ArrayView2<f64>, from: &GridSpec, to: &GridSpec) -> Array2<f64> {
    let ratio = from.n() / to.n();
    let half = (ratio / 2) as isize;
    // Trapezoid weights over [-r/2, r/2] in fine-grid units.
    let weights: Vec<(isize, f64)> = if ratio == 1 {
        vec![(0, 1.0)]
    } else {
        (-half..=half)
            .map(|o| (o, if o.abs() == half { 0.5 } else { 1.0 } / ratio as f64))
            .collect()
    };
    let nc = to.n();
    Array2::from_shape_fn((nc, nc), |(iy, ix)| {
        let (cy, cx) = ((iy * ratio) as isize, (ix * ratio) as isize);
        let mut acc = 0.0;
        for &(oy, wy) in &weights {
            let fy = from.wrap(cy + oy);
            for &(ox, wx) in &weights {
                acc += wy * wx * field[[fy, from.wrap(cx + ox)]];
            }
        }
        acc
    })
}

/// Move one layer between two grids over the same periodic domain.
pub fn regrid(
    field: ArrayView2<f64>,
    from: &GridSpec,
    to: &GridSpec,
    method: RegridMethod,
) -> Result<Array2<f64>> {
    if !from.same_domain(to) {
        return Err(Error::config(format!(
            "cannot regrid between domains of {} m and {} m",
            from.length(),
            to.length()
        )));
    }
    if field.shape() != [from.n(), from.n()] {
        return Err(Error::config("field shape does not match its grid"));
    }
    if from.n() == to.n() {
        return Ok(field.to_owned());
    }
    let coarsening = from.n() > to.n();
    let dx = to.dx();
    let out = match method {
        RegridMethod::AreaWeighted if coarsening => area_average(field, from, to),
        RegridMethod::Cubic => Array2::from_shape_fn((to.n(), to.n()), |(iy, ix)| {
            sample_cubic(field, from, ix as f64 * dx, iy as f64 * dx)
        }),
        _ => Array2::from_shape_fn((to.n(), to.n()), |(iy, ix)| {
            sample_bilinear(field, from, ix as f64 * dx, iy as f64 * dx)
        }),
    };
    Ok(out)
}

/// Regrid every layer of a `(layers, n, n)` field.
pub fn regrid_field(
    field: ArrayView3<f64>,
    from: &GridSpec,
    to: &GridSpec,
    method: RegridMethod,
) -> Result<Array3<f64>> {
    let layers = field.shape()[0];
    let mut out = Array3::zeros((layers, to.n(), to.n()));
    for k in 0..layers {
        let r = regrid(field.index_axis(Axis(0), k), from, to, method)?;
        out.index_axis_mut(Axis(0), k).assign(&r);
    }
    Ok(out)
}
