use std::collections::HashMap;
use std::sync::Mutex;

use ndarray::{Array3, Axis};

use super::layers::Act;
use super::net::forward;
use super::train::{Checkpoint, PatchRecord};
use crate::cov::{window, CovPatch, PatchProvider};
use crate::da::{Ensemble, PatchSource};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::qg::{regrid_field, RegridMethod};

const PREDICT_BATCH: usize = 64;

/// Run the network on the windows around `centers` of a layer-major field.
pub fn predict_windows(ck: &Checkpoint, field: &[f64], grid: &GridSpec, centers: &[usize]) -> Result<Vec<CovPatch>> {
    let p = ck.p;
    let plane = p * p;
    let co = ck.norm.out_mean.len();
    let mut out = Vec::with_capacity(centers.len());
    for chunk in centers.chunks(PREDICT_BATCH) {
        let mut x = Act::<f32>::zeros(ck.norm.in_mean.len(), chunk.len(), p, p);
        for (k, &c) in chunk.iter().enumerate() {
            let win = window(field, grid, c, p);
            for (ch, layer) in win.axis_iter(Axis(0)).enumerate() {
                let (m, s) = (ck.norm.in_mean[ch], ck.norm.in_sd[ch]);
                let mut dst = x.data.row_mut(ch);
                for (i, v) in layer.iter().enumerate() {
                    dst[k * plane + i] = ((v - m) / s) as f32;
                }
            }
        }
        let y = forward(&ck.params, &x)?;
        for (k, &c) in chunk.iter().enumerate() {
            let data = Array3::from_shape_fn((co, p, p), |(ch, i, j)| {
                y.data[[ch, k * plane + i * p + j]] as f64 * ck.norm.out_sd[ch] + ck.norm.out_mean[ch]
            });
            out.push(CovPatch { center: c, data });
        }
    }
    Ok(out)
}

/// Run the network on stored sample inputs; patch centres are the
/// samples' centres.
pub fn predict_records(ck: &Checkpoint, records: &[&PatchRecord]) -> Result<Vec<CovPatch>> {
    let p = ck.p;
    let plane = p * p;
    let (ci, co) = (ck.norm.in_mean.len(), ck.norm.out_mean.len());
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(PREDICT_BATCH) {
        let mut x = Act::<f32>::zeros(ci, chunk.len(), p, p);
        for (k, r) in chunk.iter().enumerate() {
            if r.input.len() != ci * plane {
                return Err(Error::Network(format!(
                    "sample input has {} values, checkpoint expects {ci}×{p}×{p}",
                    r.input.len()
                )));
            }
            for ch in 0..ci {
                let (m, s) = (ck.norm.in_mean[ch], ck.norm.in_sd[ch]);
                let mut dst = x.data.row_mut(ch);
                for (i, v) in r.input[ch * plane..(ch + 1) * plane].iter().enumerate() {
                    dst[k * plane + i] = ((*v as f64 - m) / s) as f32;
                }
            }
        }
        let y = forward(&ck.params, &x)?;
        for (k, r) in chunk.iter().enumerate() {
            let data = Array3::from_shape_fn((co, p, p), |(ch, i, j)| {
                y.data[[ch, k * plane + i * p + j]] as f64 * ck.norm.out_sd[ch] + ck.norm.out_mean[ch]
            });
            out.push(CovPatch {
                center: r.center as usize,
                data,
            });
        }
    }
    Ok(out)
}

/// Network-predicted patches for one forecast field, cached per centre.
pub struct NetPatches<'a> {
    ck: &'a Checkpoint,
    grid: GridSpec,
    field: Vec<f64>,
    cache: Mutex<HashMap<usize, CovPatch>>,
}

impl<'a> NetPatches<'a> {
    pub fn new(ck: &'a Checkpoint, grid: GridSpec, field: &[f64]) -> Result<Self> {
        if field.len() != grid.state_len() {
            return Err(Error::config("forecast field does not match the grid"));
        }
        if ck.p > grid.n() {
            return Err(Error::config(format!(
                "checkpoint patch side {} exceeds grid size {}; use transfer mode",
                ck.p,
                grid.n()
            )));
        }
        Ok(Self {
            ck,
            grid,
            field: field.to_vec(),
            cache: Mutex::new(HashMap::new()),
        })
    }
}

impl PatchProvider for NetPatches<'_> {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn patch_size(&self) -> usize {
        self.ck.p
    }

    fn patches(&self, centers: &[usize]) -> Result<Vec<CovPatch>> {
        let mut cache = self.cache.lock().unwrap();
        let missing: Vec<usize> = centers.iter().copied().filter(|c| !cache.contains_key(c)).collect();
        for p in predict_windows(self.ck, &self.field, &self.grid, &missing)? {
            cache.insert(p.center, p);
        }
        Ok(centers.iter().map(|c| cache[c].clone()).collect())
    }
}

/// Patches on a fine grid from a network trained on a coarser one: the
/// field is regridded down, coarse patches are predicted at every coarse
/// centre, and each fine centre gets the bilinear blend (in centre
/// position) of its surrounding coarse patches, each bilinearly upsampled
/// in offset.
pub struct TransferPatches {
    fine: GridSpec,
    coarse: GridSpec,
    ratio: usize,
    coarse_field: Vec<f64>,
    coarse_patches: Vec<CovPatch>,
    pc: usize,
}

impl TransferPatches {
    pub fn new(ck: &Checkpoint, fine: GridSpec, coarse: GridSpec, field: &[f64], method: RegridMethod) -> Result<Self> {
        if !fine.same_domain(&coarse) {
            return Err(Error::config("transfer grids cover different domains"));
        }
        if !fine.n().is_multiple_of(coarse.n()) {
            return Err(Error::config("fine grid size must be a multiple of the coarse grid size"));
        }
        if field.len() != fine.state_len() {
            return Err(Error::config("forecast field does not match the fine grid"));
        }
        let q = Array3::from_shape_vec((2, fine.n(), fine.n()), field.to_vec()).unwrap();
        let coarse_field = regrid_field(q.view(), &fine, &coarse, method)?.into_raw_vec_and_offset().0;
        let all: Vec<usize> = (0..coarse.points()).collect();
        let coarse_patches = predict_windows(ck, &coarse_field, &coarse, &all)?;
        Ok(Self {
            fine,
            coarse,
            ratio: fine.n() / coarse.n(),
            coarse_field,
            coarse_patches,
            pc: ck.p,
        })
    }

    /// The regridded network input field.
    pub fn coarse_field(&self) -> &[f64] {
        &self.coarse_field
    }

    /// Value of coarse patch `c`, channel `ch`, at a fractional offset in
    /// coarse cells; zero beyond the patch.
    fn sample(&self, c: usize, ch: usize, uy: f64, ux: f64) -> f64 {
        let half = (self.pc / 2) as f64;
        let (fy, fx) = (uy + half, ux + half);
        let (y0, x0) = (fy.floor(), fx.floor());
        let (wy, wx) = (fy - y0, fx - x0);
        let data = &self.coarse_patches[c].data;
        let at = |y: f64, x: f64| {
            if y < 0.0 || x < 0.0 || y >= self.pc as f64 || x >= self.pc as f64 {
                0.0
            } else {
                data[[ch, y as usize, x as usize]]
            }
        };
        (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x0 + 1.0))
            + wy * ((1.0 - wx) * at(y0 + 1.0, x0) + wx * at(y0 + 1.0, x0 + 1.0))
    }

    pub fn patch(&self, center: usize) -> CovPatch {
        let r = self.ratio;
        let pf = self.pc * r;
        let (iy, ix) = self.fine.coords(center);
        let (cy, cx) = (iy / r, ix / r);
        let (wy, wx) = ((iy % r) as f64 / r as f64, (ix % r) as f64 / r as f64);
        let nc = self.coarse.n();
        let corners = [
            (cy, cx, (1.0 - wy) * (1.0 - wx)),
            (cy, (cx + 1) % nc, (1.0 - wy) * wx),
            ((cy + 1) % nc, cx, wy * (1.0 - wx)),
            ((cy + 1) % nc, (cx + 1) % nc, wy * wx),
        ];
        let half = (pf / 2) as isize;
        let mut data = Array3::zeros((3, pf, pf));
        for &(y, x, w) in &corners {
            if w == 0.0 {
                continue;
            }
            let c = self.coarse.index(y, x);
            for ch in 0..3 {
                for i in 0..pf {
                    let uy = (i as isize - half) as f64 / r as f64;
                    for j in 0..pf {
                        let ux = (j as isize - half) as f64 / r as f64;
                        data[[ch, i, j]] += w * self.sample(c, ch, uy, ux);
                    }
                }
            }
        }
        CovPatch { center, data }
    }
}

impl PatchProvider for TransferPatches {
    fn grid(&self) -> &GridSpec {
        &self.fine
    }

    fn patch_size(&self) -> usize {
        self.pc * self.ratio
    }

    fn patches(&self, centers: &[usize]) -> Result<Vec<CovPatch>> {
        Ok(centers.iter().map(|&c| self.patch(c)).collect())
    }
}

/// Native-resolution network as a patch source for the UNetKF.
pub struct NetSource {
    pub checkpoint: Checkpoint,
    pub grid: GridSpec,
}

impl PatchSource for NetSource {
    fn provider<'s>(&'s self, mean: &[f64], _: &Ensemble) -> Result<Box<dyn PatchProvider + 's>> {
        Ok(Box::new(NetPatches::new(&self.checkpoint, self.grid, mean)?))
    }
}

/// Coarse-trained network applied on a finer grid.
pub struct TransferSource {
    pub checkpoint: Checkpoint,
    pub fine: GridSpec,
    pub coarse: GridSpec,
    pub method: RegridMethod,
}

impl PatchSource for TransferSource {
    fn provider<'s>(&'s self, mean: &[f64], _: &Ensemble) -> Result<Box<dyn PatchProvider + 's>> {
        Ok(Box::new(TransferPatches::new(
            &self.checkpoint,
            self.fine,
            self.coarse,
            mean,
            self.method,
        )?))
    }
}
