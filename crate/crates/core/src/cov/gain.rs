use ndarray::Array2;

use super::localization::LocalizationSpec;
use super::patch::{CovPatch, PatchProvider};
use crate::da::ObsOperator;
use crate::error::{Error, Result};

/// The two covariance products a Kalman update needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTerms {
    /// `B Hᵀ`, one column per observation.
    pub bht: Array2<f64>,
    /// `H B Hᵀ`.
    pub hbht: Array2<f64>,
}

impl GainTerms {
    pub fn zeros(state_len: usize, m: usize) -> Self {
        Self {
            bht: Array2::zeros((state_len, m)),
            hbht: Array2::zeros((m, m)),
        }
    }
}

/// Assemble `BHᵀ` and `HBHᵀ` from covariance patches, Schur-weighted by
/// `loc` when given.
///
/// Same-layer columns come from the patch at each stencil point. Layer-1
/// rows of a layer-2 observation need `Cov(x1(a), x2(s))`, which lives in
/// the cross channel of the patch at `a`, so those centres are fetched too.
/// `HBHᵀ` averages the two available estimates of same-layer entries, is
/// symmetric by construction and has its diagonal clamped at zero.
pub fn patches_to_gain_terms(
    provider: &dyn PatchProvider,
    h: &ObsOperator,
    loc: Option<&LocalizationSpec>,
) -> Result<GainTerms> {
    let grid = *provider.grid();
    let np = grid.points();
    let p = provider.patch_size();
    let half = (p / 2) as isize;
    if h.state_len() != grid.state_len() {
        return Err(Error::config("observation operator does not match the patch grid"));
    }
    if let Some(l) = loc {
        if l.grid() != &grid {
            return Err(Error::config("localization grid does not match the patch grid"));
        }
    }
    let m = h.len();
    if m == 0 {
        return Ok(GainTerms::zeros(grid.state_len(), 0));
    }
    let weight = |dy: isize, dx: isize| loc.map_or(1.0, |l| l.at_offset(dy, dx));

    let mut needed = vec![false; np];
    for row in h.rows() {
        for &(s, _) in &row.stencil {
            let ps = s % np;
            needed[ps] = true;
            if s >= np {
                for dy in -half..half {
                    for dx in -half..half {
                        if weight(dy, dx) != 0.0 {
                            needed[grid.shifted(ps, -dy, -dx)] = true;
                        }
                    }
                }
            }
        }
    }
    let centers: Vec<usize> = (0..np).filter(|&c| needed[c]).collect();
    let fetched = provider.patches(&centers)?;
    if fetched.len() != centers.len() || fetched.iter().any(|pt| pt.p() != p) {
        return Err(Error::config("patch provider returned patches of the wrong shape"));
    }
    let mut table: Vec<Option<CovPatch>> = vec![None; np];
    for (c, patch) in centers.iter().zip(fetched) {
        table[*c] = Some(patch);
    }
    let at = |c: usize| table[c].as_ref().expect("requested centre");

    let mut bht = Array2::zeros((grid.state_len(), m));
    for (j, row) in h.rows().iter().enumerate() {
        for &(s, hw) in &row.stencil {
            let (layer, ps) = (s / np, s % np);
            let patch = at(ps);
            for i in 0..p {
                let dy = i as isize - half;
                for jj in 0..p {
                    let dx = jj as isize - half;
                    let ww = weight(dy, dx);
                    if ww == 0.0 {
                        continue;
                    }
                    let a = grid.shifted(ps, dy, dx);
                    bht[[layer * np + a, j]] += hw * ww * patch.data[[2 * layer, i, jj]];
                    if layer == 0 {
                        bht[[np + a, j]] += hw * ww * patch.data[[1, i, jj]];
                    } else {
                        // Offset (dy, dx) now runs from the layer-1 point to s.
                        let a1 = grid.shifted(ps, -dy, -dx);
                        bht[[a1, j]] += hw * ww * at(a1).data[[1, i, jj]];
                    }
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
                    let (ls, ps, lt, pt) = (s / np, s % np, t / np, t % np);
                    let (dy, dx) = grid.offset(ps, pt);
                    let ww = weight(dy, dx);
                    if ww == 0.0 {
                        continue;
                    }
                    let (by, bx) = grid.offset(pt, ps);
                    let cov = match (ls, lt) {
                        (0, 1) => at(ps).get(1, dy, dx).unwrap_or(0.0),
                        (1, 0) => at(pt).get(1, by, bx).unwrap_or(0.0),
                        _ => {
                            let ch = 2 * ls;
                            match (at(ps).get(ch, dy, dx), at(pt).get(ch, by, bx)) {
                                (Some(u), Some(v)) => 0.5 * (u + v),
                                (Some(u), None) | (None, Some(u)) => u,
                                (None, None) => 0.0,
                            }
                        }
                    };
                    acc += hs * ht * ww * cov;
                }
            }
            hbht[[j, k]] = acc;
            hbht[[k, j]] = acc;
        }
    }
    for j in 0..m {
        hbht[[j, j]] = f64::max(hbht[[j, j]], 0.0);
    }
    Ok(GainTerms { bht, hbht })
}
