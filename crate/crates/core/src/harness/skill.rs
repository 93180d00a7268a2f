//! Covariance skill relative to a climatological baseline.

use ndarray::Array3;

use crate::cov::CovPatch;
use crate::error::{Error, Result};

/// Running sums of squared errors of a test and a climatological patch set
/// against a reference, per channel and offset.
#[derive(Debug, Clone)]
pub struct SkillAccumulator {
    test: Array3<f64>,
    clim: Array3<f64>,
    count: usize,
}

impl SkillAccumulator {
    pub fn new(p: usize) -> Self {
        Self {
            test: Array3::zeros((3, p, p)),
            clim: Array3::zeros((3, p, p)),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, test: &CovPatch, reference: &CovPatch, clim: &CovPatch) -> Result<()> {
        let shape = self.test.shape();
        for (what, p) in [("test", test), ("reference", reference), ("climatology", clim)] {
            if p.data.shape() != shape {
                return Err(Error::config(format!(
                    "{what} patch has shape {:?}, expected {shape:?}",
                    p.data.shape()
                )));
            }
        }
        if test.center != reference.center || clim.center != reference.center {
            return Err(Error::config(format!(
                "patch centres differ: test {}, reference {}, climatology {}",
                test.center, reference.center, clim.center
            )));
        }
        ndarray::Zip::from(&mut self.test)
            .and(&mut self.clim)
            .and(&test.data)
            .and(&reference.data)
            .and(&clim.data)
            .for_each(|st, sc, &t, &r, &c| {
                *st += (t - r).powi(2);
                *sc += (c - r).powi(2);
            });
        self.count += 1;
        Ok(())
    }

    /// `RMSE(test − ref) / RMSE(clim − ref)`; `None` where the climatology
    /// matches the reference exactly.
    pub fn ratio(&self) -> Array3<Option<f64>> {
        ndarray::Zip::from(&self.test)
            .and(&self.clim)
            .map_collect(|&t, &c| (c > 0.0).then(|| (t / c).sqrt()))
    }
}

/// Ratio map over aligned patch lists (same centres and cycles, in order).
pub fn cov_skill_ratio(
    test: &[CovPatch],
    reference: &[CovPatch],
    climatology: &[CovPatch],
) -> Result<Array3<Option<f64>>> {
    if test.len() != reference.len() || climatology.len() != reference.len() {
        return Err(Error::config(format!(
            "patch counts differ: test {}, reference {}, climatology {}",
            test.len(),
            reference.len(),
            climatology.len()
        )));
    }
    let Some(first) = reference.first() else {
        return Err(Error::config("no patches to compare"));
    };
    let mut acc = SkillAccumulator::new(first.p());
    for ((t, r), c) in test.iter().zip(reference).zip(climatology) {
        acc.add(t, r, c)?;
    }
    Ok(acc.ratio())
}

/// Centre value of a ratio map for one channel.
pub fn center_ratio(map: &Array3<Option<f64>>, ch: usize) -> Option<f64> {
    let h = map.shape()[1] / 2;
    map[[ch, h, h]]
}
