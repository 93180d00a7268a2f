use crate::cov::ensemble_mean;
use crate::error::{Error, Result};

/// Ensemble of flat state vectors with its stored arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

impl Ensemble {
    pub fn new(members: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::config("ensemble needs at least one member"));
        };
        if members.iter().any(|m| m.len() != first.len()) {
            return Err(Error::config("ensemble members differ in length"));
        }
        let mean = ensemble_mean(&members);
        Ok(Self { members, mean })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    pub fn into_members(self) -> Vec<Vec<f64>> {
        self.members
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Per-layer RMS perturbation (unbiased), splitting the state evenly
    /// into `layers` blocks. Zero for a single member.
    pub fn spread(&self, layers: usize) -> Vec<f64> {
        let n = self.size();
        let block = self.dim() / layers;
        (0..layers)
            .map(|l| {
                if n < 2 {
                    return 0.0;
                }
                let range = l * block..(l + 1) * block;
                let mut acc = 0.0;
                for m in &self.members {
                    for i in range.clone() {
                        let d = m[i] - self.mean[i];
                        acc += d * d;
                    }
                }
                (acc / ((n - 1) * block) as f64).sqrt()
            })
            .collect()
    }
}

/// Relaxation to prior perturbations: `x'ₐ ← (1-α) x'ₐ + α x'_b`,
/// recentred on the analysis mean.
pub fn relax_to_prior(prior: &[Vec<f64>], posterior: &[Vec<f64>], alpha: f64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("relaxation factor must be in [0, 1], got {alpha}")));
    }
    if prior.len() != posterior.len() {
        return Err(Error::config("prior and posterior ensembles differ in size"));
    }
    if alpha == 0.0 {
        return Ok(posterior.to_vec());
    }
    let (mb, ma) = (ensemble_mean(prior), ensemble_mean(posterior));
    Ok(prior
        .iter()
        .zip(posterior)
        .map(|(xb, xa)| {
            (0..ma.len())
                .map(|i| ma[i] + (1.0 - alpha) * (xa[i] - ma[i]) + alpha * (xb[i] - mb[i]))
                .collect()
        })
        .collect())
}
