use ndarray::Array2;
use rand::seq::SliceRandom;

use super::layers::Act;
use super::net::{forward, loss_and_grad, Adam, NetConfig, NetParams};
use crate::cov::CovPatchSample;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// One stored training pair in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub cycle: u64,
    pub center: u32,
    /// `2 × P × P`, channel-major.
    pub input: Vec<f32>,
    /// `3 × P × P`, channel-major.
    pub output: Vec<f32>,
}

impl From<&CovPatchSample> for PatchRecord {
    fn from(s: &CovPatchSample) -> Self {
        Self {
            cycle: s.cycle,
            center: s.center as u32,
            input: s.input.iter().map(|v| *v as f32).collect(),
            output: s.output.data.iter().map(|v| *v as f32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchDataset {
    pub p: usize,
    pub samples: Vec<PatchRecord>,
}

impl PatchDataset {
    pub fn new(p: usize) -> Self {
        Self { p, samples: Vec::new() }
    }

    pub fn extend_from(&mut self, samples: &[CovPatchSample]) {
        self.samples.extend(samples.iter().map(PatchRecord::from));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-channel affine scaling of inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub in_mean: Vec<f64>,
    pub in_sd: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_sd: Vec<f64>,
}

fn channel_stats<'a>(
    rows: impl Iterator<Item = &'a [f32]>,
    channels: usize,
    plane: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    let mut count = 0usize;
    for r in rows {
        for c in 0..channels {
            for v in &r[c * plane..(c + 1) * plane] {
                let v = *v as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        count += plane;
    }
    let n = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let sd = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / n - m * m).max(0.0);
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

impl Standardization {
    pub fn identity(config: &NetConfig) -> Self {
        Self {
            in_mean: vec![0.0; config.in_channels],
            in_sd: vec![1.0; config.in_channels],
            out_mean: vec![0.0; config.out_channels],
            out_sd: vec![1.0; config.out_channels],
        }
    }

    pub fn fit(records: &[&PatchRecord], config: &NetConfig, p: usize) -> Self {
        let plane = p * p;
        let (in_mean, in_sd) = channel_stats(records.iter().map(|r| &r.input[..]), config.in_channels, plane);
        let (out_mean, out_sd) = channel_stats(records.iter().map(|r| &r.output[..]), config.out_channels, plane);
        Self {
            in_mean,
            in_sd,
            out_mean,
            out_sd,
        }
    }
}

/// A trained network plus everything needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Patch side the network was trained on.
    pub p: usize,
    pub norm: Standardization,
    pub params: NetParams<f32>,
}

/// Stack records into standardized `(channels, b·P·P)` input and target.
pub fn batch_tensors(
    records: &[&PatchRecord],
    norm: &Standardization,
    p: usize,
) -> (Act<f32>, Array2<f32>) {
    let plane = p * p;
    let b = records.len();
    let (ci, co) = (norm.in_mean.len(), norm.out_mean.len());
    let mut x = Act::zeros(ci, b, p, p);
    let mut t = Array2::zeros((co, b * plane));
    for (k, r) in records.iter().enumerate() {
        for c in 0..ci {
            let (m, s) = (norm.in_mean[c], norm.in_sd[c]);
            let dst = &mut x.data.row_mut(c);
            for (i, v) in r.input[c * plane..(c + 1) * plane].iter().enumerate() {
                dst[k * plane + i] = ((*v as f64 - m) / s) as f32;
            }
        }
        for c in 0..co {
            let (m, s) = (norm.out_mean[c], norm.out_sd[c]);
            for (i, v) in r.output[c * plane..(c + 1) * plane].iter().enumerate() {
                t[[c, k * plane + i]] = ((*v as f64 - m) / s) as f32;
            }
        }
    }
    (x, t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            epochs: 200,
            batch_size: 32,
            val_fraction: 0.2,
            seed: 1,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("train.val_fraction must be in (0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("train.batch_size and train.epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch of minimum validation RMSE.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochLoss>,
    pub steps: u64,
}

/// Root-mean-square error of a checkpoint over records, in standardized units.
pub fn evaluate(ck: &Checkpoint, records: &[&PatchRecord], batch: usize) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for chunk in records.chunks(batch.max(1)) {
        let (x, t) = batch_tensors(chunk, &ck.norm, ck.p);
        let y = forward(&ck.params, &x)?;
        sq += y
            .data
            .iter()
            .zip(t.iter())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>();
        count += t.len();
    }
    Ok((sq / count.max(1) as f64).sqrt())
}

/// Seeded 80/20-style split, shuffled minibatch Adam, best-validation
/// checkpoint. With too few samples to hold any out, the training set
/// doubles as the validation set.
pub fn train(dataset: &PatchDataset, net: NetConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    net.check_side(dataset.p)?;
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    let seeds = SeedTree::new(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seeds.stream("split", 0, 0));
    let n_val = (dataset.len() as f64 * cfg.val_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(dataset.len() - 1));
    let mut train_idx = train_idx.to_vec();
    let val_idx = if val_idx.is_empty() { train_idx.clone() } else { val_idx.to_vec() };

    let train_refs: Vec<&PatchRecord> = train_idx.iter().map(|&i| &dataset.samples[i]).collect();
    let norm = Standardization::fit(&train_refs, &net, dataset.p);
    let val_refs: Vec<&PatchRecord> = val_idx.iter().map(|&i| &dataset.samples[i]).collect();

    let mut ck = Checkpoint {
        p: dataset.p,
        norm,
        params: NetParams::init(net, seeds.derive("init", 0, 0)),
    };
    let mut adam = Adam::new(ck.params.values.len(), cfg.learning_rate);
    let mut best = ck.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0u64;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut seeds.stream("epoch", epoch as u64, 0));
        let mut sq = 0.0;
        let mut count = 0usize;
        let mut done = false;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let refs: Vec<&PatchRecord> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let (x, t) = batch_tensors(&refs, &ck.norm, ck.p);
            let (rmse, grad) = loss_and_grad(&ck.params, &x, &t)?;
            adam.update(&mut ck.params.values, &grad);
            sq += (rmse as f64).powi(2) * t.len() as f64;
            count += t.len();
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                done = true;
                break;
            }
        }
        let val_rmse = evaluate(&ck, &val_refs, cfg.batch_size)?;
        history.push(EpochLoss {
            epoch,
            train_rmse: (sq / count.max(1) as f64).sqrt(),
            val_rmse,
        });
        if val_rmse < best_val {
            best_val = val_rmse;
            best_epoch = epoch;
            best = ck.clone();
        }
        if done {
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        steps,
    })
}
