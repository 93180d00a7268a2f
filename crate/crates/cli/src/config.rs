//! `key = value` configuration with `[section]` headers.

use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use unetkf_core::da::Method;
use unetkf_core::harness::{ControlConfig, ExperimentConfig, TruthConfig};
use unetkf_core::qg::RegridMethod;
use unetkf_core::rng::SeedTree;
use unetkf_core::unet::{NetConfig, TrainConfig};
use unetkf_core::{Error, Result};

pub const SECTIONS: [&str; 7] = ["model", "grid", "obs", "da", "unet", "train", "experiment"];

/// Artifact locations. Unset entries default to files under the output
/// directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Artifacts {
    pub truth: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub control: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub ensembles: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    pub truth: TruthConfig,
    pub control: ControlConfig,
    pub experiment: ExperimentConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Days of DA spin-up left out of time means and tests.
    pub skip_days: usize,
    pub artifacts: Artifacts,
    /// Keys set explicitly for seeds that otherwise derive from `seed`.
    da_seed: Option<u64>,
    train_seed: Option<u64>,
}

/// Equal when every resolved setting is; whether a seed was derived or set
/// explicitly does not matter.
impl PartialEq for Config {
    fn eq(&self, o: &Self) -> bool {
        self.seed == o.seed
            && self.truth == o.truth
            && self.control == o.control
            && self.experiment == o.experiment
            && self.net == o.net
            && self.train == o.train
            && self.skip_days == o.skip_days
            && self.artifacts == o.artifacts
    }
}

impl Default for Config {
    fn default() -> Self {
        let mut c = Self {
            seed: 1,
            truth: TruthConfig::default(),
            control: ControlConfig::default(),
            experiment: ExperimentConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            skip_days: 60,
            artifacts: Artifacts::default(),
            da_seed: None,
            train_seed: None,
        };
        c.derive_seeds();
        c
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("[{section}] {key}: expected {what}, got {value:?}")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("[{section}] {key}: expected true or false, got {value:?}"))),
    }
}

/// Metres, with an optional `m` or `km` suffix.
fn parse_length(section: &str, key: &str, value: &str) -> Result<f64> {
    let v = value.trim();
    let (num, scale) = if let Some(n) = v.strip_suffix("km") {
        (n, 1000.0)
    } else if let Some(n) = v.strip_suffix('m') {
        (n, 1.0)
    } else {
        (v, 1.0)
    };
    let x: f64 = parse(section, key, num.trim(), "a length in metres (or with a km suffix)")?;
    Ok(x * scale)
}

fn optional<T>(value: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        f(value).map(Some)
    }
}

impl Config {
    fn derive_seeds(&mut self) {
        let root = SeedTree::new(self.seed);
        self.experiment.da.seed = self.da_seed.unwrap_or_else(|| root.derive("da", 0, 0));
        self.train.seed = self.train_seed.unwrap_or_else(|| root.derive("train", 0, 0));
    }

    /// Replace the root seed, re-deriving every seed not set explicitly.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.derive_seeds();
    }

    pub fn seeds(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    /// Every seed in use, by name.
    pub fn seed_list(&self) -> Vec<(&'static str, u64)> {
        let root = self.seeds();
        vec![
            ("root", self.seed),
            ("truth", root.derive("truth", 0, 0)),
            ("control", root.derive("control", self.experiment.n as u64, 0)),
            ("da", self.experiment.da.seed),
            ("train", self.train.seed),
        ]
    }

    /// Fill unset artifact paths with defaults under `out`. Observations
    /// stay unset: without a file they are drawn from the seed.
    pub fn resolve_artifacts(&mut self, out: &Path) {
        let a = &mut self.artifacts;
        for (slot, name) in [
            (&mut a.truth, "truth.qgtj"),
            (&mut a.control, "control.qgtj"),
            (&mut a.dataset, "dataset.qgpd"),
            (&mut a.ensembles, "ensembles.qgtj"),
            (&mut a.checkpoint, "checkpoint.unwt"),
        ] {
            slot.get_or_insert_with(|| out.join(name));
        }
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let (s, k, v) = (section, key, value);
        let e = &mut self.experiment;
        match (s, k) {
            ("model", "spinup_days") => self.truth.spinup_days = parse(s, k, v, "an unsigned integer")?,
            ("model", "truth_days") => self.truth.days = parse(s, k, v, "an unsigned integer")?,
            ("model", "amplitude") => self.truth.amplitude = parse(s, k, v, "a number")?,
            ("model", "control_years") => self.control.years = parse(s, k, v, "an unsigned integer")?,
            ("model", "control_spinup_days") => self.control.spinup_days = parse(s, k, v, "an unsigned integer")?,
            ("model", "control_stride_days") => self.control.stride_days = parse(s, k, v, "an unsigned integer")?,
            ("grid", "truth_n") => self.truth.n = parse(s, k, v, "an unsigned integer")?,
            ("grid", "n") => e.n = parse(s, k, v, "an unsigned integer")?,
            ("grid", "patch") => e.patch = parse(s, k, v, "an unsigned integer")?,
            ("obs", "count") => e.obs_per_cycle = parse(s, k, v, "an unsigned integer")?,
            ("obs", "error_sd_upper") => e.obs_error_sd[0] = parse(s, k, v, "a number")?,
            ("obs", "error_sd_lower") => e.obs_error_sd[1] = parse(s, k, v, "a number")?,
            ("obs", "file") => self.artifacts.observations = optional(v, |p| Ok(PathBuf::from(p)))?,
            ("da", "method") => e.da.method = v.parse::<Method>()?,
            ("da", "ensemble_size") => e.da.ensemble_size = parse(s, k, v, "an unsigned integer")?,
            ("da", "relaxation") => e.da.relaxation = parse(s, k, v, "a number")?,
            ("da", "localization_radius") => e.da.localization_m = parse_length(s, k, v)?,
            ("da", "cycle_days") => e.da.cycle_days = parse(s, k, v, "a number")?,
            ("da", "checkpoint") => self.artifacts.checkpoint = optional(v, |p| Ok(PathBuf::from(p)))?,
            ("da", "b_scale") => e.b_scale = parse(s, k, v, "a number")?,
            ("da", "b_window_days") => self.control.window_days = parse(s, k, v, "an unsigned integer")?,
            ("da", "seed") => self.da_seed = Some(parse(s, k, v, "an unsigned integer")?),
            ("unet", "width") => self.net.width = parse(s, k, v, "an unsigned integer")?,
            ("unet", "depth") => self.net.depth = parse(s, k, v, "an unsigned integer")?,
            ("unet", "transfer_from") => {
                e.transfer_from = optional(v, |x| parse(s, k, x, "an unsigned integer or none"))?
            }
            ("unet", "regrid") => e.regrid = v.parse::<RegridMethod>()?,
            ("train", "learning_rate") => self.train.learning_rate = parse(s, k, v, "a number")?,
            ("train", "epochs") => self.train.epochs = parse(s, k, v, "an unsigned integer")?,
            ("train", "batch_size") => self.train.batch_size = parse(s, k, v, "an unsigned integer")?,
            ("train", "val_fraction") => self.train.val_fraction = parse(s, k, v, "a number")?,
            ("train", "max_steps") => {
                self.train.max_steps = optional(v, |x| parse(s, k, x, "an unsigned integer or none"))?
            }
            ("train", "seed") => self.train_seed = Some(parse(s, k, v, "an unsigned integer")?),
            ("experiment", "name") => e.name = v.to_string(),
            ("experiment", "seed") => self.seed = parse(s, k, v, "an unsigned integer")?,
            ("experiment", "start_day") => e.start_day = parse(s, k, v, "an unsigned integer")?,
            ("experiment", "days") => e.days = parse(s, k, v, "an unsigned integer")?,
            ("experiment", "skip_days") => self.skip_days = parse(s, k, v, "an unsigned integer")?,
            ("experiment", "capture_stride") => {
                e.capture_stride = optional(v, |x| parse(s, k, x, "an unsigned integer or none"))?
            }
            ("experiment", "store_ensembles") => e.store_ensembles = parse_bool(s, k, v)?,
            ("experiment", "truth") => self.artifacts.truth = optional(v, |p| Ok(PathBuf::from(p)))?,
            ("experiment", "control") => self.artifacts.control = optional(v, |p| Ok(PathBuf::from(p)))?,
            ("experiment", "dataset") => self.artifacts.dataset = optional(v, |p| Ok(PathBuf::from(p)))?,
            ("experiment", "ensembles") => self.artifacts.ensembles = optional(v, |p| Ok(PathBuf::from(p)))?,
            _ => return Err(Error::config(format!("unknown key {k:?} in section [{s}]"))),
        }
        Ok(())
    }

    /// Cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.control.validate()?;
        self.net.validate()?;
        self.net.check_side(self.experiment.transfer_from.map_or(self.experiment.patch, |c| {
            self.experiment.patch * c / self.experiment.n
        }))?;
        self.train.validate()?;
        if self.truth.n < self.experiment.n || !self.truth.n.is_multiple_of(self.experiment.n) {
            return Err(Error::config(format!(
                "[grid] truth_n = {} must be a multiple of n = {}",
                self.truth.n, self.experiment.n
            )));
        }
        if !(self.truth.amplitude > 0.0) {
            return Err(Error::config("[model] amplitude must be > 0"));
        }
        Ok(())
    }

    /// Canonical text of every setting; parses back to the same config.
    pub fn to_text(&self) -> String {
        let e = &self.experiment;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let regrid = match e.regrid {
            RegridMethod::Bilinear => "bilinear",
            RegridMethod::AreaWeighted => "area",
            RegridMethod::Cubic => "cubic",
        };
        let sections: [(&str, Vec<(&str, String)>); 7] = [
            (
                "model",
                vec![
                    ("spinup_days", self.truth.spinup_days.to_string()),
                    ("truth_days", self.truth.days.to_string()),
                    ("amplitude", format!("{:e}", self.truth.amplitude)),
                    ("control_years", self.control.years.to_string()),
                    ("control_spinup_days", self.control.spinup_days.to_string()),
                    ("control_stride_days", self.control.stride_days.to_string()),
                ],
            ),
            (
                "grid",
                vec![
                    ("truth_n", self.truth.n.to_string()),
                    ("n", e.n.to_string()),
                    ("patch", e.patch.to_string()),
                ],
            ),
            (
                "obs",
                vec![
                    ("count", e.obs_per_cycle.to_string()),
                    ("error_sd_upper", format!("{:e}", e.obs_error_sd[0])),
                    ("error_sd_lower", format!("{:e}", e.obs_error_sd[1])),
                    ("file", path(&self.artifacts.observations)),
                ],
            ),
            (
                "da",
                vec![
                    ("method", e.da.method.to_string()),
                    ("ensemble_size", e.da.ensemble_size.to_string()),
                    ("relaxation", e.da.relaxation.to_string()),
                    ("localization_radius", e.da.localization_m.to_string()),
                    ("cycle_days", e.da.cycle_days.to_string()),
                    ("checkpoint", path(&self.artifacts.checkpoint)),
                    ("b_scale", e.b_scale.to_string()),
                    ("b_window_days", self.control.window_days.to_string()),
                    ("seed", e.da.seed.to_string()),
                ],
            ),
            (
                "unet",
                vec![
                    ("width", self.net.width.to_string()),
                    ("depth", self.net.depth.to_string()),
                    ("transfer_from", opt(e.transfer_from)),
                    ("regrid", regrid.to_string()),
                ],
            ),
            (
                "train",
                vec![
                    ("learning_rate", self.train.learning_rate.to_string()),
                    ("epochs", self.train.epochs.to_string()),
                    ("batch_size", self.train.batch_size.to_string()),
                    ("val_fraction", self.train.val_fraction.to_string()),
                    ("max_steps", self.train.max_steps.map_or("none".into(), |v| v.to_string())),
                    ("seed", self.train.seed.to_string()),
                ],
            ),
            (
                "experiment",
                vec![
                    ("name", e.name.clone()),
                    ("seed", self.seed.to_string()),
                    ("start_day", e.start_day.to_string()),
                    ("days", e.days.to_string()),
                    ("skip_days", self.skip_days.to_string()),
                    ("capture_stride", opt(e.capture_stride)),
                    ("store_ensembles", e.store_ensembles.to_string()),
                    ("truth", path(&self.artifacts.truth)),
                    ("control", path(&self.artifacts.control)),
                    ("dataset", path(&self.artifacts.dataset)),
                    ("ensembles", path(&self.artifacts.ensembles)),
                ],
            ),
        ];
        for (name, entries) in sections {
            writeln!(s, "[{name}]").unwrap();
            for (k, v) in entries {
                writeln!(s, "{k} = {v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Parse configuration text over the defaults. A `[manifest]` section (as
/// written next to every run) is accepted and ignored, so a manifest can be
/// fed back in as a configuration.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let mut section: Option<String> = None;
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let at = |msg: String| Error::config(format!("line {}: {msg}", i + 1));
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) && name != "manifest" {
                return Err(at(format!(
                    "unknown section [{name}] (expected one of {})",
                    SECTIONS.join(", ")
                )));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(at(format!("expected `key = value`, got {line:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        let sec = section.as_deref().ok_or_else(|| at(format!("key {key:?} appears before any [section]")))?;
        if sec == "manifest" {
            continue;
        }
        if !seen.insert((sec.to_string(), key.to_string())) {
            return Err(at(format!("[{sec}] {key} is set twice")));
        }
        cfg.set(sec, key, value).map_err(|e| match e {
            Error::Config(m) => at(m),
            other => other,
        })?;
    }
    cfg.derive_seeds();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}
