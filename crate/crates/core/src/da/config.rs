use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Free-running forecast, no assimilation.
    Control,
    ThreeDVar,
    En3DVar,
    EnKF,
    UNetKF,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Control => "control",
            Method::ThreeDVar => "3dvar",
            Method::En3DVar => "en3dvar",
            Method::EnKF => "enkf",
            Method::UNetKF => "unetkf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "control" | "none" => Ok(Method::Control),
            "3dvar" => Ok(Method::ThreeDVar),
            "en3dvar" => Ok(Method::En3DVar),
            "enkf" => Ok(Method::EnKF),
            "unetkf" => Ok(Method::UNetKF),
            other => Err(Error::config(format!(
                "da.method: unknown method {other:?} (expected control, 3dvar, en3dvar, enkf or unetkf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DAConfig {
    pub method: Method,
    pub ensemble_size: usize,
    pub relaxation: f64,
    pub localization_m: f64,
    pub cycle_days: f64,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for DAConfig {
    fn default() -> Self {
        Self {
            method: Method::ThreeDVar,
            ensemble_size: 1,
            relaxation: 0.0,
            localization_m: 1.0e5,
            cycle_days: 10.0,
            checkpoint: None,
            seed: 1,
        }
    }
}

impl DAConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.ensemble_size;
        if n == 0 {
            return Err(Error::config("da.ensemble_size must be >= 1"));
        }
        match self.method {
            Method::EnKF | Method::En3DVar if n < 2 => {
                return Err(Error::config(format!(
                    "da.ensemble_size: {} requires N >= 2, got {n}",
                    self.method
                )))
            }
            Method::ThreeDVar | Method::Control if n != 1 => {
                return Err(Error::config(format!(
                    "da.ensemble_size: {} requires N = 1, got {n}",
                    self.method
                )))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.relaxation) {
            return Err(Error::config(format!(
                "da.relaxation must be in [0, 1], got {}",
                self.relaxation
            )));
        }
        if !(self.localization_m > 0.0) {
            return Err(Error::config("da.localization_radius must be > 0"));
        }
        if !(self.cycle_days > 0.0) {
            return Err(Error::config("da.cycle_days must be > 0"));
        }
        Ok(())
    }
}
