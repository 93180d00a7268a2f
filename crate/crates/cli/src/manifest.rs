use std::fmt::Write;
use std::path::{Path, PathBuf};

use unetkf_core::{io, Result};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "manifest.ini";

/// Record of one command invocation: what ran, with which seeds, and where
/// its artifacts live. The resolved configuration follows the `[manifest]`
/// section, so the file can be passed back as `--config`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub name: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub seeds: Vec<(&'static str, u64)>,
    pub artifacts: Vec<(String, PathBuf)>,
    pub config: String,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &Config) -> Self {
        Self {
            name: cfg.experiment.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            status: "running".into(),
            seeds: cfg.seed_list(),
            artifacts: Vec::new(),
            config: cfg.to_text(),
        }
    }

    pub fn record(&mut self, role: &str, path: &Path) {
        self.artifacts.push((role.to_string(), path.to_path_buf()));
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("[manifest]\n");
        writeln!(s, "name = {}", self.name).unwrap();
        writeln!(s, "version = {}", self.version).unwrap();
        writeln!(s, "command = {}", self.command).unwrap();
        writeln!(s, "status = {}", self.status).unwrap();
        for (k, v) in &self.seeds {
            writeln!(s, "seed.{k} = {v}").unwrap();
        }
        for (k, p) in &self.artifacts {
            writeln!(s, "artifact.{k} = {}", p.display()).unwrap();
        }
        s.push('\n');
        s.push_str(&self.config);
        s
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        io::write_bytes(&out.join(MANIFEST_FILE), self.to_text().as_bytes())
    }
}
