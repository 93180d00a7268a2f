//! Command surface for the twin-experiment workbench: configuration,
//! run manifests and the pipeline commands.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{run_command, Command};
pub use config::{load_config, parse_config, Config};
pub use manifest::RunManifest;

use unetkf_core::Error;

/// Process exit status for an error: 1 configuration, 2 numerical,
/// 3 I/O or corrupt artifact.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else if e.is_io() {
        3
    } else {
        1
    }
}
