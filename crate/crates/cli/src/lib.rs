//! Experiment runner: TOML configs in, a run directory of reports, CSV
//! aggregates, checkpoints and loss curves out.

pub mod config;
pub mod experiments;
pub mod run;

use std::path::{Path, PathBuf};

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};

/// Output root used when neither `--out` nor the config's `out` is given.
pub const OUT_ENV: &str = "ABINITIO_OUT";

pub enum Outcome {
    Complete(PathBuf),
    Failed(PathBuf, anyhow::Error),
}

/// Validate, then run the experiment under `out`. A failure after the run
/// directory exists still writes its manifest.
pub fn execute(config: &ExperimentConfig, out: &Path) -> Result<Outcome, anyhow::Error> {
    let mut dir = run::RunDir::create(out, config)?;
    match experiments::run(config, &mut dir) {
        Ok(()) => Ok(Outcome::Complete(dir.finish(config, None)?)),
        Err(e) => Ok(Outcome::Failed(dir.finish(config, Some(format!("{e:#}")))?, e)),
    }
}
