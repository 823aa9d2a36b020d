//! Run directory: every file written goes through [`RunDir`] so the manifest
//! lists all artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use abinitio_core::proposals::{save_checkpoint, Proposal};
use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.json";

pub struct RunDir {
    pub root: PathBuf,
    artifacts: Vec<String>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_hash: String,
    seed: u64,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    elapsed_seconds: f64,
    artifacts: &'a [String],
}

impl RunDir {
    /// `<out>/<experiment>-<config hash>-seed<seed>`, created fresh.
    pub fn create(out: &Path, config: &ExperimentConfig) -> Result<Self> {
        let root = out.join(format!("{}-{}-seed{}", config.experiment.as_str(), config.hash(), config.seed));
        if root.exists() {
            std::fs::remove_dir_all(&root).with_context(|| format!("clearing {}", root.display()))?;
        }
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        let mut run = Self { root, artifacts: Vec::new(), started: Instant::now() };
        run.write_text("config.toml", &config.to_toml())?;
        Ok(run)
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.artifacts.push(rel.to_string());
        Ok(p)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_text(rel, &(text + "\n"))
    }

    /// Write CSV rows with a header taken from the first record's field names.
    pub fn write_csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let p = self.path(rel)?;
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_checkpoint(&mut self, rel: &str, proposal: &Proposal, seed: u64, aux: usize) -> Result<()> {
        let p = self.path(rel)?;
        save_checkpoint(&p, proposal, seed, aux)?;
        Ok(())
    }

    pub fn write_loss_curve(&mut self, rel: &str, curve: &[(usize, f64)]) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            step: usize,
            loss: f64,
        }
        let rows: Vec<Row> = curve.iter().map(|&(step, loss)| Row { step, loss }).collect();
        self.write_csv(rel, &rows)
    }

    /// Write the manifest; `error` marks the run as failed.
    pub fn finish(mut self, config: &ExperimentConfig, error: Option<String>) -> Result<PathBuf> {
        self.artifacts.push(MANIFEST.to_string());
        let m = Manifest {
            experiment: config.experiment.as_str(),
            config_hash: config.hash(),
            seed: config.seed,
            status: if error.is_some() { "failed" } else { "complete" },
            error,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            artifacts: &self.artifacts,
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        std::fs::write(self.root.join(MANIFEST), text)?;
        Ok(self.root)
    }
}
