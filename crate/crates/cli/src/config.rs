//! Run configuration: a strict JSON schema mirrored by command-line flags.
//! Flags override config fields; the `CLTLAB_SEED` environment variable
//! overrides a config-file seed but yields to an explicit `--seed`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use cltlab_core::gallery::GallerySpec;
use cltlab_core::montecarlo::Centering;
use cltlab_core::Model;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Per-recurrent-class normal mixture with variances from the exact
    /// centered second moment at the experiment's horizon (a single normal
    /// for irreducible chains).
    Mixture,
    /// Single normal with the series variance.
    SigmaSeries,
    /// Single normal with the absolute-mean functional variance (exact DP;
    /// lattice observables only).
    AbsMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Normalized (optionally endpoint-centered) partial sum vs a reference law.
    Clt,
    /// The absolute-mean variance functional.
    AbsMean,
}

/// Scalar command parameters. Every field is optional; commands apply their
/// own defaults and reject combinations they do not use.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centering: Option<Centering>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<Statistic>,
}

/// The full run configuration; `report` echoes the resolved form so a run can
/// be reproduced from its own output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gallery: Option<GallerySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub params: Params,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Exactly one model source must be present after merging.
    pub fn resolve_model(&self) -> Result<(Model, String), CliError> {
        match (&self.model, &self.gallery) {
            (Some(m), None) => Ok((m.clone(), "inline model".to_string())),
            (None, Some(spec)) => {
                let built = spec.build().map_err(cltlab_core::Error::from)?;
                Ok((built.model, built.name))
            }
            (Some(_), Some(_)) => Err(CliError::Config(
                "config supplies both \"model\" and \"gallery\"; exactly one is required".into(),
            )),
            (None, None) => Err(CliError::Config(
                "no model source: supply --model FILE, --gallery NAME, or a config with one".into(),
            )),
        }
    }

    pub fn seed(&self) -> u64 {
        self.params.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn workers(&self) -> usize {
        self.params.workers.unwrap_or(1)
    }

    pub fn tol(&self) -> f64 {
        self.params.tol.unwrap_or(DEFAULT_TOL)
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }
}

/// Reads `CLTLAB_SEED`, rejecting unparseable values instead of ignoring them.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("CLTLAB_SEED") {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("CLTLAB_SEED is not a u64: {text:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("CLTLAB_SEED unreadable: {e}"))),
    }
}
