//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Keys accepted in a `--config` file. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub strict: Option<bool>,
    pub pad_groups: Option<bool>,
    pub cost_table: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub batch: Option<usize>,
    pub group_size: Option<usize>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// The fully resolved settings of a run, embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub format: Format,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Group sizes must divide the reduction length.
    pub strict: bool,
    pub cost_table: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub batch: Option<usize>,
    pub group_size: usize,
    pub threads: Option<usize>,
}
