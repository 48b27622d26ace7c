//! Run configuration: a TOML file with `[dsp]`, `[model]`, and `[train]`
//! sections, merged with command-line overrides. Every command echoes the
//! fully resolved configuration before doing work so a run can be
//! reconstructed from its output alone.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mtbca_core::dsp::DspConfig;
use mtbca_core::model::ModelConfig;
use mtbca_core::train::TrainConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub dsp: DspConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl FileConfig {
    /// Load from TOML, or fall back to defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                let config: FileConfig = toml::from_str(&text)
                    .with_context(|| format!("cannot parse config file {}", p.display()))?;
                Ok(config)
            }
        }
    }
}

/// Render the resolved configuration (plus a per-command section) and print
/// it. When `out_dir` is given the same text is written to
/// `effective-config.toml` inside it.
pub fn echo_effective<C: Serialize>(
    command_name: &str,
    command: &C,
    config: Option<&FileConfig>,
    out_dir: Option<&Path>,
) -> Result<String> {
    let mut text = String::from("# effective configuration\n");
    text.push_str(&format!("[{command_name}]\n"));
    text.push_str(&toml::to_string(command).context("serialize command args")?);
    if let Some(c) = config {
        text.push('\n');
        text.push_str(&toml::to_string(c).context("serialize config")?);
    }
    print!("{text}");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("effective-config.toml"), &text)?;
    }
    Ok(text)
}
