//! `key = value` configuration files mirroring [`DenoiseConfig`].
//!
//! Keys are the config field names; unknown keys are rejected. Strings
//! (only `image_update`) are quoted: `image_update = "every_iteration"`.

use std::fs;
use std::path::Path;

use crate::denoiser::DenoiseConfig;
use crate::error::{CpscError, Result};

pub fn parse_config(text: &str) -> Result<DenoiseConfig> {
    let cfg: DenoiseConfig = toml::from_str(text).map_err(|e| CpscError::format("config", e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<DenoiseConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CpscError::from(e).context(format!("reading {}", path.display())))?;
    parse_config(&text).map_err(|e| e.context(path.display().to_string()))
}
