//! TOML run configuration.
//!
//! The document is a [`CoevoConfig`]: top-level `seed`, `g`, `e`, `k`, ...,
//! plus `[env]`, `[cma]` (`p_c`, `sigma`), `[gp]` (`p_g`, depths,
//! tournament) and `[clustering]` (`n_vm`, `n_dm`, radii) tables. Omitted
//! keys take their defaults; unknown keys are rejected.

use std::path::Path;

use glasspipe::coevo::CoevoConfig;

use crate::{read_file, Error, Result};

pub fn parse(text: &str) -> std::result::Result<CoevoConfig, String> {
    let cfg: CoevoConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<CoevoConfig> {
    let text = read_file(path)?;
    parse(&text).map_err(|message| Error::Config {
        path: path.to_path_buf(),
        message,
    })
}

pub fn to_toml(cfg: &CoevoConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| crate::usage(format!("cannot serialize config: {e}")))
}
