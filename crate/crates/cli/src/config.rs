use std::path::Path;

use sha2::{Digest, Sha256};
use taskcode::SweepConfig;

use crate::error::{CliError, CliResult};

pub fn load(path: &Path) -> CliResult<SweepConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig { path: path.to_owned(), source })?;
    parse(&text)
}

pub fn parse(text: &str) -> CliResult<SweepConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

/// Re-serialisation with a fixed key order; the basis of the config hash.
pub fn canonical(cfg: &SweepConfig) -> CliResult<String> {
    toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
