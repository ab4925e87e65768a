//! Checkpoint files.

use std::path::Path;

use hfe_core::checkpoint::{decode, encode, Checkpoint};
use hfe_core::model::TrainState;
use hfe_core::HfeConfig;

use crate::CliError;

pub fn save_checkpoint(path: &Path, config: &HfeConfig, state: &TrainState) -> Result<(), CliError> {
    std::fs::write(path, encode(config, state)).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
