//! Run configuration: a flat TOML key-value file (generator settings under
//! `[synth]`) plus `key=value` overrides from the command line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use hfe_core::data::SynthSpec;
use hfe_core::train::AblationFlags;
use hfe_core::HfeConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub hfe: HfeConfig,
    #[serde(flatten)]
    pub flags: AblationFlags,
    /// CSV dataset; when absent data is generated from `[synth]` instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub epochs: u64,
    pub out_dir: PathBuf,
    /// Log every n-th step; the last step is always logged.
    pub log_every: u64,
    pub log_format: LogFormat,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hfe: HfeConfig::default(),
            flags: AblationFlags::full(),
            dataset: None,
            epochs: 10,
            out_dir: PathBuf::from("run"),
            log_every: 1,
            log_format: LogFormat::Csv,
            synth: SynthSpec::default(),
        }
    }
}

fn known_keys() -> (BTreeSet<String>, BTreeSet<String>) {
    let table = Table::try_from(RunConfig::default()).expect("default config serializes");
    let mut top: BTreeSet<String> = table.keys().cloned().collect();
    top.insert("dataset".to_string());
    let synth = match table.get("synth") {
        Some(Value::Table(t)) => t.keys().cloned().collect(),
        _ => BTreeSet::new(),
    };
    (top, synth)
}

fn check_keys(table: &Table) -> Result<(), CliError> {
    let (top, synth) = known_keys();
    for (key, value) in table {
        if !top.contains(key) {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        if key == "synth" {
            let Value::Table(inner) = value else {
                return Err(CliError::Usage("synth must be a table".to_string()));
            };
            if let Some(k) = inner.keys().find(|k| !synth.contains(*k)) {
                return Err(CliError::Usage(format!("unknown config key \"synth.{k}\"")));
            }
        }
    }
    Ok(())
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `key=value` override; `synth.<field>` addresses the `[synth]` table.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    match key.trim().split_once('.') {
        Some(("synth", field)) => {
            let entry = table
                .entry("synth")
                .or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(t) => {
                    t.insert(field.to_string(), value);
                }
                _ => return Err(CliError::Usage("synth must be a table".to_string())),
            }
        }
        Some(_) => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        None => {
            table.insert(key.trim().to_string(), value);
        }
    }
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self, CliError> {
        check_keys(&table)?;
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.hfe.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.flags.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.log_every == 0 {
            return Err(CliError::Usage("log_every must be at least 1".to_string()));
        }
        if self.dataset.is_none() {
            self.synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Optimizer steps in one pass over `n` samples with `P·K`-sized batches.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size.max(1)) as u64
}
