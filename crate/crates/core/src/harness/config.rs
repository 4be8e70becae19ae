//! Experiment files.
//!
//! ```toml
//! schema = 1
//!
//! [system]
//! kind = "generic"            # generic | symbol_extension | cellular
//! users = 3
//! rx_antennas = 4
//! tx_antennas = 8             # generic only
//! streams = 1                 # generic and symbol_extension
//! # slots = 2                 # symbol_extension: effective antennas on both sides
//! # users_per_cell = 2        # cellular: streams per cell
//! # antennas_per_user = 3     # cellular: tx antennas = users_per_cell * antennas_per_user
//! power_grid_db = [0, 10, 20, 30, 40, 50, 60, 70, 80]
//! noise_var = 1.0
//! eps = 0.1
//! dim_threshold = 1e-6
//! complex_gaussian = false
//!
//! [experiment]
//! algorithms = ["rcrm", "leakage_min", "max_sinr", "max_sinr_qr"]
//! trials = 20
//! seed = 1
//! workers = 0                 # 0 uses every core
//! output = "results.csv"
//! format = "csv"              # csv | json
//! orthonormalize_each_round = false
//!
//! [budgets]
//! rcrm = 5
//! leakage_min = 2000
//! max_sinr = 2000
//! max_sinr_qr = 2000
//! ```
//!
//! Every key except `schema`, `[system].kind` and the antenna, user and
//! stream counts has the default shown.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Algorithm, Budgets, ExperimentSpec, OutputFormat};
use crate::error::{Error, Result};
use crate::model::{CellularConfig, SystemConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    schema: u32,
    system: SystemDoc,
    #[serde(default)]
    experiment: ExperimentDoc,
    #[serde(default)]
    budgets: Budgets,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SystemKind {
    Generic,
    SymbolExtension,
    Cellular,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    kind: SystemKind,
    users: usize,
    rx_antennas: Option<usize>,
    tx_antennas: Option<usize>,
    streams: Option<usize>,
    slots: Option<usize>,
    users_per_cell: Option<usize>,
    antennas_per_user: Option<usize>,
    power_grid_db: Option<Vec<f64>>,
    noise_var: Option<f64>,
    eps: Option<f64>,
    dim_threshold: Option<f64>,
    #[serde(default)]
    complex_gaussian: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentDoc {
    algorithms: Vec<Algorithm>,
    trials: usize,
    seed: u64,
    workers: usize,
    output: Option<PathBuf>,
    format: OutputFormat,
    orthonormalize_each_round: bool,
}

impl Default for ExperimentDoc {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::Rcrm, Algorithm::LeakageMin, Algorithm::MaxSinr, Algorithm::MaxSinrQr],
            trials: 20,
            seed: 1,
            workers: 0,
            output: None,
            format: OutputFormat::Csv,
            orthonormalize_each_round: false,
        }
    }
}

fn require(value: Option<usize>, key: &str, kind: &str) -> Result<usize> {
    value.ok_or_else(|| Error::InvalidConfig(format!("[system] {key} is required for kind = \"{kind}\"")))
}

fn reject(value: Option<usize>, key: &str, kind: &str) -> Result<()> {
    match value {
        Some(_) => Err(Error::InvalidConfig(format!("[system] {key} does not apply to kind = \"{kind}\""))),
        None => Ok(()),
    }
}

impl SystemDoc {
    fn into_config(self) -> Result<SystemConfig> {
        let mut cfg = match self.kind {
            SystemKind::Generic => {
                reject(self.slots, "slots", "generic")?;
                reject(self.users_per_cell, "users_per_cell", "generic")?;
                reject(self.antennas_per_user, "antennas_per_user", "generic")?;
                SystemConfig::generic(
                    self.users,
                    require(self.rx_antennas, "rx_antennas", "generic")?,
                    require(self.tx_antennas, "tx_antennas", "generic")?,
                    require(self.streams, "streams", "generic")?,
                )
            }
            SystemKind::SymbolExtension => {
                reject(self.rx_antennas, "rx_antennas", "symbol_extension")?;
                reject(self.tx_antennas, "tx_antennas", "symbol_extension")?;
                reject(self.users_per_cell, "users_per_cell", "symbol_extension")?;
                reject(self.antennas_per_user, "antennas_per_user", "symbol_extension")?;
                SystemConfig::symbol_extension(
                    self.users,
                    require(self.slots, "slots", "symbol_extension")?,
                    require(self.streams, "streams", "symbol_extension")?,
                )
            }
            SystemKind::Cellular => {
                reject(self.tx_antennas, "tx_antennas", "cellular")?;
                reject(self.streams, "streams", "cellular")?;
                reject(self.slots, "slots", "cellular")?;
                SystemConfig::cellular(
                    self.users,
                    require(self.users_per_cell, "users_per_cell", "cellular")?,
                    require(self.antennas_per_user, "antennas_per_user", "cellular")?,
                    require(self.rx_antennas, "rx_antennas", "cellular")?,
                )
            }
        };
        if let Some(grid) = self.power_grid_db {
            cfg.power_grid_db = grid;
        }
        if let Some(v) = self.noise_var {
            cfg.noise_var = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        if let Some(v) = self.dim_threshold {
            cfg.dim_threshold = v;
        }
        cfg.complex_gaussian = self.complex_gaussian;
        Ok(cfg)
    }
}

/// Parses an experiment file. `origin` only labels error messages.
pub fn parse_spec(text: &str, origin: &Path) -> Result<ExperimentSpec> {
    let doc: FileDoc = toml::from_str(text).map_err(|e| Error::Parse { path: origin.into(), detail: e.to_string() })?;
    if doc.schema != SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported schema {} (expected {SCHEMA_VERSION})",
            doc.schema
        )));
    }
    let mut system = doc.system.into_config()?;
    system.seed = doc.experiment.seed;
    let spec = ExperimentSpec {
        system,
        algorithms: doc.experiment.algorithms,
        trials: doc.experiment.trials,
        budgets: doc.budgets,
        output: doc.experiment.output,
        format: doc.experiment.format,
        master_seed: doc.experiment.seed,
        workers: doc.experiment.workers,
        orthonormalize_each_round: doc.experiment.orthonormalize_each_round,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec(&text, path)
}

/// The cellular view of a system, when it is one.
pub(crate) fn cellular(system: &SystemConfig) -> Result<Option<CellularConfig>> {
    match system.channel_kind {
        crate::model::ChannelKind::Cellular => Ok(Some(CellularConfig::new(system.clone())?)),
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelKind;

    const GENERIC: &str = r#"
schema = 1
[system]
kind = "generic"
users = 3
rx_antennas = 4
tx_antennas = 8
streams = 3
[experiment]
trials = 2
algorithms = ["rcrm", "leakage_min"]
[budgets]
leakage_min = 50
"#;

    #[test]
    fn parses_generic_file_with_defaults() {
        let spec = parse_spec(GENERIC, Path::new("mem")).unwrap();
        assert_eq!(spec.system.streams, 3);
        assert_eq!(spec.system.eps, 0.1);
        assert_eq!(spec.system.power_grid_db.len(), 9);
        assert_eq!(spec.trials, 2);
        assert_eq!(spec.budgets.leakage_min, 50);
        assert_eq!(spec.budgets.rcrm, 5);
        assert_eq!(spec.budgets.max_sinr, 2000);
        assert_eq!(spec.algorithms, vec![Algorithm::Rcrm, Algorithm::LeakageMin]);
    }

    #[test]
    fn parses_cellular_and_extension_kinds() {
        let text = "schema = 1\n[system]\nkind = \"cellular\"\nusers = 3\nusers_per_cell = 2\nantennas_per_user = 3\nrx_antennas = 4\n[experiment]\nalgorithms = [\"rcrm\", \"random_bf_zf\"]\n";
        let spec = parse_spec(text, Path::new("mem")).unwrap();
        assert_eq!(spec.system.channel_kind, ChannelKind::Cellular);
        assert_eq!(spec.system.tx_antennas, 6);
        let text = "schema = 1\n[system]\nkind = \"symbol_extension\"\nusers = 3\nslots = 2\nstreams = 1\n";
        let spec = parse_spec(text, Path::new("mem")).unwrap();
        assert_eq!(spec.system.channel_kind, ChannelKind::DiagonalExtension { slots: 2 });
    }

    #[test]
    fn rejects_bad_files() {
        let p = Path::new("mem");
        assert!(matches!(parse_spec(&GENERIC.replace("schema = 1", "schema = 2"), p), Err(Error::InvalidConfig(_))));
        assert!(matches!(parse_spec(&GENERIC.replace("trials = 2", "trials = 0"), p), Err(Error::InvalidConfig(_))));
        assert!(matches!(parse_spec(&GENERIC.replace("users = 3", "users = 3\nbogus = 1"), p), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_spec(&GENERIC.replace("tx_antennas = 8\n", ""), p),
            Err(Error::InvalidConfig(_))
        ));
        // the random beamforming baseline only exists for cellular systems
        assert!(parse_spec(&GENERIC.replace("\"leakage_min\"]", "\"random_bf_zf\"]"), p).is_err());
    }
}
