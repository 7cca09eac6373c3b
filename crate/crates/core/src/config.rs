//! Run configuration for the CLI.
//!
//! A JSON document; every field is optional and falls back to
//! [`RunConfig::default`]. Command-line flags override the file.
//!
//! ```json
//! {
//!   "btd_path": "data/nio_btd.csv",
//!   "sst_path": "data/sst.csv",
//!   "out_dir": "out",
//!   "train": { "hidden": 64, "max_epochs": 200, "seed": 7 },
//!   "grid": [ { "t1": 4, "t2": 1 }, { "t1": 4, "t2": 8 } ],
//!   "holdout_names": ["VAYU", "FANI"]
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ColumnMap;
use crate::train::TrainConfig;
use crate::window::WindowSpec;

pub const GRID_T1: [usize; 4] = [4, 6, 8, 12];
pub const GRID_T2: [usize; 7] = [1, 4, 8, 12, 16, 20, 24];

/// The full `(t1, t2)` grid: 4 input lengths by 7 horizons.
pub fn default_grid() -> Vec<WindowSpec> {
    GRID_T1
        .iter()
        .flat_map(|&t1| GRID_T2.iter().map(move |&t2| WindowSpec { t1, t2 }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub btd_path: Option<PathBuf>,
    pub sst_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// `t1`/`t2` here select the window for `train`; `cv` sweeps `grid`.
    pub train: TrainConfig,
    pub grid: Vec<WindowSpec>,
    pub holdout_names: Vec<String>,
    pub column_map: ColumnMap,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            btd_path: None,
            sst_path: None,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            train: TrainConfig::default(),
            grid: default_grid(),
            holdout_names: vec!["VAYU".into(), "FANI".into()],
            column_map: ColumnMap::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.grid.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        for spec in &self.grid {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn require_btd(&self) -> Result<&Path> {
        self.btd_path
            .as_deref()
            .ok_or_else(|| Error::Config("no best-track file configured (btd_path or --btd)".into()))
    }

    pub fn require_sst(&self) -> Result<&Path> {
        self.sst_path
            .as_deref()
            .ok_or_else(|| Error::Config("no SST file configured (sst_path or --sst)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_28_cells() {
        let grid = default_grid();
        assert_eq!(grid.len(), 28);
        assert_eq!(grid[0], WindowSpec { t1: 4, t2: 1 });
        assert_eq!(grid[27], WindowSpec { t1: 12, t2: 24 });
    }

    #[test]
    fn partial_config_is_defaulted() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"hidden": 8}, "out_dir": "x"}"#).unwrap();
        assert_eq!(c.train.hidden, 8);
        assert_eq!(c.train.layers, 4);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.dropout, 0.02);
        assert_eq!(c.checkpoint_path(), PathBuf::from("x/model.ckpt"));
        assert_eq!(c.grid.len(), 28);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::default();
        c.train.dropout = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig {
            grid: vec![],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
