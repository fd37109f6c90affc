//! Roots file and threshold configuration.
//!
//! The TOML file lists source roots and may carry a `[thresholds]` table.
//! Command-line flags win over `COLDPROF_*` environment variables, which win
//! over the file, which wins over built-in defaults.

use std::path::Path;

use serde::Deserialize;

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_GATE_THRESHOLD;
use crate::package_mapper::{Root, RootConfig};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub threshold_ratio: Option<f64>,
    pub overhead_pct: Option<f64>,
    pub rare_util_pct: Option<f64>,
    pub min_samples: Option<u64>,
    pub top_k: Option<usize>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub roots: Vec<Root>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Roots from the file, or the default layout when it lists none.
    pub fn root_config(&self) -> RootConfig {
        if self.roots.is_empty() {
            RootConfig::default()
        } else {
            RootConfig {
                roots: self.roots.clone(),
            }
        }
    }

    /// Fills unset values from the file and then from defaults.
    /// `overrides` holds values already resolved from flags or environment.
    pub fn resolve(&self, overrides: &Thresholds) -> Settings {
        let file = &self.thresholds;
        let defaults = DetectorConfig::default();
        Settings {
            threshold_ratio: overrides
                .threshold_ratio
                .or(file.threshold_ratio)
                .unwrap_or(DEFAULT_GATE_THRESHOLD),
            detector: DetectorConfig {
                overhead_floor: overrides
                    .overhead_pct
                    .or(file.overhead_pct)
                    .map_or(defaults.overhead_floor, |p| p / 100.0),
                rare_utilization: overrides
                    .rare_util_pct
                    .or(file.rare_util_pct)
                    .map_or(defaults.rare_utilization, |p| p / 100.0),
                min_samples: overrides.min_samples.or(file.min_samples).unwrap_or(defaults.min_samples),
                top_k_paths: overrides.top_k.or(file.top_k).unwrap_or(defaults.top_k_paths),
                z: overrides.z.or(file.z).unwrap_or(defaults.z),
                scope: defaults.scope,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub threshold_ratio: f64,
    pub detector: DetectorConfig,
}
