//! Run configuration file (TOML). Command-line flags override every field.

use cauchy_maps::estimators::Bands;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Contents of a `--config` file. All fields are optional.
///
/// Defaults: kernel `builtin:type2`, seed 0, workers 0 (all cores), output directory `out`,
/// and each experiment's own grid, sample count, lags and bands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    /// Experiments run by `experiment run` when `--name` is absent.
    #[serde(default)]
    pub experiments: Vec<String>,
    /// `ℓ` grid (time grid for `upsilon_moment`).
    pub ells: Option<Vec<u64>>,
    pub samples: Option<u64>,
    pub eps: Option<Vec<f64>>,
    pub edge_cap: Option<u64>,
    pub bands: Option<Bands>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\nbogus = 2").is_err());
        assert!(toml::from_str::<RunConfig>("[bands]\nnope = 1.0").is_err());
    }

    #[test]
    fn partial_bands_keep_defaults() {
        let c: RunConfig = toml::from_str("seed = 3\nells = [10, 20]\n[bands]\nvolume_rel = 0.5").unwrap();
        let b = c.bands.unwrap();
        assert_eq!(b.volume_rel, 0.5);
        assert_eq!(b.harmonic, Bands::default().harmonic);
        assert_eq!(c.ells, Some(vec![10, 20]));
    }
}
