//! Optional TOML file supplying defaults for command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Every key is optional; flags given on the command line win. Relative
/// paths are resolved against the directory holding the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub registry: Option<PathBuf>,
    pub hofstede: Option<PathBuf>,
    pub migrants: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub wgi: Option<PathBuf>,
    pub indicators: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub regressors: Option<String>,
    pub error_structure: Option<String>,
    pub k_neighbors: Option<usize>,
    pub compare: Option<bool>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub countries: Option<usize>,
    pub periods: Option<usize>,
    pub equations: Option<usize>,
    pub lambda: Option<f64>,
    pub phi: Option<f64>,
    pub recover: Option<bool>,
    pub replications: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.registry,
            &mut cfg.hofstede,
            &mut cfg.migrants,
            &mut cfg.population,
            &mut cfg.wgi,
            &mut cfg.indicators,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "hofstede = \"data/h.csv\"\nwgi = \"/abs/w.csv\"\nk_neighbors = 3\n").unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.hofstede.unwrap(), dir.path().join("data/h.csv"));
        assert_eq!(cfg.wgi.unwrap(), PathBuf::from("/abs/w.csv"));
        assert_eq!(cfg.k_neighbors, Some(3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "hofsted = \"h.csv\"\n").unwrap();
        assert!(FileConfig::load(&path).unwrap_err().contains("hofsted"));
    }
}
