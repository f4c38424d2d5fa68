//! Study config files for `spock simulate`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spock::fit::{McmcConfig, Method};
use spock::io::{input_manifest, load_map, AreaMap};
use spock::simulation::{Scenario, ScenarioConfig, StudyConfig};
use spock::{Result, SpockError};

/// Lattice used when a config names no map.
pub const DEFAULT_LATTICE: Lattice = Lattice { rows: 14, cols: 14, spacing: 0.25 };

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_spacing() -> f64 {
    DEFAULT_LATTICE.spacing
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFiles {
    pub centroids: PathBuf,
    pub adjacency: PathBuf,
    #[serde(default)]
    pub allow_islands: bool,
}

fn default_beta() -> [f64; 3] {
    [2.0, 1.0, -1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub scenario: Scenario,
    pub tau_e: f64,
    pub tau_theta: f64,
    #[serde(default = "default_beta")]
    pub beta: [f64; 3],
    #[serde(default)]
    pub map: Option<MapFiles>,
    #[serde(default)]
    pub lattice: Option<Lattice>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub models: Vec<Method>,
    #[serde(default)]
    pub mcmc: McmcConfig,
}

pub fn read_study_file(path: &Path) -> Result<StudyFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpockError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| SpockError::Parse {
        file: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// A study ready to run, with the map it runs on and a JSON echo that
/// identifies both.
pub struct ResolvedStudy {
    pub config: StudyConfig,
    pub map: AreaMap,
    pub echo: serde_json::Value,
}

/// Map paths are taken relative to the config file's directory.
pub fn resolve(file: StudyFile, config_path: &Path, seed: Option<u64>) -> Result<ResolvedStudy> {
    let seed = seed.or(file.seed).ok_or_else(|| {
        SpockError::InvalidParameter("a seed is required: pass --seed or set \"seed\" in the config".into())
    })?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let (map, map_echo) = match (&file.map, &file.lattice) {
        (Some(_), Some(_)) => {
            return Err(SpockError::InvalidParameter("give either \"map\" or \"lattice\", not both".into()));
        }
        (Some(m), None) => {
            let (c, a) = (base.join(&m.centroids), base.join(&m.adjacency));
            let map = load_map(&c, &a, m.allow_islands)?;
            let hashes = input_manifest(&[("centroids", &c), ("adjacency", &a)])?;
            (map, serde_json::json!({ "files": hashes, "allow_islands": m.allow_islands }))
        }
        (None, l) => {
            let l = l.unwrap_or(DEFAULT_LATTICE);
            if l.rows * l.cols < 4 || !(l.spacing > 0.0) {
                return Err(SpockError::InvalidParameter("lattice needs at least 4 cells and positive spacing".into()));
            }
            (AreaMap::lattice(l.rows, l.cols, l.spacing), serde_json::json!({ "lattice": l }))
        }
    };
    let scenario = ScenarioConfig {
        scenario: file.scenario,
        beta: file.beta,
        tau_e: file.tau_e,
        tau_theta: file.tau_theta,
        n_replicates: file.replicates,
        seed,
    };
    let config = StudyConfig { scenario, models: file.models, mcmc: file.mcmc };
    let echo = serde_json::json!({ "study": config, "map": map_echo });
    Ok(ResolvedStudy { config, map, echo })
}
