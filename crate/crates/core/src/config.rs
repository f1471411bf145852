//! The JSON run configuration. Paths inside it are relative to the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterParams;
use crate::gridmap::{load_map, GridPyramid, OccupancyGrid};
use crate::matcher::MatcherParams;
use crate::multihyp::MultiHypParams;
use crate::sim::{ScenarioScript, SensorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapPaths {
    pub image: PathBuf,
    pub metadata: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationParams {
    /// Position error (m) below which the robot counts as localized.
    pub recovery_threshold: f64,
    /// Seconds the error must stay below the threshold.
    pub recovery_hold: f64,
}

impl Default for EvaluationParams {
    fn default() -> Self {
        Self {
            recovery_threshold: 0.3,
            recovery_hold: 5.0,
        }
    }
}

impl EvaluationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.recovery_threshold > 0.0) {
            return Err(Error::param("recovery_threshold", "must be > 0"));
        }
        if !(self.recovery_hold >= 0.0) {
            return Err(Error::param("recovery_hold", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub map: MapPaths,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub laser: SensorSpec,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub matcher: MatcherParams,
    #[serde(default)]
    pub multihyp: MultiHypParams,
    #[serde(default)]
    pub evaluation: EvaluationParams,
}

fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

impl Config {
    /// Reads, resolves and validates a configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: Config = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.map.image = relative_to(base, &config.map.image);
        config.map.metadata = relative_to(base, &config.map.metadata);
        config.validate()?;
        Ok(config)
    }

    /// Checks every numeric bound; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.laser.validate().map_err(|e| e.within("laser"))?;
        self.filter.validate().map_err(|e| e.within("filter"))?;
        self.matcher.validate().map_err(|e| e.within("matcher"))?;
        self.multihyp.validate().map_err(|e| e.within("multihyp"))?;
        self.evaluation.validate().map_err(|e| e.within("evaluation"))?;
        for (name, p) in [("map.image", &self.map.image), ("map.metadata", &self.map.metadata)] {
            if !p.is_file() {
                return Err(Error::param(name, format!("file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn load_grid(&self) -> Result<OccupancyGrid> {
        load_map(&self.map.image, &self.map.metadata)
    }

    pub fn load_pyramid(&self) -> Result<GridPyramid> {
        Ok(GridPyramid::build(self.load_grid()?, self.matcher.levels))
    }
}

/// Reads and validates a scenario script.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioScript> {
    let script: ScenarioScript = read_json(path.as_ref())?;
    script.validate().map_err(|e| e.within("scenario"))?;
    Ok(script)
}
