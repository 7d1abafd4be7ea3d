use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajgp::analysis::{default_aggregated_theta, default_force_theta, default_individual_theta, DEFAULT_TRAIN_POINTS};
use trajgp::trajectory::{load_altitude_file, load_trajectory_file, AltitudeProfile, SegmentSpec, SkierConfig, Trajectory};
use trajgp::HyperParamVector;

use crate::error::{CliError, CliResult};

/// Initial hyperparameters per training mode. Missing entries fall back to
/// the library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialTheta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub individual: Option<HyperParamVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<HyperParamVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregated: Option<HyperParamVector>,
}

/// One JSON document describing a run. Relative paths are resolved against
/// the directory holding the document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory with one `<skier id>.csv` per skier.
    pub trajectories: PathBuf,
    pub altitude: PathBuf,
    pub skiers: PathBuf,
    pub segments: PathBuf,
    #[serde(default)]
    pub hyperparameters: InitialTheta,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_lap_length")]
    pub lap_length: f64,
    #[serde(default = "default_laps")]
    pub laps: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_train_points")]
    pub train_points: usize,
}

fn default_grid_size() -> usize {
    500
}

fn default_lap_length() -> f64 {
    2500.0
}

fn default_laps() -> usize {
    4
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_train_points() -> usize {
    DEFAULT_TRAIN_POINTS
}

impl RunConfig {
    /// Config pointing at the files written by `generate-sample`.
    pub fn sample(seed: u64, laps: usize, lap_length: f64) -> Self {
        Self {
            trajectories: PathBuf::from("trajectories"),
            altitude: PathBuf::from("altitude.csv"),
            skiers: PathBuf::from("skiers.json"),
            segments: PathBuf::from("segments.json"),
            hyperparameters: InitialTheta::default(),
            grid_size: default_grid_size(),
            lap_length,
            laps,
            output: default_output(),
            seed,
            train_points: default_train_points(),
        }
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.trajectories, &mut cfg.altitude, &mut cfg.skiers, &mut cfg.segments, &mut cfg.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        for (name, p) in [
            ("trajectories", &self.trajectories),
            ("altitude", &self.altitude),
            ("skiers", &self.skiers),
            ("segments", &self.segments),
        ] {
            if !p.exists() {
                return Err(CliError::Config(format!("{name} path {} does not exist", p.display())));
            }
        }
        if self.grid_size < 1 {
            return Err(CliError::Config("grid_size must be at least 1".into()));
        }
        if !(self.lap_length > 0.0 && self.lap_length.is_finite()) {
            return Err(CliError::Config(format!("lap_length must be positive, got {}", self.lap_length)));
        }
        if self.laps < 1 {
            return Err(CliError::Config("laps must be at least 1".into()));
        }
        if self.train_points < 2 {
            return Err(CliError::Config("train_points must be at least 2".into()));
        }
        for theta in [&self.hyperparameters.individual, &self.hyperparameters.force, &self.hyperparameters.aggregated]
            .into_iter()
            .flatten()
        {
            theta.validate().map_err(|e| CliError::Config(format!("hyperparameters: {e}")))?;
        }
        Ok(())
    }

    pub fn individual_theta(&self) -> HyperParamVector {
        self.hyperparameters
            .individual
            .clone()
            .unwrap_or_else(|| default_individual_theta(self.lap_length))
    }

    pub fn force_theta(&self) -> HyperParamVector {
        self.hyperparameters.force.clone().unwrap_or_else(default_force_theta)
    }

    pub fn aggregated_theta(&self) -> HyperParamVector {
        self.hyperparameters.aggregated.clone().unwrap_or_else(default_aggregated_theta)
    }
}

/// Loaded race metadata. Trajectories are read on demand.
pub struct Dataset {
    pub config: RunConfig,
    pub profile: AltitudeProfile,
    pub skiers: Vec<SkierConfig>,
    pub segments: Vec<SegmentSpec>,
}

impl Dataset {
    pub fn open(config: RunConfig) -> CliResult<Self> {
        let profile = load_altitude_file(&config.altitude).map_err(|e| CliError::file(&config.altitude, e))?;
        let skiers: Vec<SkierConfig> = read_json(&config.skiers)?;
        let segments: Vec<SegmentSpec> = read_json(&config.segments)?;
        for s in &skiers {
            s.validate().map_err(|e| CliError::file(&config.skiers, e))?;
        }
        for s in &segments {
            s.validate().map_err(|e| CliError::file(&config.segments, e))?;
            if s.lap_length != config.lap_length {
                return Err(CliError::Config(format!(
                    "segment {} has lap length {} but the config says {}",
                    s.name, s.lap_length, config.lap_length
                )));
            }
        }
        Ok(Self {
            config,
            profile,
            skiers,
            segments,
        })
    }

    pub fn skier(&self, id: &str) -> CliResult<&SkierConfig> {
        self.skiers
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| CliError::Config(format!("unknown skier `{id}`")))
    }

    pub fn segment(&self, name: &str) -> CliResult<&SegmentSpec> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CliError::Config(format!("unknown segment `{name}`")))
    }

    pub fn trajectory(&self, id: &str) -> CliResult<Trajectory> {
        let path = self.config.trajectories.join(format!("{id}.csv"));
        if !path.exists() {
            return Err(CliError::Config(format!("trajectory {} does not exist", path.display())));
        }
        let (traj, report) = load_trajectory_file(&path).map_err(|e| CliError::file(&path, e))?;
        if report.duplicate_timestamps > 0 || report.dropped_decreasing > 0 {
            log::warn!(
                "{}: {} duplicate timestamps, {} rows with decreasing distance dropped",
                path.display(),
                report.duplicate_timestamps,
                report.dropped_decreasing
            );
        }
        Ok(traj)
    }

    /// All laps of the race, `1..=laps`.
    pub fn all_laps(&self) -> Vec<usize> {
        (1..=self.config.laps).collect()
    }

    pub fn check_laps(&self, laps: &[usize]) -> CliResult<()> {
        if laps.is_empty() {
            return Err(CliError::Config("no laps selected".into()));
        }
        if let Some(&bad) = laps.iter().find(|&&l| l == 0 || l > self.config.laps) {
            return Err(CliError::Config(format!("lap {bad} is outside 1..={}", self.config.laps)));
        }
        Ok(())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
