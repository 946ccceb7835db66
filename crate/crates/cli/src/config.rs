use std::path::{Path, PathBuf};

use isolation_core::analysis::StartRule;
use isolation_core::events::{SetFamily, TargetTrajectory};
use isolation_core::geom::Point;
use isolation_core::model::SimConfig;
use serde::{Deserialize, Serialize};

/// The whole config document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub output: Output,
}

/// Rows `[t, x_1, ..., x_d]` of a piecewise-linear target path.
pub type Waypoints = Vec<Vec<f64>>;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    /// Experiment name for the seed schedule; defaults to the command.
    pub name: Option<String>,
    /// Evaluation times; defaults to the horizon alone.
    pub t_grid: Option<Vec<f64>>,
    /// `direct` or `splitting` (isolation only).
    pub method: Option<String>,
    /// Splitting thresholds; defaults to the time grid.
    pub levels: Option<Vec<f64>>,
    pub particles: Option<usize>,
    pub replicates: Option<usize>,
    /// Radius of the target ball; defaults to `sim.r`.
    pub target_radius: Option<f64>,
    /// Moving target for isolation and detection.
    pub waypoints: Option<Waypoints>,
    /// Challenger paths for `strategy`; the default set when absent.
    pub challengers: Option<Vec<Waypoints>>,
    /// Number of random instances for `rearrangement`.
    pub instances: Option<usize>,
    /// Start rule for `occupation`.
    pub start: Option<StartRule>,
    /// Survival CSV read by `fit`, relative to the config file.
    pub input: Option<PathBuf>,
    pub min_points: Option<usize>,
    pub points_per_path: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub plot: bool,
}

#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    Parse(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Parse(m) => write!(f, "malformed config: {m}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    // toml reports the line and column of the failure in its message
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn trajectory(rows: &Waypoints, d: usize) -> Result<TargetTrajectory, ConfigError> {
    let mut pts = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != d + 1 {
            return Err(ConfigError::Invalid(format!("waypoint rows need {} entries [t, x_1..x_{d}], got {}", d + 1, row.len())));
        }
        pts.push((row[0], Point::from_slice(&row[1..])));
    }
    TargetTrajectory::new(pts).map_err(|e| ConfigError::Invalid(e.to_string()))
}

impl RunConfig {
    pub fn t_grid(&self) -> Vec<f64> {
        self.experiment.t_grid.clone().unwrap_or_else(|| vec![self.sim.horizon])
    }

    pub fn family(&self) -> Result<SetFamily, ConfigError> {
        let r = self.experiment.target_radius.unwrap_or(self.sim.r);
        Ok(match &self.experiment.waypoints {
            None => SetFamily::centered_ball(r),
            Some(rows) => SetFamily::moving(trajectory(rows, self.sim.d)?, r),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_parses() {
        let c = parse("[sim]\nd = 2\nlambda = 1.0\nr = 1.0\nhorizon = 5.0\n").unwrap();
        assert_eq!(c.t_grid(), vec![5.0]);
        assert!(!c.output.plot);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let e = parse("[sim]\nd = 2\nlambda = 1.0\nr = 1.0\nhorizon = 5.0\nbogus = 3\n").unwrap_err();
        let m = e.to_string();
        assert!(m.contains("line 6"), "{m}");
    }

    #[test]
    fn waypoints_need_one_time_and_d_coordinates() {
        assert!(trajectory(&vec![vec![0.0, 1.0]], 2).is_err());
        let g = trajectory(&vec![vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]], 2).unwrap();
        assert!((g.sup_norm() - 1.0).abs() < 1e-12);
    }
}
