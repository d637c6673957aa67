//! JSON run configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use convloc_core::{
    BandSpec, FilterConfig, GridSpec, InitMode, KernelSpec, NoiseParams, OracleParams, RotTransRot, SensorMode,
    TrajectorySpec,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Localize,
    Eval,
    KernelDump,
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub theta_bins: usize,
    pub x_bins: usize,
    pub y_bins: usize,
    pub res_x: f64,
    pub res_y: f64,
    #[serde(default)]
    pub origin: [f64; 2],
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(
            self.theta_bins,
            self.x_bins,
            self.y_bins,
            self.res_x,
            self.res_y,
            (self.origin[0], self.origin[1]),
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub odometry_seed: u64,
    pub oracle_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "default_init")]
    pub init: InitMode,
    #[serde(default = "default_window")]
    pub window_radius: usize,
    #[serde(default = "default_sensor")]
    pub sensor: SensorMode,
    #[serde(default = "default_epsilon")]
    pub epsilon_floor: f64,
    /// Noise assumed by the kernels; defaults to the simulation noise.
    #[serde(default)]
    pub noise: Option<NoiseParams>,
}

fn default_init() -> InitMode {
    InitMode::Uniform
}

fn default_window() -> usize {
    convloc_core::state_grid::DEFAULT_WINDOW_RADIUS
}

fn default_sensor() -> SensorMode {
    SensorMode::Raw
}

fn default_epsilon() -> f64 {
    convloc_core::state_grid::DEFAULT_EPSILON_FLOOR
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            init: default_init(),
            window_radius: default_window(),
            sensor: default_sensor(),
            epsilon_floor: default_epsilon(),
            noise: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub reps: usize,
    /// Threads for the parallel run; `0` uses every available core.
    #[serde(default)]
    pub threads: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { reps: 50, threads: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDumpSection {
    /// Odometry step rendered into the kernel, applied from a zero residual.
    pub motion: RotTransRot,
    /// Use spike kernels instead of noise-derived Gaussians.
    #[serde(default)]
    pub dirac: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub grid: GridConfig,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub bands: Option<BandSpec>,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub oracle: OracleParams,
    #[serde(default)]
    pub trajectory: Option<TrajectorySpec>,
    #[serde(default)]
    pub filter: FilterSection,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub kernel_dump: Option<KernelDumpSection>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        self.grid.spec()
    }

    pub fn band_spec(&self) -> Result<BandSpec, CliError> {
        match self.bands {
            Some(b) => b.validate().map(|_| b),
            None => BandSpec::with_default_top(10),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            noise: self.filter.noise.unwrap_or(self.noise),
            init: self.filter.init,
            window_radius: self.filter.window_radius,
            sensor: self.filter.sensor,
            epsilon_floor: self.filter.epsilon_floor,
        }
    }

    /// Cross-field checks: kernel fits the grid, heatmaps are square and
    /// match the grid, parameters are in range.
    pub fn validate(&self) -> Result<(), CliError> {
        let grid = self.grid_spec()?;
        self.kernel.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let k = &self.kernel;
        if k.k_theta > grid.theta_bins || k.k_x > grid.x_bins || k.k_y > grid.y_bins {
            return Err(CliError::Config(format!(
                "kernel {:?} exceeds grid {:?}",
                k.extents(),
                grid.dims()
            )));
        }
        if grid.x_bins != grid.y_bins {
            return Err(CliError::Config(format!(
                "heatmaps are square: grid x_bins ({}) must equal y_bins ({})",
                grid.x_bins, grid.y_bins
            )));
        }
        self.band_spec()?;
        if !self.noise.is_valid() || self.filter.noise.is_some_and(|n| !n.is_valid()) {
            return Err(CliError::Config("noise coefficients must be finite and >= 0".into()));
        }
        self.oracle.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.filter.epsilon_floor.is_finite() && self.filter.epsilon_floor > 0.0) {
            return Err(CliError::Config("filter.epsilon_floor must be > 0".into()));
        }
        if self.bench.reps < 2 {
            return Err(CliError::Config(format!("bench.reps must be >= 2, got {}", self.bench.reps)));
        }
        Ok(())
    }

    pub fn check_mode(&self, mode: Mode) -> Result<(), CliError> {
        match self.mode {
            Some(m) if m != mode => Err(CliError::Config(format!(
                "config mode {m:?} does not match command {mode:?}"
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "grid": {"theta_bins": 8, "x_bins": 16, "y_bins": 16, "res_x": 0.5, "res_y": 0.5},
        "kernel": {"k_theta": 3, "k_x": 5, "k_y": 5, "sigma_floor": 0.25},
        "seeds": {"odometry_seed": 1, "oracle_seed": 2},
        "output_dir": "out"
    }"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.band_spec().unwrap(), BandSpec::new(10, 2).unwrap());
        assert_eq!(cfg.bench.reps, 50);
        assert_eq!(cfg.filter_config().window_radius, 8);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let text = MINIMAL.replace("\"output_dir\"", "\"outptu_dir\": 1, \"output_dir\"");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("unknown field")), "{err}");
        assert_eq!(err.exit_code(), 2);
        let nested = MINIMAL.replace("\"sigma_floor\"", "\"sigma\": 1, \"sigma_floor\"");
        assert!(RunConfig::from_json(&nested).is_err());
    }

    #[test]
    fn cross_field_checks() {
        let big_kernel = MINIMAL.replace("\"k_x\": 5", "\"k_x\": 17");
        assert!(RunConfig::from_json(&big_kernel).is_err());
        let rect = MINIMAL.replace("\"y_bins\": 16", "\"y_bins\": 12");
        assert!(RunConfig::from_json(&rect).is_err());
        let reps = MINIMAL.replace("\"output_dir\"", "\"bench\": {\"reps\": 1}, \"output_dir\"");
        assert!(RunConfig::from_json(&reps).is_err());
        let bands = MINIMAL.replace("\"output_dir\"", "\"bands\": {\"n_bands\": 4, \"top_n\": 4}, \"output_dir\"");
        assert!(RunConfig::from_json(&bands).is_err());
    }

    #[test]
    fn mode_must_match_command() {
        let text = MINIMAL.replace("\"output_dir\"", "\"mode\": \"bench\", \"output_dir\"");
        let cfg = RunConfig::from_json(&text).unwrap();
        assert!(cfg.check_mode(Mode::Bench).is_ok());
        assert!(cfg.check_mode(Mode::Simulate).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
