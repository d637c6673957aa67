//! Synthetic non-holonomic drives, noisy odometry and oracle observations,
//! plus the closed-loop filter that consumes them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv_odometry::{build_kernel, sigmas_from_motion, KernelError, KernelSpec, Propagator};
use crate::formats::{load_heatmap, save_heatmap, FormatError};
use crate::motion_model::{
    compose, decompose_motion, rotate_and_scale, sample_noisy, MotionAccumulator, NoiseParams, RotTransRot,
};
use crate::sensor_model::{decode_bands, encode_bands, oracle_observe, BandSpec, Heatmap, OracleParams, SensorError};
use crate::state_grid::{
    bayes_update_in_place, extract_pose, wrap_angle, GridError, GridIndex, GridSpec, LikelihoodVolume, MassStatus,
    Pose2D, PoseEstimate, DEFAULT_EPSILON_FLOOR, DEFAULT_WINDOW_RADIUS,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
    #[error("waypoint ({x}, {y}) lies outside the grid")]
    WaypointOutside { x: f64, y: f64 },
    #[error("trajectory leaves the grid at step {step}")]
    LeftGrid { step: usize },
    #[error("frame stream is empty")]
    NoFrames,
    #[error("frame {frame}: {source}")]
    Propagation {
        frame: usize,
        #[source]
        source: KernelError,
    },
    #[error("frame {frame}: {source}")]
    Update {
        frame: usize,
        #[source]
        source: GridError,
    },
    #[error("frame {frame}: {source}")]
    Sensor {
        frame: usize,
        #[source]
        source: SensorError,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("frame {frame}: observation {path}: {source}")]
    Observation {
        frame: usize,
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryShape {
    /// Counter-clockwise circle of the given radius starting at `start`.
    Loop { radius: f64 },
    /// Counter-clockwise loop for the first half of the steps, then clockwise.
    FigureEight { radius: f64 },
    /// Straight line along the start heading.
    Corridor,
    /// Drives towards each waypoint in turn with a bounded turn rate.
    Waypoints { points: Vec<[f64; 2]>, min_turn_radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub shape: TrajectoryShape,
    /// Arc length per step in metres.
    pub step_length: f64,
    /// Number of poses generated.
    pub n_steps: usize,
    pub start: Pose2D,
}

/// Advances along a circular arc (or straight line for zero curvature).
fn arc_step(p: &Pose2D, length: f64, curvature: f64) -> Pose2D {
    if curvature.abs() < 1e-12 {
        return Pose2D::new(p.x + length * p.theta.cos(), p.y + length * p.theta.sin(), p.theta);
    }
    let heading = p.theta + curvature * length;
    Pose2D::new(
        p.x + (heading.sin() - p.theta.sin()) / curvature,
        p.y - (heading.cos() - p.theta.cos()) / curvature,
        heading,
    )
}

/// Ground-truth poses with heading tangent to the path.
pub fn generate_trajectory(spec: &TrajectorySpec, grid: &GridSpec) -> Result<Vec<Pose2D>, SimError> {
    if !(spec.step_length.is_finite() && spec.step_length > 0.0) {
        return Err(SimError::InvalidSpec("step_length must be > 0".into()));
    }
    if spec.n_steps == 0 {
        return Err(SimError::InvalidSpec("n_steps must be >= 1".into()));
    }
    let s = spec.step_length;
    let start = Pose2D::new(spec.start.x, spec.start.y, spec.start.theta);
    let poses = match &spec.shape {
        TrajectoryShape::Loop { radius } => {
            if !(*radius > 0.0) {
                return Err(SimError::InvalidSpec("loop radius must be > 0".into()));
            }
            let (sn, cs) = start.theta.sin_cos();
            let (cx, cy) = (start.x - radius * sn, start.y + radius * cs);
            let phi0 = start.theta - std::f64::consts::FRAC_PI_2;
            (0..spec.n_steps)
                .map(|k| {
                    let phi = phi0 + k as f64 * s / radius;
                    Pose2D::new(cx + radius * phi.cos(), cy + radius * phi.sin(), phi + std::f64::consts::FRAC_PI_2)
                })
                .collect()
        }
        TrajectoryShape::FigureEight { radius } => {
            if !(*radius > 0.0) {
                return Err(SimError::InvalidSpec("figure-eight radius must be > 0".into()));
            }
            let half = spec.n_steps / 2;
            let mut poses = vec![start];
            for k in 1..spec.n_steps {
                let kappa = if k <= half { 1.0 / radius } else { -1.0 / radius };
                let next = arc_step(&poses[k - 1], s, kappa);
                poses.push(next);
            }
            poses
        }
        TrajectoryShape::Corridor => (0..spec.n_steps)
            .map(|k| {
                let d = k as f64 * s;
                Pose2D::new(start.x + d * start.theta.cos(), start.y + d * start.theta.sin(), start.theta)
            })
            .collect(),
        TrajectoryShape::Waypoints { points, min_turn_radius } => {
            if !(*min_turn_radius >= 0.0) {
                return Err(SimError::InvalidSpec("min_turn_radius must be >= 0".into()));
            }
            for p in points {
                if !grid.contains(p[0], p[1]) {
                    return Err(SimError::WaypointOutside { x: p[0], y: p[1] });
                }
            }
            let max_turn = if *min_turn_radius > 0.0 {
                s / min_turn_radius
            } else {
                std::f64::consts::PI
            };
            let mut poses = vec![start];
            let mut target = 0;
            while poses.len() < spec.n_steps && target < points.len() {
                let p = *poses.last().unwrap();
                let [wx, wy] = points[target];
                if (wx - p.x).hypot(wy - p.y) < s {
                    target += 1;
                    continue;
                }
                let turn = wrap_angle((wy - p.y).atan2(wx - p.x) - p.theta).clamp(-max_turn, max_turn);
                poses.push(arc_step(&p, s, turn / s));
            }
            poses
        }
    };
    if let Some(step) = poses.iter().position(|p| !grid.contains(p.x, p.y)) {
        return Err(SimError::LeftGrid { step });
    }
    Ok(poses)
}

/// One simulated time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub t: usize,
    pub gt_pose: Pose2D,
    /// Noisy odometry from the previous frame; zero on the first frame.
    pub odom_motion: RotTransRot,
    pub observation: Heatmap,
}

/// Samples noisy odometry and oracle observations along a ground-truth path.
pub fn simulate_frames(
    gt: &[Pose2D],
    grid: &GridSpec,
    noise: &NoiseParams,
    oracle: &OracleParams,
    odometry_seed: u64,
    oracle_seed: u64,
) -> Result<Vec<SimFrame>, SimError> {
    if gt.is_empty() {
        return Err(SimError::NoFrames);
    }
    let mut odo_rng = ChaCha8Rng::seed_from_u64(odometry_seed);
    let mut obs_rng = ChaCha8Rng::seed_from_u64(oracle_seed);
    let mut frames = Vec::with_capacity(gt.len());
    for (t, pose) in gt.iter().enumerate() {
        let odom_motion = if t == 0 {
            RotTransRot::default()
        } else {
            sample_noisy(&decompose_motion(&gt[t - 1], pose), noise, &mut odo_rng)
        };
        let observation =
            oracle_observe(pose, grid, oracle, &mut obs_rng).map_err(|source| SimError::Sensor { frame: t, source })?;
        frames.push(SimFrame {
            t,
            gt_pose: *pose,
            odom_motion,
            observation,
        });
    }
    Ok(frames)
}

/// Composes the odometry stream from the first ground-truth pose.
pub fn dead_reckoning(frames: &[SimFrame]) -> Vec<Pose2D> {
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let next = match out.last() {
            None => f.gt_pose,
            Some(prev) => compose(prev, &f.odom_motion),
        };
        out.push(next);
    }
    out
}

/// Per-frame argmax of the observation, with no temporal filtering.
pub fn sensor_only(frames: &[SimFrame], grid: &GridSpec) -> Vec<Pose2D> {
    frames
        .iter()
        .map(|f| {
            let (ix, iy) = f.observation.argmax();
            Pose2D::new(grid.cell_x(ix), grid.cell_y(iy), 0.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Uniform,
    /// Dirac at the first frame's ground-truth pose.
    KnownStart,
}

/// How observations become the XY likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorMode {
    /// Use the heatmap as the likelihood directly.
    Raw,
    /// Peak-normalize, classify into bands, then decode the top bands.
    Bands,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Odometry noise assumed when sizing the kernels.
    pub noise: NoiseParams,
    pub init: InitMode,
    #[serde(default = "default_window")]
    pub window_radius: usize,
    pub sensor: SensorMode,
    #[serde(default = "default_epsilon")]
    pub epsilon_floor: f64,
}

fn default_window() -> usize {
    DEFAULT_WINDOW_RADIUS
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_FLOOR
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            noise: NoiseParams::default(),
            init: InitMode::Uniform,
            window_radius: DEFAULT_WINDOW_RADIUS,
            sensor: SensorMode::Raw,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub total_mass: f64,
    pub argmax: GridIndex,
    pub entropy: f64,
    pub propagate_reset: bool,
    pub update_reset: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStep {
    pub t: usize,
    pub estimate: PoseEstimate,
    pub diagnostics: StepDiagnostics,
}

/// Recursive grid filter: propagate with convolutional odometry, fuse the
/// observation, extract a pose.
#[derive(Debug)]
pub struct MarkovFilter {
    grid: GridSpec,
    kspec: KernelSpec,
    bands: BandSpec,
    config: FilterConfig,
    volume: LikelihoodVolume,
    scratch: LikelihoodVolume,
    accumulator: MotionAccumulator,
    propagator: Propagator,
    started: bool,
}

impl MarkovFilter {
    pub fn new(
        grid: GridSpec,
        kspec: KernelSpec,
        bands: BandSpec,
        config: FilterConfig,
        initial: LikelihoodVolume,
    ) -> Result<Self, SimError> {
        kspec.validate().map_err(|source| SimError::Propagation { frame: 0, source })?;
        bands.validate().map_err(|source| SimError::Sensor { frame: 0, source })?;
        if initial.spec() != &grid {
            return Err(SimError::Grid(GridError::DimensionMismatch {
                expected: grid.dims(),
                found: initial.spec().dims(),
            }));
        }
        Ok(Self {
            grid,
            kspec,
            bands,
            config,
            scratch: LikelihoodVolume::zeros(grid)?,
            volume: initial,
            accumulator: MotionAccumulator::new(grid.theta_bins),
            propagator: Propagator::new(),
            started: false,
        })
    }

    pub fn volume(&self) -> &LikelihoodVolume {
        &self.volume
    }

    fn likelihood(&self, frame: &SimFrame) -> Result<Heatmap, SensorError> {
        match self.config.sensor {
            SensorMode::Raw => Ok(frame.observation.clone()),
            SensorMode::Bands => {
                let bv = encode_bands(&frame.observation.peak_normalized(), &self.bands)?;
                decode_bands(&bv, &self.bands)
            }
        }
    }

    /// Propagates by the frame's odometry (skipped on the first frame), then
    /// fuses its observation.
    pub fn step(&mut self, frame: &SimFrame) -> Result<FilterStep, SimError> {
        let t = frame.t;
        let mut propagate_reset = false;
        if self.started {
            let motion = frame.odom_motion;
            let shifts = self.accumulator.accumulate(&rotate_and_scale(&motion, &self.grid));
            let sigmas = sigmas_from_motion(&motion, &self.config.noise, &self.grid, &self.kspec);
            let kernel =
                build_kernel(&shifts, &sigmas, self.kspec).map_err(|source| SimError::Propagation { frame: t, source })?;
            let status = self
                .propagator
                .propagate_into(&self.volume, &kernel, &mut self.scratch)
                .map_err(|source| SimError::Propagation { frame: t, source })?;
            std::mem::swap(&mut self.volume, &mut self.scratch);
            propagate_reset = status == MassStatus::ResetToUniform;
        }
        self.started = true;

        let sensor = self.likelihood(frame).map_err(|source| SimError::Sensor { frame: t, source })?;
        let status = bayes_update_in_place(&mut self.volume, &sensor, self.config.epsilon_floor)
            .map_err(|source| SimError::Update { frame: t, source })?;
        let estimate =
            extract_pose(&self.volume, self.config.window_radius).map_err(|source| SimError::Update { frame: t, source })?;
        Ok(FilterStep {
            t,
            estimate,
            diagnostics: StepDiagnostics {
                total_mass: self.volume.total_mass(),
                argmax: estimate.argmax,
                entropy: self.volume.entropy(),
                propagate_reset,
                update_reset: status == MassStatus::ResetToUniform,
            },
        })
    }
}

pub fn initial_volume(grid: &GridSpec, init: InitMode, frames: &[SimFrame]) -> Result<LikelihoodVolume, SimError> {
    Ok(match init {
        InitMode::Uniform => LikelihoodVolume::init_uniform(*grid)?,
        InitMode::KnownStart => {
            let first = frames.first().ok_or(SimError::NoFrames)?;
            LikelihoodVolume::init_dirac(*grid, &first.gt_pose)?
        }
    })
}

/// Runs the filter over a whole frame stream.
pub fn run_filter(
    frames: &[SimFrame],
    grid: &GridSpec,
    kspec: &KernelSpec,
    bands: &BandSpec,
    config: &FilterConfig,
) -> Result<Vec<FilterStep>, SimError> {
    if frames.is_empty() {
        return Err(SimError::NoFrames);
    }
    let init = initial_volume(grid, config.init, frames)?;
    let mut filter = MarkovFilter::new(*grid, *kspec, *bands, *config, init)?;
    frames.iter().map(|f| filter.step(f)).collect()
}

pub const GT_FILE: &str = "traj_gt.csv";
pub const ODOM_FILE: &str = "odom.csv";
pub const OBS_DIR: &str = "obs";

pub fn observation_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(OBS_DIR).join(format!("{t:06}.hmap"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `t,x,y,theta` rows.
pub fn poses_csv(poses: impl IntoIterator<Item = (usize, Pose2D)>) -> String {
    let mut s = String::from("t,x,y,theta\n");
    for (t, p) in poses {
        let _ = writeln!(s, "{t},{},{},{}", p.x, p.y, p.theta);
    }
    s
}

pub fn write_frames(dir: &Path, frames: &[SimFrame]) -> Result<(), SimError> {
    let obs = dir.join(OBS_DIR);
    fs::create_dir_all(&obs).map_err(io_err(&obs))?;
    let gt = dir.join(GT_FILE);
    fs::write(&gt, poses_csv(frames.iter().map(|f| (f.t, f.gt_pose)))).map_err(io_err(&gt))?;
    let mut odom = String::from("t,dtheta1,dx,dtheta2\n");
    for f in frames {
        let m = f.odom_motion;
        let _ = writeln!(odom, "{},{},{},{}", f.t, m.d_theta1, m.d_x, m.d_theta2);
    }
    let odom_path = dir.join(ODOM_FILE);
    fs::write(&odom_path, odom).map_err(io_err(&odom_path))?;
    for f in frames {
        let p = observation_path(dir, f.t);
        save_heatmap(&p, &f.observation).map_err(|source| SimError::Format { path: p.clone(), source })?;
    }
    Ok(())
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, [f64; 3])>, SimError> {
    let csv_err = |message: String| SimError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(e.to_string()))?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if found != header {
        return Err(csv_err(format!("expected header {}, found {}", header.join(","), found.join(","))));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        let bad = |field: &str| csv_err(format!("row {}: invalid {field}", line + 1));
        let t: usize = record[0].trim().parse().map_err(|_| bad(header[0]))?;
        let mut v = [0.0; 3];
        for k in 0..3 {
            v[k] = record[k + 1].trim().parse().map_err(|_| bad(header[k + 1]))?;
        }
        rows.push((t, v));
    }
    Ok(rows)
}

/// Reads a `t,x,y,theta` pose file.
pub fn read_poses_csv(path: &Path) -> Result<Vec<(usize, Pose2D)>, SimError> {
    Ok(read_rows(path, &["t", "x", "y", "theta"])?
        .into_iter()
        .map(|(t, [x, y, th])| (t, Pose2D::new(x, y, th)))
        .collect())
}

/// Loads a frame directory written by [`write_frames`].
pub fn read_frames(dir: &Path) -> Result<Vec<SimFrame>, SimError> {
    let gt = read_poses_csv(&dir.join(GT_FILE))?;
    let odom_path = dir.join(ODOM_FILE);
    let odom = read_rows(&odom_path, &["t", "dtheta1", "dx", "dtheta2"])?;
    if odom.len() != gt.len() {
        return Err(SimError::Csv {
            path: odom_path,
            message: format!("{} odometry rows for {} poses", odom.len(), gt.len()),
        });
    }
    let mut frames = Vec::with_capacity(gt.len());
    for (k, ((t, pose), (ot, m))) in gt.into_iter().zip(odom).enumerate() {
        if t != k || ot != k {
            return Err(SimError::Csv {
                path: dir.to_path_buf(),
                message: format!("frame indices must run 0..n in order; row {k} has t={t} / {ot}"),
            });
        }
        let p = observation_path(dir, t);
        let observation = load_heatmap(&p).map_err(|source| SimError::Observation {
            frame: t,
            path: p.clone(),
            source,
        })?;
        frames.push(SimFrame {
            t,
            gt_pose: pose,
            odom_motion: RotTransRot {
                d_theta1: m[0],
                d_x: m[1],
                d_theta2: m[2],
            },
            observation,
        });
    }
    if frames.is_empty() {
        return Err(SimError::NoFrames);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn grid() -> GridSpec {
        GridSpec::new(36, 64, 64, 0.5, 0.5, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn loop_stays_on_circle_and_closes() {
        let r = 10.0;
        let n = 100;
        let spec = TrajectorySpec {
            shape: TrajectoryShape::Loop { radius: r },
            step_length: TAU * r / n as f64,
            n_steps: n + 1,
            start: Pose2D::new(16.0, 6.0, 0.0),
        };
        let poses = generate_trajectory(&spec, &grid()).unwrap();
        for p in &poses {
            assert!(((p.x - 16.0).hypot(p.y - 16.0) - r).abs() < 1e-9);
        }
        assert!(poses[0].distance(poses.last().unwrap()) < spec.step_length);
        for w in poses.windows(2) {
            let m = decompose_motion(&w[0], &w[1]);
            assert!((m.d_theta1 - m.d_theta2).abs() < 1e-9, "heading tangent to chord");
        }
    }

    #[test]
    fn corridor_is_straight() {
        let spec = TrajectorySpec {
            shape: TrajectoryShape::Corridor,
            step_length: 0.3,
            n_steps: 50,
            start: Pose2D::new(2.0, 2.0, PI / 6.0),
        };
        let poses = generate_trajectory(&spec, &grid()).unwrap();
        assert_eq!(poses.len(), 50);
        for p in &poses {
            assert_eq!(p.theta, poses[0].theta);
            let cross = (p.x - 2.0) * (PI / 6.0).sin() - (p.y - 2.0) * (PI / 6.0).cos();
            assert!(cross.abs() < 1e-12);
        }
    }

    #[test]
    fn figure_eight_winding() {
        let r = 5.0;
        let n = 200;
        let spec = TrajectorySpec {
            shape: TrajectoryShape::FigureEight { radius: r },
            step_length: 2.0 * TAU * r / n as f64,
            n_steps: n + 1,
            start: Pose2D::new(16.0, 16.0, 0.0),
        };
        let poses = generate_trajectory(&spec, &grid()).unwrap();
        let incs: Vec<f64> = poses.windows(2).map(|w| wrap_angle(w[1].theta - w[0].theta)).collect();
        let first: f64 = incs[..n / 2].iter().sum();
        let second: f64 = incs[n / 2..].iter().sum();
        assert!((first - TAU).abs() < 1e-9, "{first}");
        assert!((second + TAU).abs() < 1e-9, "{second}");
    }

    #[test]
    fn waypoints_turn_with_bounded_rate() {
        let spec = TrajectorySpec {
            shape: TrajectoryShape::Waypoints {
                points: vec![[20.0, 5.0], [20.0, 20.0]],
                min_turn_radius: 2.0,
            },
            step_length: 0.25,
            n_steps: 500,
            start: Pose2D::new(5.0, 5.0, 0.0),
        };
        let poses = generate_trajectory(&spec, &grid()).unwrap();
        assert!(poses.last().unwrap().distance(&Pose2D::new(20.0, 20.0, 0.0)) < 0.25);
        for w in poses.windows(2) {
            assert!(wrap_angle(w[1].theta - w[0].theta).abs() <= 0.25 / 2.0 + 1e-12);
        }
        let bad = TrajectorySpec {
            shape: TrajectoryShape::Waypoints {
                points: vec![[100.0, 5.0]],
                min_turn_radius: 1.0,
            },
            ..spec
        };
        assert!(matches!(generate_trajectory(&bad, &grid()), Err(SimError::WaypointOutside { .. })));
    }

    #[test]
    fn leaving_grid_is_an_error() {
        let spec = TrajectorySpec {
            shape: TrajectoryShape::Corridor,
            step_length: 1.0,
            n_steps: 40,
            start: Pose2D::new(20.0, 5.0, FRAC_PI_2),
        };
        assert!(matches!(generate_trajectory(&spec, &grid()), Err(SimError::LeftGrid { step: 27 })));
    }

    #[test]
    fn empty_spec_rejected() {
        let spec = TrajectorySpec {
            shape: TrajectoryShape::Corridor,
            step_length: 1.0,
            n_steps: 0,
            start: Pose2D::new(2.0, 2.0, 0.0),
        };
        assert!(matches!(generate_trajectory(&spec, &grid()), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn frame_dir_round_trip() {
        let g = GridSpec::new(8, 16, 16, 0.5, 0.5, (0.0, 0.0)).unwrap();
        let spec = TrajectorySpec {
            shape: TrajectoryShape::Corridor,
            step_length: 0.4,
            n_steps: 5,
            start: Pose2D::new(1.0, 2.0, 0.3),
        };
        let gt = generate_trajectory(&spec, &g).unwrap();
        let noise = NoiseParams {
            a1: 0.01,
            a2: 0.01,
            a3: 0.01,
            a4: 0.01,
        };
        let frames = simulate_frames(&gt, &g, &noise, &OracleParams::default(), 1, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), &frames).unwrap();
        let back = read_frames(dir.path()).unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in back.iter().zip(&frames) {
            assert_eq!(a.gt_pose, b.gt_pose);
            assert_eq!(a.odom_motion, b.odom_motion);
            for (x, y) in a.observation.values().iter().zip(b.observation.values()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        fs::remove_file(observation_path(dir.path(), 3)).unwrap();
        let err = read_frames(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000003.hmap"), "{err}");
    }
}
