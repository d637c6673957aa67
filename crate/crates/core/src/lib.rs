//! Grid-based Markov localisation for planar vehicles.
//!
//! The belief is a dense `[Θ × X × Y]` likelihood volume. Each step
//! propagates it with per-heading-channel Gaussian odometry kernels
//! ([`conv_odometry`]), multiplies in an XY sensor heatmap replicated over
//! heading ([`state_grid::bayes_update`]) and reads out a mode-local pose
//! estimate ([`state_grid::extract_pose`]).

pub mod conv_odometry;
pub mod evaluation;
pub mod formats;
pub mod motion_model;
pub mod sensor_model;
pub mod simulator;
pub mod state_grid;

pub use conv_odometry::{
    apply_stacked, build_kernel, propagate, propagate_reference, sigmas_from_motion, stack_kernel, ChannelSigma,
    KernelError, KernelSpec, OdometryKernel, Propagator, StackedKernel,
};
pub use evaluation::{ate, compare_runs, ComparisonReport, EvalError, MetricsTable, TrajectoryRecord};
pub use motion_model::{
    compose, decompose_motion, rotate_and_scale, sample_noisy, CellShift, MotionAccumulator, MotionVector, NoiseParams,
    RotTransRot, RotatedMotionSet,
};
pub use sensor_model::{
    decode_bands, encode_bands, oracle_observe, BandSpec, BandVolume, Distractor, DistractorPlacement, Heatmap,
    OracleParams, SensorError,
};
pub use simulator::{
    dead_reckoning, generate_trajectory, run_filter, sensor_only, simulate_frames, FilterConfig, FilterStep, InitMode,
    MarkovFilter, SensorMode, SimError, SimFrame, TrajectoryShape, TrajectorySpec,
};
pub use state_grid::{
    bayes_update, extract_pose, pose_to_index, wrap_angle, GridError, GridIndex, GridSpec, LikelihoodVolume,
    MassStatus, Pose2D, PoseEstimate,
};
