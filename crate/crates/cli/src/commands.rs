use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use convloc_core::formats::{save_pgm, save_volume, write_matrix_lvol};
use convloc_core::simulator::{
    initial_volume, poses_csv, read_frames, read_poses_csv, write_frames, FilterStep,
};
use convloc_core::{
    build_kernel, compare_runs, dead_reckoning, generate_trajectory, rotate_and_scale, sensor_only,
    sigmas_from_motion, simulate_frames, stack_kernel, MarkovFilter, MotionAccumulator, OdometryKernel, Pose2D,
    RotTransRot, SimError, TrajectoryRecord,
};
use log::info;
use serde::Serialize;

use crate::bench::{run_bench, BenchReport};
use crate::config::{Mode, RunConfig};
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EST_FILE: &str = "est.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const ODOMETRY_EST_FILE: &str = "est_odometry.csv";
pub const SENSOR_EST_FILE: &str = "est_sensor.csv";
pub const VOLUME_DIR: &str = "volumes";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Manifest<'a> {
    n_frames: usize,
    files: Vec<String>,
    config: &'a RunConfig,
}

/// Generates ground truth, noisy odometry and observations into `out`
/// (defaults to the configured output directory). Also writes the odometry
/// and sensor-only baselines.
pub fn simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf, CliError> {
    cfg.check_mode(Mode::Simulate)?;
    let out = out.unwrap_or(&cfg.output_dir).to_path_buf();
    let grid = cfg.grid_spec()?;
    let traj = cfg
        .trajectory
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate needs a trajectory section".into()))?;
    let gt = generate_trajectory(traj, &grid).map_err(|e| CliError::Config(format!("trajectory: {e}")))?;
    if gt.is_empty() {
        return Err(CliError::Config("trajectory has no poses".into()));
    }
    let frames = simulate_frames(&gt, &grid, &cfg.noise, &cfg.oracle, cfg.seeds.odometry_seed, cfg.seeds.oracle_seed)
        .map_err(CliError::data)?;
    write_frames(&out, &frames).map_err(CliError::data)?;
    let dr = dead_reckoning(&frames);
    write_file(&out.join(ODOMETRY_EST_FILE), poses_csv(dr.into_iter().enumerate()))?;
    let so = sensor_only(&frames, &grid);
    write_file(&out.join(SENSOR_EST_FILE), poses_csv(so.into_iter().enumerate()))?;

    let manifest = Manifest {
        n_frames: frames.len(),
        files: [
            convloc_core::simulator::GT_FILE,
            convloc_core::simulator::ODOM_FILE,
            convloc_core::simulator::OBS_DIR,
            ODOMETRY_EST_FILE,
            SENSOR_EST_FILE,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join(MANIFEST_FILE), json + "\n")?;
    info!("simulated {} frames into {}", frames.len(), out.display());
    Ok(out)
}

fn diagnostics_csv(steps: &[FilterStep]) -> String {
    let mut s = String::from(
        "t,total_mass,argmax_theta,argmax_x,argmax_y,entropy,circular_std,cov_xx,cov_xy,cov_yy,propagate_reset,update_reset\n",
    );
    for st in steps {
        let d = &st.diagnostics;
        let e = &st.estimate;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            st.t,
            d.total_mass,
            d.argmax.t_idx,
            d.argmax.x_idx,
            d.argmax.y_idx,
            d.entropy,
            e.circular_std,
            e.covariance[0][0],
            e.covariance[0][1],
            e.covariance[1][1],
            u8::from(d.propagate_reset),
            u8::from(d.update_reset)
        );
    }
    s
}

pub fn volume_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(VOLUME_DIR).join(format!("{t:06}.lvol"))
}

/// Runs the filter over the frames in `frames_dir`, writing `est.csv`,
/// `diagnostics.csv` and, with `dump_every = Some(k)`, the posterior of every
/// k-th frame.
pub fn localize(
    cfg: &RunConfig,
    frames_dir: Option<&Path>,
    out: Option<&Path>,
    dump_every: Option<usize>,
) -> Result<Vec<Pose2D>, CliError> {
    cfg.check_mode(Mode::Localize)?;
    let frames_dir = frames_dir.unwrap_or(&cfg.output_dir);
    let out = out.unwrap_or(frames_dir);
    if dump_every == Some(0) {
        return Err(CliError::Config("--dump-volume interval must be >= 1".into()));
    }
    let grid = cfg.grid_spec()?;
    let frames = read_frames(frames_dir).map_err(CliError::data)?;
    for f in &frames {
        let (w, h) = (f.observation.width(), f.observation.height());
        if (w, h) != (grid.x_bins, grid.y_bins) {
            return Err(CliError::Data(format!(
                "frame {}: observation is {w}x{h}, grid is {}x{}",
                f.t, grid.x_bins, grid.y_bins
            )));
        }
    }
    let fcfg = cfg.filter_config();
    let init = initial_volume(&grid, fcfg.init, &frames).map_err(CliError::data)?;
    let mut filter = MarkovFilter::new(grid, cfg.kernel, cfg.band_spec()?, fcfg, init).map_err(CliError::data)?;
    let mut steps = Vec::with_capacity(frames.len());
    for f in &frames {
        let step = filter.step(f).map_err(CliError::data)?;
        if let Some(k) = dump_every {
            if f.t % k == 0 {
                let p = volume_path(out, f.t);
                if let Some(parent) = p.parent() {
                    fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
                }
                save_volume(&p, filter.volume()).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            }
        }
        steps.push(step);
    }
    let poses: Vec<Pose2D> = steps.iter().map(|s| s.estimate.pose).collect();
    write_file(&out.join(EST_FILE), poses_csv(steps.iter().map(|s| (s.t, s.estimate.pose))))?;
    write_file(&out.join(DIAGNOSTICS_FILE), diagnostics_csv(&steps))?;
    info!("localized {} frames into {}", frames.len(), out.display());
    Ok(poses)
}

/// `name=path` or a bare path (named by its file stem).
pub fn parse_estimate_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, path)
        }
    }
}

fn load_poses(path: &Path) -> Result<Vec<(usize, Pose2D)>, CliError> {
    read_poses_csv(path).map_err(|e: SimError| CliError::data(e))
}

/// Ranks estimate files against a ground-truth file; returns the metrics CSV.
pub fn eval(gt_path: &Path, estimates: &[(String, PathBuf)], out: Option<&Path>) -> Result<String, CliError> {
    if estimates.is_empty() {
        return Err(CliError::Config("eval needs at least one estimate file".into()));
    }
    let gt = load_poses(gt_path)?;
    let gt_poses: Vec<Pose2D> = gt.iter().map(|(_, p)| *p).collect();
    let mut runs = Vec::with_capacity(estimates.len());
    for (name, path) in estimates {
        let est = load_poses(path)?;
        if est.len() != gt.len() {
            return Err(CliError::Data(format!(
                "{}: {} rows, ground truth has {}",
                path.display(),
                est.len(),
                gt.len()
            )));
        }
        if let Some(((tg, _), (te, _))) = gt.iter().zip(&est).find(|((a, _), (b, _))| a != b) {
            return Err(CliError::Data(format!(
                "{}: step {te} does not match ground-truth step {tg}",
                path.display()
            )));
        }
        let est_poses: Vec<Pose2D> = est.iter().map(|(_, p)| *p).collect();
        runs.push((name.clone(), TrajectoryRecord::new(&gt_poses, &est_poses).map_err(CliError::data)?));
    }
    let csv = compare_runs(&runs).map_err(CliError::data)?.to_csv();
    if let Some(out) = out {
        write_file(out, &csv)?;
    }
    Ok(csv)
}

/// Builds the kernel for one odometry step and writes it stacked as
/// `kernel.pgm` and `kernel.lvol`.
pub fn kernel_dump(cfg: &RunConfig, out: Option<&Path>) -> Result<OdometryKernel, CliError> {
    cfg.check_mode(Mode::KernelDump)?;
    let out = out.unwrap_or(&cfg.output_dir);
    let grid = cfg.grid_spec()?;
    let (motion, dirac) = match cfg.kernel_dump {
        Some(s) => (s.motion, s.dirac),
        None => (RotTransRot::new(0.0, grid.res_x, 0.0), false),
    };
    let shifts = MotionAccumulator::new(grid.theta_bins).accumulate(&rotate_and_scale(&motion, &grid));
    let kernel = if dirac {
        OdometryKernel::dirac(&shifts, cfg.kernel)
    } else {
        let sigmas = sigmas_from_motion(&motion, &cfg.filter_config().noise, &grid, &cfg.kernel);
        build_kernel(&shifts, &sigmas, cfg.kernel)
    }
    .map_err(|e| CliError::Config(format!("kernel: {e}")))?;
    let stacked = stack_kernel(&kernel, grid.theta_bins).map_err(|e| CliError::Config(format!("kernel: {e}")))?;
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let pgm = out.join("kernel.pgm");
    save_pgm(&pgm, stacked.rows(), stacked.cols(), stacked.data())
        .map_err(|e| CliError::Data(format!("{}: {e}", pgm.display())))?;
    let mut bytes = Vec::new();
    write_matrix_lvol(&mut bytes, stacked.rows(), stacked.cols(), stacked.data()).map_err(CliError::data)?;
    write_file(&out.join("kernel.lvol"), bytes)?;
    info!("stacked kernel {}x{} written to {}", stacked.rows(), stacked.cols(), out.display());
    Ok(kernel)
}

/// Times propagate and update; writes `bench.json` to `out` when given.
pub fn bench(
    cfg: &RunConfig,
    reps: Option<usize>,
    threads: Option<usize>,
    out: Option<&Path>,
) -> Result<BenchReport, CliError> {
    cfg.check_mode(Mode::Bench)?;
    let report = run_bench(
        cfg.grid_spec()?,
        cfg.kernel,
        reps.unwrap_or(cfg.bench.reps),
        threads.unwrap_or(cfg.bench.threads),
    )?;
    if let Some(out) = out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&out.join("bench.json"), json + "\n")?;
    }
    Ok(report)
}
