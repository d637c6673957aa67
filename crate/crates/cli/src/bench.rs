//! Timing of one propagate + update cycle on a fixed synthetic volume.

use std::time::Instant;

use convloc_core::state_grid::bayes_update_in_place;
use convloc_core::{
    build_kernel, oracle_observe, rotate_and_scale, sigmas_from_motion, GridSpec, Heatmap, KernelSpec,
    LikelihoodVolume, MotionAccumulator, NoiseParams, OdometryKernel, OracleParams, Pose2D, Propagator, RotTransRot,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub median_ms: f64,
    pub std_ms: f64,
}

impl Timing {
    pub fn from_samples(samples_ms: &[f64]) -> Self {
        let n = samples_ms.len() as f64;
        let mean = samples_ms.iter().sum::<f64>() / n;
        let var = samples_ms.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = sorted.len();
        let median = if k % 2 == 1 {
            sorted[k / 2]
        } else {
            0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
        };
        Self {
            median_ms: median,
            std_ms: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoolTiming {
    pub threads: usize,
    pub propagate: Timing,
    pub bayes: Timing,
    pub cycle: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// `(Θ, X, Y)`.
    pub grid: (usize, usize, usize),
    pub kernel: (usize, usize, usize),
    pub reps: usize,
    pub available_cores: usize,
    pub single: PoolTiming,
    pub parallel: PoolTiming,
    /// Ratio of single-thread to parallel cycle medians.
    pub speedup: f64,
}

impl BenchReport {
    pub fn summary(&self) -> String {
        let (t, x, y) = self.grid;
        let (kt, kx, ky) = self.kernel;
        let row = |p: &PoolTiming| {
            format!(
                "threads={:<3} propagate {:8.2} ms (std {:.2})  bayes {:7.2} ms (std {:.2})  cycle {:8.2} ms (std {:.2})",
                p.threads,
                p.propagate.median_ms,
                p.propagate.std_ms,
                p.bayes.median_ms,
                p.bayes.std_ms,
                p.cycle.median_ms,
                p.cycle.std_ms
            )
        };
        format!(
            "grid {t}x{x}x{y}, kernel {kt}x{kx}x{ky}, {} reps, {} cores available\n{}\n{}\nspeedup {:.2}x",
            self.reps,
            self.available_cores,
            row(&self.single),
            row(&self.parallel),
            self.speedup
        )
    }
}

/// Inputs shared by every timed repetition.
pub struct BenchCase {
    pub volume: LikelihoodVolume,
    pub kernel: OdometryKernel,
    pub heatmap: Heatmap,
}

impl BenchCase {
    /// A diffuse belief (every heading channel populated) and a kernel for a
    /// one-cell forward step with moderate noise.
    pub fn new(grid: GridSpec, kspec: KernelSpec, seed: u64) -> Result<Self, CliError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centre = Pose2D::new(
            grid.cell_x(grid.x_bins / 2),
            grid.cell_y(grid.y_bins / 2),
            0.0,
        );
        let wide = OracleParams {
            sigma_obs: 0.15 * grid.x_bins as f64 * grid.res_x,
            floor: 1e-3,
            ..OracleParams::default()
        };
        let prior = oracle_observe(&centre, &grid, &wide, &mut rng).map_err(CliError::data)?;
        let mut values = Vec::with_capacity(grid.cell_count());
        for _ in 0..grid.theta_bins {
            values.extend_from_slice(prior.values());
        }
        let mut volume = LikelihoodVolume::from_values(grid, values).map_err(CliError::data)?;
        volume.normalize().map_err(CliError::data)?;

        let motion = RotTransRot::new(0.05, grid.res_x, 0.05);
        let noise = NoiseParams {
            a1: 0.05,
            a2: 0.01,
            a3: 0.05,
            a4: 0.01,
        };
        let shifts = MotionAccumulator::new(grid.theta_bins).accumulate(&rotate_and_scale(&motion, &grid));
        let sigmas = sigmas_from_motion(&motion, &noise, &grid, &kspec);
        let kernel = build_kernel(&shifts, &sigmas, kspec).map_err(CliError::data)?;

        let sharp = OracleParams {
            sigma_obs: 2.0 * grid.res_x,
            floor: 0.01,
            ..OracleParams::default()
        };
        let heatmap = oracle_observe(&centre, &grid, &sharp, &mut rng).map_err(CliError::data)?;
        Ok(Self { volume, kernel, heatmap })
    }

    /// Times `reps` cycles on the current rayon pool.
    pub fn time(&self, reps: usize) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let mut propagator = Propagator::new();
        let mut out = LikelihoodVolume::zeros(*self.volume.spec()).map_err(CliError::data)?;
        // warm-up sizes the scratch buffers
        propagator
            .propagate_into(&self.volume, &self.kernel, &mut out)
            .map_err(CliError::data)?;
        let mut prop = Vec::with_capacity(reps);
        let mut bayes = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            propagator
                .propagate_into(&self.volume, &self.kernel, &mut out)
                .map_err(CliError::data)?;
            let t1 = Instant::now();
            bayes_update_in_place(&mut out, &self.heatmap, convloc_core::state_grid::DEFAULT_EPSILON_FLOOR)
                .map_err(CliError::data)?;
            let t2 = Instant::now();
            prop.push((t1 - t0).as_secs_f64() * 1e3);
            bayes.push((t2 - t1).as_secs_f64() * 1e3);
        }
        Ok((prop, bayes))
    }

    fn time_on(&self, threads: usize, reps: usize) -> Result<PoolTiming, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(CliError::data)?;
        let (prop, bayes) = pool.install(|| self.time(reps))?;
        let cycle: Vec<f64> = prop.iter().zip(&bayes).map(|(a, b)| a + b).collect();
        Ok(PoolTiming {
            threads: pool.current_num_threads(),
            propagate: Timing::from_samples(&prop),
            bayes: Timing::from_samples(&bayes),
            cycle: Timing::from_samples(&cycle),
        })
    }
}

pub fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Single-thread versus `threads`-thread timing (`0` means all cores).
pub fn run_bench(grid: GridSpec, kspec: KernelSpec, reps: usize, threads: usize) -> Result<BenchReport, CliError> {
    if reps < 2 {
        return Err(CliError::Config(format!("bench needs at least 2 repetitions, got {reps}")));
    }
    let case = BenchCase::new(grid, kspec, 7)?;
    let cores = available_cores();
    let threads = if threads == 0 { cores } else { threads };
    let single = case.time_on(1, reps)?;
    let parallel = case.time_on(threads, reps)?;
    Ok(BenchReport {
        grid: grid.dims(),
        kernel: kspec.extents(),
        reps,
        available_cores: cores,
        speedup: single.cycle.median_ms / parallel.cycle.median_ms,
        single,
        parallel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_stats() {
        let t = Timing::from_samples(&[1.0, 3.0, 2.0, 10.0]);
        assert_eq!(t.median_ms, 2.5);
        assert!((t.std_ms - 3.5355339059327378).abs() < 1e-12);
    }

    #[test]
    fn small_bench_runs() {
        let grid = GridSpec::new(8, 24, 24, 0.5, 0.5, (0.0, 0.0)).unwrap();
        let kspec = KernelSpec::new(3, 5, 5, 0.25).unwrap();
        let r = run_bench(grid, kspec, 3, 2).unwrap();
        assert_eq!(r.grid, (8, 24, 24));
        assert_eq!(r.parallel.threads, 2);
        assert_eq!(r.single.threads, 1);
        assert!(r.single.cycle.median_ms > 0.0 && r.speedup > 0.0);
        assert!(r.summary().contains("grid 8x24x24"));
        assert!(run_bench(grid, kspec, 1, 1).is_err());
    }
}
