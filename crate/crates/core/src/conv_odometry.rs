//! Convolutional odometry: per-channel Gaussian shift kernels, their stacked
//! single-kernel layout and application to a likelihood volume.
//!
//! Each heading channel `c` owns a separable kernel whose three 1D factors
//! are truncated Gaussians with their means offset by the integer shift for
//! that channel. Mass in source cell `(c, x, y)` is scattered to
//! `(c + dθ mod Θ, x + dx, y + dy)` with weight
//! `k_c[rθ + dθ][rx + dx][ry + dy]`. The heading axis wraps; mass pushed past
//! the XY border is dropped and the result renormalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion_model::{CellShift, NoiseParams, RotTransRot};
use crate::state_grid::{GridError, GridSpec, LikelihoodVolume, MassStatus};

/// Factor weights below this are not applied.
const TAP_EPSILON: f64 = 1e-18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
    #[error(
        "kernel overflow on channel {channel}, axis {axis}: shift {shift} exceeds half extent {half_extent}; \
         raise the update rate or the kernel size"
    )]
    KernelOverflow {
        channel: usize,
        axis: &'static str,
        shift: i64,
        half_extent: usize,
    },
    #[error("sigma {sigma} on channel {channel}, axis {axis} is below the floor {floor}")]
    SigmaBelowFloor {
        channel: usize,
        axis: &'static str,
        sigma: f64,
        floor: f64,
    },
    #[error("expected {expected} channels, got {found}")]
    ChannelCount { expected: usize, found: usize },
    #[error("kernel extents {kernel:?} exceed volume extents {volume:?}")]
    ExtentMismatch {
        kernel: (usize, usize, usize),
        volume: (usize, usize, usize),
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Kernel extents and diffusion limits, all in cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub k_theta: usize,
    pub k_x: usize,
    pub k_y: usize,
    pub sigma_floor: f64,
    /// Extra std per cell of commanded motion, `(θ, x, y)`.
    #[serde(default)]
    pub sigma_scale: [f64; 3],
}

impl KernelSpec {
    pub fn new(k_theta: usize, k_x: usize, k_y: usize, sigma_floor: f64) -> Result<Self, KernelError> {
        let s = Self {
            k_theta,
            k_x,
            k_y,
            sigma_floor,
            sigma_scale: [0.0; 3],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        for (name, k) in [("k_theta", self.k_theta), ("k_x", self.k_x), ("k_y", self.k_y)] {
            if k == 0 || k % 2 == 0 {
                return Err(KernelError::InvalidSpec(format!("{name} must be odd and >= 1, got {k}")));
            }
        }
        if !(self.sigma_floor.is_finite() && self.sigma_floor > 0.0) {
            return Err(KernelError::InvalidSpec(format!(
                "sigma_floor must be > 0, got {}",
                self.sigma_floor
            )));
        }
        if self.sigma_scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(KernelError::InvalidSpec("sigma_scale must be >= 0".into()));
        }
        Ok(())
    }

    pub fn extents(&self) -> (usize, usize, usize) {
        (self.k_theta, self.k_x, self.k_y)
    }

    pub fn half_extents(&self) -> (usize, usize, usize) {
        ((self.k_theta - 1) / 2, (self.k_x - 1) / 2, (self.k_y - 1) / 2)
    }

    pub fn volume(&self) -> usize {
        self.k_theta * self.k_x * self.k_y
    }
}

/// Per-channel standard deviations in cells.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelSigma {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
}

/// Discrete Gaussian over offsets `-r..=r` with mean `mean`, renormalized
/// after truncation. A zero `sigma` gives a spike at `mean`.
fn gaussian_factor(extent: usize, mean: i64, sigma: f64) -> Vec<f64> {
    let r = (extent as i64 - 1) / 2;
    if sigma == 0.0 {
        return (-r..=r).map(|d| if d == mean { 1.0 } else { 0.0 }).collect();
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut w: Vec<f64> = (-r..=r)
        .map(|d| {
            let z = (d - mean) as f64;
            (-z * z * inv).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable kernel per heading channel.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryKernel {
    spec: KernelSpec,
    /// `(θ, x, y)` factors per channel.
    factors: Vec<[Vec<f64>; 3]>,
}

impl OdometryKernel {
    fn check_shifts(shifts: &[CellShift], spec: &KernelSpec) -> Result<(), KernelError> {
        let (rt, rx, ry) = spec.half_extents();
        for (channel, s) in shifts.iter().enumerate() {
            for (axis, shift, half) in [("theta", s.theta, rt), ("x", s.x, rx), ("y", s.y, ry)] {
                if shift.unsigned_abs() as usize > half {
                    return Err(KernelError::KernelOverflow {
                        channel,
                        axis,
                        shift,
                        half_extent: half,
                    });
                }
            }
        }
        Ok(())
    }

    /// Pure shift kernels with no diffusion.
    pub fn dirac(shifts: &[CellShift], spec: KernelSpec) -> Result<Self, KernelError> {
        spec.validate()?;
        Self::check_shifts(shifts, &spec)?;
        let factors = shifts
            .iter()
            .map(|s| {
                [
                    gaussian_factor(spec.k_theta, s.theta, 0.0),
                    gaussian_factor(spec.k_x, s.x, 0.0),
                    gaussian_factor(spec.k_y, s.y, 0.0),
                ]
            })
            .collect();
        Ok(Self { spec, factors })
    }

    /// Kernel that leaves every volume unchanged.
    pub fn identity(theta_bins: usize, spec: KernelSpec) -> Result<Self, KernelError> {
        Self::dirac(&vec![CellShift::default(); theta_bins], spec)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.factors.len()
    }

    /// 1D factors `(θ, x, y)` of channel `c`.
    pub fn factors(&self, c: usize) -> &[Vec<f64>; 3] {
        &self.factors[c]
    }

    /// Dense `[K_θ][K_x][K_y]` tensor of channel `c`.
    pub fn tensor(&self, c: usize) -> Vec<f64> {
        let [ft, fx, fy] = &self.factors[c];
        let mut out = Vec::with_capacity(self.spec.volume());
        for &wt in ft {
            for &wx in fx {
                out.extend(fy.iter().map(|&wy| wt * wx * wy));
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<Vec<f64>> {
        (0..self.channels()).map(|c| self.tensor(c)).collect()
    }
}

/// Builds one separable Gaussian kernel per channel, mean-offset by that
/// channel's integer shift.
pub fn build_kernel(
    shifts: &[CellShift],
    sigmas: &[ChannelSigma],
    spec: KernelSpec,
) -> Result<OdometryKernel, KernelError> {
    spec.validate()?;
    if shifts.len() != sigmas.len() {
        return Err(KernelError::ChannelCount {
            expected: shifts.len(),
            found: sigmas.len(),
        });
    }
    OdometryKernel::check_shifts(shifts, &spec)?;
    let mut factors = Vec::with_capacity(shifts.len());
    for (channel, (s, sg)) in shifts.iter().zip(sigmas).enumerate() {
        for (axis, sigma) in [("theta", sg.theta), ("x", sg.x), ("y", sg.y)] {
            if !(sigma >= spec.sigma_floor && sigma.is_finite()) {
                return Err(KernelError::SigmaBelowFloor {
                    channel,
                    axis,
                    sigma,
                    floor: spec.sigma_floor,
                });
            }
        }
        factors.push([
            gaussian_factor(spec.k_theta, s.theta, sg.theta),
            gaussian_factor(spec.k_x, s.x, sg.x),
            gaussian_factor(spec.k_y, s.y, sg.y),
        ]);
    }
    Ok(OdometryKernel { spec, factors })
}

/// Kernel standard deviations for one odometry step.
///
/// Translation noise is split into an along-track part
/// `sqrt(a3·δx² + a4·(δθ₁² + δθ₂²))` and a cross-track part `|δx|·σ_rot1`,
/// both rotated into the channel's direction of travel before scaling to
/// cells. Heading uses `sqrt(a1·(δθ₁² + δθ₂²) + a2·δx²)`.
pub fn sigmas_from_motion(
    motion: &RotTransRot,
    noise: &NoiseParams,
    grid: &GridSpec,
    kspec: &KernelSpec,
) -> Vec<ChannelSigma> {
    let rot_sq = motion.d_theta1 * motion.d_theta1 + motion.d_theta2 * motion.d_theta2;
    let tr_sq = motion.d_x * motion.d_x;
    let along = (noise.a3 * tr_sq + noise.a4 * rot_sq).sqrt();
    let cross = motion.d_x.abs() * (noise.a1 * motion.d_theta1 * motion.d_theta1 + noise.a2 * tr_sq).sqrt();
    let theta = (noise.a1 * rot_sq + noise.a2 * tr_sq).sqrt() / grid.res_theta
        + kspec.sigma_scale[0] * (motion.total_rotation() / grid.res_theta).abs();
    let floor = kspec.sigma_floor;
    (0..grid.theta_bins)
        .map(|c| {
            let (s, co) = (c as f64 * grid.res_theta + motion.d_theta1).sin_cos();
            let sx = (along * co).hypot(cross * s) / grid.res_x
                + kspec.sigma_scale[1] * (motion.d_x * co / grid.res_x).abs();
            let sy = (along * s).hypot(cross * co) / grid.res_y
                + kspec.sigma_scale[2] * (motion.d_x * s / grid.res_y).abs();
            ChannelSigma {
                theta: theta.max(floor),
                x: sx.max(floor),
                y: sy.max(floor),
            }
        })
        .collect()
}

/// All per-channel kernels laid out as one 2D array.
///
/// Row block `c` holds the kernel of source channel `c`; column block `t`
/// is target heading channel `t`. The `K_θ` heading slices of channel `c`
/// land in column blocks `c - rθ ..= c + rθ` taken modulo `Θ`, so blocks
/// past the last channel wrap to the first. Blocks are `K_x × K_y` and are
/// separated (and surrounded) by `pad` zero rows/columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedKernel {
    theta_bins: usize,
    spec: KernelSpec,
    pad: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl StackedKernel {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn theta_bins(&self) -> usize {
        self.theta_bins
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn block_origin(&self, src: usize, dst: usize) -> (usize, usize) {
        (
            self.pad + src * (self.spec.k_x + self.pad),
            self.pad + dst * (self.spec.k_y + self.pad),
        )
    }

    /// Column block that heading slice `m` of source channel `src` lands in.
    fn target_block(&self, src: usize, m: usize) -> usize {
        let rt = (self.spec.k_theta - 1) / 2;
        (src + m + self.theta_bins * (rt + 1) - rt) % self.theta_bins
    }

    /// `K_x × K_y` block for `(src, dst)`, row-major.
    pub fn block(&self, src: usize, dst: usize) -> Vec<f64> {
        let (r0, c0) = self.block_origin(src, dst);
        let mut out = Vec::with_capacity(self.spec.k_x * self.spec.k_y);
        for i in 0..self.spec.k_x {
            let row = (r0 + i) * self.cols + c0;
            out.extend_from_slice(&self.data[row..row + self.spec.k_y]);
        }
        out
    }

    /// Recovers the dense per-channel tensors.
    pub fn unstack(&self) -> Vec<Vec<f64>> {
        (0..self.theta_bins)
            .map(|c| {
                (0..self.spec.k_theta)
                    .flat_map(|m| self.block(c, self.target_block(c, m)))
                    .collect()
            })
            .collect()
    }
}

/// Re-lays the per-channel kernels into the single stacked 2D layout.
pub fn stack_kernel(k: &OdometryKernel, theta_bins: usize) -> Result<StackedKernel, KernelError> {
    stack_kernel_padded(k, theta_bins, 1)
}

pub fn stack_kernel_padded(
    k: &OdometryKernel,
    theta_bins: usize,
    pad: usize,
) -> Result<StackedKernel, KernelError> {
    if k.channels() != theta_bins {
        return Err(KernelError::ChannelCount {
            expected: theta_bins,
            found: k.channels(),
        });
    }
    let spec = *k.spec();
    if spec.k_theta > theta_bins {
        return Err(KernelError::ExtentMismatch {
            kernel: spec.extents(),
            volume: (theta_bins, spec.k_x, spec.k_y),
        });
    }
    let rows = pad + theta_bins * (spec.k_x + pad);
    let cols = pad + theta_bins * (spec.k_y + pad);
    let mut stacked = StackedKernel {
        theta_bins,
        spec,
        pad,
        rows,
        cols,
        data: vec![0.0; rows * cols],
    };
    let plane = spec.k_x * spec.k_y;
    for c in 0..theta_bins {
        let tensor = k.tensor(c);
        for m in 0..spec.k_theta {
            let dst = stacked.target_block(c, m);
            let (r0, c0) = stacked.block_origin(c, dst);
            for i in 0..spec.k_x {
                let src = &tensor[m * plane + i * spec.k_y..m * plane + (i + 1) * spec.k_y];
                let at = (r0 + i) * cols + c0;
                stacked.data[at..at + spec.k_y].copy_from_slice(src);
            }
        }
    }
    Ok(stacked)
}

fn check_extents(spec: &GridSpec, k: &KernelSpec, channels: usize) -> Result<(), KernelError> {
    if channels != spec.theta_bins {
        return Err(KernelError::ChannelCount {
            expected: spec.theta_bins,
            found: channels,
        });
    }
    if k.k_theta > spec.theta_bins || k.k_x > spec.x_bins || k.k_y > spec.y_bins {
        return Err(KernelError::ExtentMismatch {
            kernel: k.extents(),
            volume: spec.dims(),
        });
    }
    Ok(())
}

/// Applies the stacked layout directly: every `(src, dst)` block is
/// scattered as a plain 2D kernel from source slice `src` into target
/// slice `dst`.
pub fn apply_stacked(
    vol: &LikelihoodVolume,
    stacked: &StackedKernel,
) -> Result<(LikelihoodVolume, MassStatus), KernelError> {
    let spec = *vol.spec();
    check_extents(&spec, &stacked.spec, stacked.theta_bins)?;
    let (kx, ky) = (stacked.spec.k_x as i64, stacked.spec.k_y as i64);
    let (rx, ry) = ((kx - 1) / 2, (ky - 1) / 2);
    let (nx, ny) = (spec.x_bins as i64, spec.y_bins as i64);
    let mut out = LikelihoodVolume::zeros(spec)?;
    let plane = spec.slice_len();
    for src in 0..spec.theta_bins {
        let slice = vol.slice(src);
        for dst in 0..spec.theta_bins {
            let block = stacked.block(src, dst);
            if block.iter().all(|&w| w == 0.0) {
                continue;
            }
            let target = &mut out.values_mut()[dst * plane..(dst + 1) * plane];
            for x in 0..nx {
                for y in 0..ny {
                    let m = slice[(x * ny + y) as usize];
                    if m == 0.0 {
                        continue;
                    }
                    for i in 0..kx {
                        let tx = x + i - rx;
                        if !(0..nx).contains(&tx) {
                            continue;
                        }
                        for j in 0..ky {
                            let ty = y + j - ry;
                            if !(0..ny).contains(&ty) {
                                continue;
                            }
                            target[(tx * ny + ty) as usize] += m * block[(i * ky + j) as usize];
                        }
                    }
                }
            }
        }
    }
    let status = out.normalize_or_reset();
    Ok((out, status))
}

/// `dst[i + off] += w · src[i]` for every index that stays in range.
#[inline]
fn shifted_axpy(dst: &mut [f64], src: &[f64], off: i64, w: f64) {
    let n = dst.len() as i64;
    let lo = off.max(0);
    let hi = (n + off).min(n);
    if lo >= hi {
        return;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let s0 = (lo as i64 - off) as usize;
    for (d, s) in dst[lo..hi].iter_mut().zip(&src[s0..s0 + (hi - lo)]) {
        *d += w * *s;
    }
}

/// Separable XY scatter of one heading slice.
fn spread_slice(src: &[f64], fx: &[f64], fy: &[f64], nx: usize, ny: usize, scratch: &mut [f64], out: &mut [f64]) {
    scratch.fill(0.0);
    out.fill(0.0);
    let rx = (fx.len() as i64 - 1) / 2;
    let ry = (fy.len() as i64 - 1) / 2;
    for (i, &w) in fx.iter().enumerate() {
        if w < TAP_EPSILON {
            continue;
        }
        let off = i as i64 - rx;
        for x in 0..nx as i64 {
            let tx = x + off;
            if tx < 0 || tx >= nx as i64 {
                continue;
            }
            let (s, t) = (x as usize * ny, tx as usize * ny);
            let (srow, drow) = (&src[s..s + ny], &mut scratch[t..t + ny]);
            for (d, v) in drow.iter_mut().zip(srow) {
                *d += w * *v;
            }
        }
    }
    for x in 0..nx {
        let srow = &scratch[x * ny..(x + 1) * ny];
        let drow = &mut out[x * ny..(x + 1) * ny];
        for (j, &w) in fy.iter().enumerate() {
            if w >= TAP_EPSILON {
                shifted_axpy(drow, srow, j as i64 - ry, w);
            }
        }
    }
}

/// Reusable buffers for [`propagate`].
#[derive(Debug, Default)]
pub struct Propagator {
    spread: Vec<f64>,
    retained: f64,
}

impl Propagator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mass left on the grid by the last call, before renormalization.
    pub fn retained_mass(&self) -> f64 {
        self.retained
    }

    /// Propagates `vol` through `k` into `out`, then renormalizes `out`.
    ///
    /// Each source slice is first spread in XY with its channel's factors;
    /// every target slice then gathers the spread slices through the heading
    /// factors. Both stages run in parallel on the current rayon pool and
    /// sum in a fixed order, so results do not depend on the thread count.
    pub fn propagate_into(
        &mut self,
        vol: &LikelihoodVolume,
        k: &OdometryKernel,
        out: &mut LikelihoodVolume,
    ) -> Result<MassStatus, KernelError> {
        let spec = *vol.spec();
        check_extents(&spec, k.spec(), k.channels())?;
        if out.spec() != vol.spec() {
            return Err(KernelError::Grid(GridError::DimensionMismatch {
                expected: spec.dims(),
                found: out.spec().dims(),
            }));
        }
        let (nt, nx, ny) = spec.dims();
        let plane = nx * ny;
        self.spread.resize(nt * plane, 0.0);

        self.spread
            .par_chunks_mut(plane)
            .enumerate()
            .for_each_init(
                || vec![0.0; plane],
                |scratch, (c, dst)| {
                    let src = vol.slice(c);
                    if src.iter().all(|&v| v == 0.0) {
                        dst.fill(0.0);
                        return;
                    }
                    let [_, fx, fy] = k.factors(c);
                    spread_slice(src, fx, fy, nx, ny, scratch, dst);
                },
            );

        let rt = (k.spec().k_theta - 1) / 2;
        let spread = &self.spread;
        out.values_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(t, dst)| {
                dst.fill(0.0);
                for m in 0..k.spec().k_theta {
                    // source channel whose slice m lands on t
                    let c = (t + nt * (rt + 1) - m + rt) % nt;
                    let w = k.factors(c)[0][m];
                    if w < TAP_EPSILON {
                        continue;
                    }
                    for (d, s) in dst.iter_mut().zip(&spread[c * plane..(c + 1) * plane]) {
                        *d += w * *s;
                    }
                }
            });
        self.retained = out.total_mass();
        Ok(out.normalize_or_reset())
    }
}

/// Applies the odometry kernel to a volume, returning a new normalized volume.
pub fn propagate(
    vol: &LikelihoodVolume,
    k: &OdometryKernel,
) -> Result<(LikelihoodVolume, MassStatus), KernelError> {
    let mut out = LikelihoodVolume::zeros(*vol.spec())?;
    let status = Propagator::new().propagate_into(vol, k, &mut out)?;
    Ok((out, status))
}

/// Brute-force scatter of every cell through explicitly evaluated Gaussians.
///
/// Independent of [`OdometryKernel`]; used to check [`propagate`]. A zero
/// sigma is treated as an exact shift.
pub fn propagate_reference(
    vol: &LikelihoodVolume,
    shifts: &[CellShift],
    sigmas: &[ChannelSigma],
    kspec: &KernelSpec,
) -> Result<LikelihoodVolume, KernelError> {
    let spec = *vol.spec();
    check_extents(&spec, kspec, shifts.len())?;
    if sigmas.len() != shifts.len() {
        return Err(KernelError::ChannelCount {
            expected: shifts.len(),
            found: sigmas.len(),
        });
    }
    let (nt, nx, ny) = (spec.theta_bins as i64, spec.x_bins as i64, spec.y_bins as i64);
    let (rt, rx, ry) = {
        let (a, b, c) = kspec.half_extents();
        (a as i64, b as i64, c as i64)
    };
    let weights = |r: i64, mean: i64, sigma: f64| -> Vec<f64> {
        let raw: Vec<f64> = (-r..=r)
            .map(|d| {
                if sigma == 0.0 {
                    f64::from(u8::from(d == mean))
                } else {
                    let z = (d - mean) as f64 / sigma;
                    (-0.5 * z * z).exp()
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    };
    let mut out = vec![0.0; spec.cell_count()];
    for t in 0..nt {
        let s = shifts[t as usize];
        let sg = sigmas[t as usize];
        let wt = weights(rt, s.theta, sg.theta);
        let wx = weights(rx, s.x, sg.x);
        let wy = weights(ry, s.y, sg.y);
        for x in 0..nx {
            for y in 0..ny {
                let m = vol.values()[((t * nx + x) * ny + y) as usize];
                if m == 0.0 {
                    continue;
                }
                for dt in -rt..=rt {
                    let tt = (t + dt).rem_euclid(nt);
                    let a = m * wt[(dt + rt) as usize];
                    for dx in -rx..=rx {
                        let tx = x + dx;
                        if tx < 0 || tx >= nx {
                            continue;
                        }
                        let b = a * wx[(dx + rx) as usize];
                        let lo = (-ry).max(-y);
                        let hi = ry.min(ny - 1 - y);
                        if lo > hi {
                            continue;
                        }
                        let row = ((tt * nx + tx) * ny + y + lo) as usize;
                        let taps = &wy[(lo + ry) as usize..=(hi + ry) as usize];
                        for (o, w) in out[row..row + taps.len()].iter_mut().zip(taps) {
                            *o += b * w;
                        }
                    }
                }
            }
        }
    }
    let mut result = LikelihoodVolume::from_values(spec, out)?;
    result.normalize_or_reset();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_model::{rotate_and_scale, MotionAccumulator};
    use crate::state_grid::{GridIndex, Pose2D};

    fn shift(x: i64, y: i64, theta: i64) -> CellShift {
        CellShift { x, y, theta }
    }

    #[test]
    fn kernel_spec_validation() {
        assert!(KernelSpec::new(3, 4, 3, 0.25).is_err());
        assert!(KernelSpec::new(3, 3, 3, 0.0).is_err());
        assert!(KernelSpec::new(1, 1, 1, 0.1).is_ok());
    }

    #[test]
    fn floor_sigma_is_near_dirac() {
        let spec = KernelSpec::new(3, 3, 3, 0.25).unwrap();
        let s = ChannelSigma {
            theta: 0.25,
            x: 0.25,
            y: 0.25,
        };
        let k = build_kernel(&[shift(0, 0, 0)], &[s], spec).unwrap();
        let t = k.tensor(0);
        assert!(t[13] > 0.99, "centre weight {}", t[13]);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theta_shift_moves_mass() {
        let spec = KernelSpec::new(3, 1, 1, 0.01).unwrap();
        let s = ChannelSigma {
            theta: 0.01,
            x: 0.01,
            y: 0.01,
        };
        let k = build_kernel(&[shift(0, 0, 1)], &[s], spec).unwrap();
        assert_eq!(k.tensor(0), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn x_profile_matches_closed_form() {
        let spec = KernelSpec::new(1, 5, 1, 0.01).unwrap();
        let s = ChannelSigma {
            theta: 0.01,
            x: 1.0,
            y: 0.01,
        };
        let k = build_kernel(&[shift(0, 0, 0)], &[s], spec).unwrap();
        let raw = [0.0540, 0.2420, 0.3989, 0.2420, 0.0540];
        let total: f64 = raw.iter().sum();
        for (w, r) in k.factors(0)[1].iter().zip(raw) {
            assert!((w - r / total).abs() < 2e-4);
        }
        let exact: Vec<f64> = (-2..=2).map(|d: i32| (-(d * d) as f64 / 2.0).exp()).collect();
        let s: f64 = exact.iter().sum();
        for (w, e) in k.factors(0)[1].iter().zip(&exact) {
            assert!((w - e / s).abs() < 1e-15);
        }
    }

    #[test]
    fn overflow_names_channel_and_axis() {
        let spec = KernelSpec::new(3, 3, 3, 0.25).unwrap();
        let s = ChannelSigma {
            theta: 0.5,
            x: 0.5,
            y: 0.5,
        };
        let err = build_kernel(&[shift(0, 0, 0), shift(0, -2, 0)], &[s, s], spec).unwrap_err();
        assert_eq!(
            err,
            KernelError::KernelOverflow {
                channel: 1,
                axis: "y",
                shift: -2,
                half_extent: 1
            }
        );
    }

    #[test]
    fn sigma_below_floor_rejected() {
        let spec = KernelSpec::new(3, 3, 3, 0.25).unwrap();
        let s = ChannelSigma {
            theta: 0.1,
            x: 0.5,
            y: 0.5,
        };
        assert!(matches!(
            build_kernel(&[shift(0, 0, 0)], &[s], spec),
            Err(KernelError::SigmaBelowFloor { axis: "theta", .. })
        ));
    }

    #[test]
    fn sigmas_examples() {
        let grid = GridSpec::new(4, 16, 16, 0.5, 0.5, (0.0, 0.0)).unwrap();
        let kspec = KernelSpec::new(3, 5, 5, 0.25).unwrap();
        let zero = sigmas_from_motion(&RotTransRot::default(), &NoiseParams::default(), &grid, &kspec);
        assert!(zero.iter().all(|s| s.theta == 0.25 && s.x == 0.25 && s.y == 0.25));

        let noise = NoiseParams {
            a3: 0.04,
            ..Default::default()
        };
        let s = sigmas_from_motion(&RotTransRot::new(0.0, 2.0, 0.0), &noise, &grid, &kspec);
        assert!((s[0].x - 0.8).abs() < 1e-12);
        // channel π/2 moves along y, so the along-track spread is on y
        assert!((s[1].y - 0.8).abs() < 1e-12);
        assert_eq!(s[1].x, 0.25);

        let s2 = sigmas_from_motion(&RotTransRot::new(0.0, 4.0, 0.0), &noise, &grid, &kspec);
        assert!((s2[0].x - 2.0 * s[0].x).abs() < 1e-12);
    }

    #[test]
    fn stack_unstack_round_trip() {
        let grid = GridSpec::new(6, 16, 16, 0.5, 0.5, (0.0, 0.0)).unwrap();
        let kspec = KernelSpec::new(5, 5, 7, 0.3).unwrap();
        let m = RotTransRot::new(0.2, 0.8, 0.5);
        let shifts = MotionAccumulator::new(6).accumulate(&rotate_and_scale(&m, &grid));
        let noise = NoiseParams {
            a1: 0.1,
            a2: 0.05,
            a3: 0.1,
            a4: 0.05,
        };
        let k = build_kernel(&shifts, &sigmas_from_motion(&m, &noise, &grid, &kspec), kspec).unwrap();
        let st = stack_kernel(&k, 6).unwrap();
        assert_eq!(st.unstack(), k.tensors());
        assert_eq!(st.rows(), 1 + 6 * 6);
        assert_eq!(st.cols(), 1 + 6 * 8);
    }

    #[test]
    fn single_channel_stack_is_the_kernel() {
        let kspec = KernelSpec::new(1, 3, 3, 0.5).unwrap();
        let s = ChannelSigma {
            theta: 0.5,
            x: 0.7,
            y: 0.9,
        };
        let k = build_kernel(&[shift(1, 0, 0)], &[s], kspec).unwrap();
        let st = stack_kernel_padded(&k, 1, 0).unwrap();
        assert_eq!((st.rows(), st.cols()), (3, 3));
        assert_eq!(st.data(), k.tensor(0).as_slice());
    }

    #[test]
    fn stack_rejects_wide_theta_kernel() {
        let kspec = KernelSpec::new(3, 1, 1, 0.5).unwrap();
        let k = OdometryKernel::identity(1, kspec).unwrap();
        assert!(matches!(stack_kernel(&k, 1), Err(KernelError::ExtentMismatch { .. })));
    }

    #[test]
    fn stack_wraps_theta_blocks() {
        let kspec = KernelSpec::new(3, 1, 1, 0.5).unwrap();
        let k = OdometryKernel::dirac(&[shift(0, 0, 1); 4], kspec).unwrap();
        let st = stack_kernel_padded(&k, 4, 0).unwrap();
        // channel 3 shifted by +1 lands on channel 0
        assert_eq!(st.block(3, 0), vec![1.0]);
        assert_eq!(st.block(3, 3), vec![0.0]);
        assert_eq!(st.block(0, 1), vec![1.0]);
    }

    fn unit_grid(t: usize, x: usize, y: usize) -> GridSpec {
        GridSpec::new(t, x, y, 1.0, 1.0, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn propagate_forward_shift() {
        let grid = unit_grid(4, 8, 8);
        let kspec = KernelSpec::new(3, 3, 3, 0.1).unwrap();
        let shifts = MotionAccumulator::new(4).accumulate(&rotate_and_scale(&RotTransRot::new(0.0, 1.0, 0.0), &grid));
        let k = OdometryKernel::dirac(&shifts, kspec).unwrap();
        let vol = LikelihoodVolume::init_dirac(grid, &Pose2D::new(3.0, 4.0, 0.0)).unwrap();
        let (out, status) = propagate(&vol, &k).unwrap();
        assert_eq!(status, MassStatus::Normalized);
        assert_eq!(out.get(GridIndex::new(0, 4, 4)), 1.0);
        let vol = LikelihoodVolume::init_dirac(grid, &Pose2D::new(3.0, 4.0, std::f64::consts::PI)).unwrap();
        let (out, _) = propagate(&vol, &k).unwrap();
        assert_eq!(out.get(GridIndex::new(2, 2, 4)), 1.0);
    }

    #[test]
    fn propagate_wraps_theta() {
        let grid = unit_grid(5, 4, 4);
        let kspec = KernelSpec::new(3, 1, 1, 0.1).unwrap();
        let k = OdometryKernel::dirac(&[shift(0, 0, 1); 5], kspec).unwrap();
        let mut vol = LikelihoodVolume::zeros(grid).unwrap();
        vol.set(GridIndex::new(4, 2, 1), 1.0).unwrap();
        let (out, _) = propagate(&vol, &k).unwrap();
        assert_eq!(out.get(GridIndex::new(0, 2, 1)), 1.0);
    }

    #[test]
    fn propagate_identity() {
        let grid = unit_grid(3, 5, 4);
        let raw: Vec<f64> = (0..grid.cell_count()).map(|i| ((i * 37) % 11) as f64).collect();
        let mut vol = LikelihoodVolume::from_values(grid, raw).unwrap();
        vol.normalize().unwrap();
        let k = OdometryKernel::identity(3, KernelSpec::new(3, 3, 3, 0.2).unwrap()).unwrap();
        let (out, _) = propagate(&vol, &k).unwrap();
        assert_eq!(out, vol);
    }

    #[test]
    fn propagate_extent_checks() {
        let grid = unit_grid(3, 5, 5);
        let vol = LikelihoodVolume::init_uniform(grid).unwrap();
        let k = OdometryKernel::identity(3, KernelSpec::new(5, 3, 3, 0.2).unwrap()).unwrap();
        assert!(matches!(propagate(&vol, &k), Err(KernelError::ExtentMismatch { .. })));
        let k = OdometryKernel::identity(2, KernelSpec::new(1, 3, 3, 0.2).unwrap()).unwrap();
        assert!(matches!(propagate(&vol, &k), Err(KernelError::ChannelCount { .. })));
    }

    #[test]
    fn mass_leaving_map_is_renormalized_away() {
        let grid = unit_grid(1, 3, 1);
        let kspec = KernelSpec::new(1, 3, 1, 0.1).unwrap();
        let k = OdometryKernel::dirac(&[shift(1, 0, 0)], kspec).unwrap();
        let vol = LikelihoodVolume::from_values(grid, vec![0.5, 0.0, 0.5]).unwrap();
        let (out, _) = propagate(&vol, &k).unwrap();
        assert_eq!(out.values(), &[0.0, 1.0, 0.0]);
        let gone = LikelihoodVolume::from_values(grid, vec![0.0, 0.0, 1.0]).unwrap();
        let (out, status) = propagate(&gone, &k).unwrap();
        assert_eq!(status, MassStatus::ResetToUniform);
        assert!((out.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_identity_and_uniform_interior() {
        let grid = unit_grid(4, 12, 12);
        let kspec = KernelSpec::new(3, 5, 5, 0.25).unwrap();
        let raw: Vec<f64> = (0..grid.cell_count()).map(|i| ((i * 13) % 7) as f64 + 0.5).collect();
        let mut vol = LikelihoodVolume::from_values(grid, raw).unwrap();
        vol.normalize().unwrap();
        let zero = vec![ChannelSigma::default(); 4];
        let out = propagate_reference(&vol, &[CellShift::default(); 4], &zero, &kspec).unwrap();
        for (a, b) in out.values().iter().zip(vol.values()) {
            assert!((a - b).abs() < 1e-15);
        }

        let uniform = LikelihoodVolume::init_uniform(grid).unwrap();
        let s = ChannelSigma {
            theta: 0.5,
            x: 0.8,
            y: 0.8,
        };
        let out = propagate_reference(&uniform, &[shift(1, 0, 0); 4], &[s; 4], &kspec).unwrap();
        let interior: Vec<f64> = (0..4)
            .flat_map(|t| (4..8).flat_map(move |x| (4..8).map(move |y| GridIndex::new(t, x, y))))
            .map(|i| out.get(i))
            .collect();
        for v in &interior {
            assert!((v - interior[0]).abs() < 1e-15);
        }
    }
}
