//! Discretised pose-likelihood volume over `(θ, x, y)`.
//!
//! The volume is stored densely as `[Θ][X][Y]` with `y` contiguous. Heading
//! bin `c` is centred on `c·r_θ` and spans half a bin either side, so bin 0
//! is centred on heading zero.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor_model::Heatmap;

/// Multiplicative floor applied to sensor likelihoods during fusion.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-6;

/// Chebyshev radius (cells) of the pose-extraction window around the argmax.
pub const DEFAULT_WINDOW_RADIUS: usize = 8;

/// Below this mean resultant length the heading mean is considered undefined.
const MIN_RESULTANT: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("pose ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("volume has zero total mass")]
    ZeroMass,
    #[error("volume is not normalized (total mass {0})")]
    NotNormalized(f64),
    #[error("invalid cell value {value} at linear index {index}")]
    InvalidValue { index: usize, value: f64 },
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a - TAU * ((a + PI) / TAU).floor();
    if r >= PI {
        r -= TAU;
    }
    if r < -PI {
        r += TAU;
    }
    r
}

/// Planar pose with heading kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridIndex {
    pub t_idx: usize,
    pub x_idx: usize,
    pub y_idx: usize,
}

impl GridIndex {
    pub fn new(t_idx: usize, x_idx: usize, y_idx: usize) -> Self {
        Self {
            t_idx,
            x_idx,
            y_idx,
        }
    }
}

/// Geometry of the state grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub theta_bins: usize,
    pub x_bins: usize,
    pub y_bins: usize,
    /// Metres per cell along x.
    pub res_x: f64,
    /// Metres per cell along y.
    pub res_y: f64,
    /// Radians per heading bin. Must equal `2π / theta_bins`.
    pub res_theta: f64,
    /// World coordinates of the centre of cell `(0, 0)`.
    pub origin_x: f64,
    pub origin_y: f64,
}

impl GridSpec {
    /// Builds a spec whose heading axis covers the full circle.
    pub fn new(
        theta_bins: usize,
        x_bins: usize,
        y_bins: usize,
        res_x: f64,
        res_y: f64,
        origin: (f64, f64),
    ) -> Result<Self, GridError> {
        let spec = Self {
            theta_bins,
            x_bins,
            y_bins,
            res_x,
            res_y,
            res_theta: if theta_bins > 0 {
                TAU / theta_bins as f64
            } else {
                0.0
            },
            origin_x: origin.0,
            origin_y: origin.1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.theta_bins == 0 || self.x_bins == 0 || self.y_bins == 0 {
            return Err(GridError::InvalidSpec(format!(
                "all bin counts must be >= 1, got {}x{}x{}",
                self.theta_bins, self.x_bins, self.y_bins
            )));
        }
        for (name, r) in [
            ("res_x", self.res_x),
            ("res_y", self.res_y),
            ("res_theta", self.res_theta),
        ] {
            if !(r.is_finite() && r > 0.0) {
                return Err(GridError::InvalidSpec(format!("{name} must be > 0, got {r}")));
            }
        }
        if (self.theta_bins as f64 * self.res_theta - TAU).abs() > 1e-9 {
            return Err(GridError::InvalidSpec(format!(
                "theta axis must cover 2π: {} bins x {} rad",
                self.theta_bins, self.res_theta
            )));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(GridError::InvalidSpec("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.theta_bins, self.x_bins, self.y_bins)
    }

    pub fn cell_count(&self) -> usize {
        self.theta_bins * self.x_bins * self.y_bins
    }

    pub fn slice_len(&self) -> usize {
        self.x_bins * self.y_bins
    }

    pub fn linear_index(&self, idx: GridIndex) -> usize {
        (idx.t_idx * self.x_bins + idx.x_idx) * self.y_bins + idx.y_idx
    }

    pub fn grid_index(&self, linear: usize) -> GridIndex {
        let y = linear % self.y_bins;
        let rest = linear / self.y_bins;
        GridIndex::new(rest / self.x_bins, rest % self.x_bins, y)
    }

    /// Centre heading of bin `t`, wrapped to `[-π, π)`.
    pub fn bin_heading(&self, t: usize) -> f64 {
        wrap_angle(t as f64 * self.res_theta)
    }

    /// Heading bin containing `theta` (any real).
    pub fn heading_bin(&self, theta: f64) -> usize {
        let a = theta.rem_euclid(TAU);
        let bin = (a / self.res_theta + 0.5).floor() as usize;
        bin % self.theta_bins
    }

    pub fn cell_x(&self, ix: usize) -> f64 {
        self.origin_x + ix as f64 * self.res_x
    }

    pub fn cell_y(&self, iy: usize) -> f64 {
        self.origin_y + iy as f64 * self.res_y
    }

    /// Nearest spatial cell for a world position.
    pub fn xy_index(&self, x: f64, y: f64) -> Result<(usize, usize), GridError> {
        let fx = ((x - self.origin_x) / self.res_x + 0.5).floor();
        let fy = ((y - self.origin_y) / self.res_y + 0.5).floor();
        if !(fx >= 0.0 && fy >= 0.0 && fx < self.x_bins as f64 && fy < self.y_bins as f64) {
            return Err(GridError::OutOfBounds { x, y });
        }
        Ok((fx as usize, fy as usize))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.xy_index(x, y).is_ok()
    }

    pub fn pose_to_index(&self, pose: &Pose2D) -> Result<GridIndex, GridError> {
        let (ix, iy) = self.xy_index(pose.x, pose.y)?;
        Ok(GridIndex::new(self.heading_bin(pose.theta), ix, iy))
    }

    /// Pose at the centre of a cell.
    pub fn index_to_pose(&self, idx: GridIndex) -> Pose2D {
        Pose2D::new(
            self.cell_x(idx.x_idx),
            self.cell_y(idx.y_idx),
            self.bin_heading(idx.t_idx),
        )
    }
}

pub fn pose_to_index(spec: &GridSpec, pose: &Pose2D) -> Result<GridIndex, GridError> {
    spec.pose_to_index(pose)
}

/// Outcome of an operation that renormalizes a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassStatus {
    Normalized,
    /// The volume had no mass left and was reset to the uniform prior.
    ResetToUniform,
}

/// Dense `[Θ][X][Y]` likelihood volume.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodVolume {
    spec: GridSpec,
    values: Vec<f64>,
}

impl LikelihoodVolume {
    pub fn init_uniform(spec: GridSpec) -> Result<Self, GridError> {
        spec.validate()?;
        let n = spec.cell_count();
        Ok(Self {
            spec,
            values: vec![1.0 / n as f64; n],
        })
    }

    pub fn init_dirac(spec: GridSpec, pose: &Pose2D) -> Result<Self, GridError> {
        spec.validate()?;
        let idx = spec.pose_to_index(pose)?;
        let mut values = vec![0.0; spec.cell_count()];
        values[spec.linear_index(idx)] = 1.0;
        Ok(Self { spec, values })
    }

    /// Wraps raw values; they must be finite and nonnegative.
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        spec.validate()?;
        if values.len() != spec.cell_count() {
            return Err(GridError::DimensionMismatch {
                expected: spec.dims(),
                found: (values.len(), 1, 1),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(GridError::InvalidValue { index, value });
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Result<Self, GridError> {
        spec.validate()?;
        Ok(Self {
            spec,
            values: vec![0.0; spec.cell_count()],
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for in-crate kernels that preserve non-negativity.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, idx: GridIndex) -> f64 {
        self.values[self.spec.linear_index(idx)]
    }

    pub fn set(&mut self, idx: GridIndex, value: f64) -> Result<(), GridError> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(GridError::InvalidValue {
                index: self.spec.linear_index(idx),
                value,
            });
        }
        let i = self.spec.linear_index(idx);
        self.values[i] = value;
        Ok(())
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let n = self.spec.slice_len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn normalize(&mut self) -> Result<(), GridError> {
        let mass = self.total_mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(GridError::ZeroMass);
        }
        let inv = 1.0 / mass;
        self.values.iter_mut().for_each(|v| *v *= inv);
        Ok(())
    }

    /// Normalizes, falling back to the uniform prior when no mass is left.
    pub fn normalize_or_reset(&mut self) -> MassStatus {
        match self.normalize() {
            Ok(()) => MassStatus::Normalized,
            Err(_) => {
                log::warn!("likelihood volume lost all mass, resetting to uniform");
                let u = 1.0 / self.values.len() as f64;
                self.values.iter_mut().for_each(|v| *v = u);
                MassStatus::ResetToUniform
            }
        }
    }

    /// Global maximum; ties go to the lowest linear index.
    pub fn argmax(&self) -> GridIndex {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in self.values.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        self.spec.grid_index(best)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .values
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Sum over heading bins, giving an `[X][Y]` marginal.
    pub fn xy_marginal(&self) -> Vec<f64> {
        let n = self.spec.slice_len();
        let mut out = vec![0.0; n];
        for t in 0..self.spec.theta_bins {
            for (o, v) in out.iter_mut().zip(self.slice(t)) {
                *o += v;
            }
        }
        out
    }
}

/// Fuses an XY sensor likelihood, replicated over every heading bin, into
/// the volume in place.
pub fn bayes_update_in_place(
    vol: &mut LikelihoodVolume,
    sensor_xy: &Heatmap,
    epsilon_floor: f64,
) -> Result<MassStatus, GridError> {
    let spec = *vol.spec();
    if sensor_xy.width() != spec.x_bins || sensor_xy.height() != spec.y_bins {
        return Err(GridError::DimensionMismatch {
            expected: (1, spec.x_bins, spec.y_bins),
            found: (1, sensor_xy.width(), sensor_xy.height()),
        });
    }
    if let Some((index, &value)) = sensor_xy
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(GridError::InvalidValue { index, value });
    }
    let likelihood: Vec<f64> = sensor_xy
        .values()
        .iter()
        .map(|&s| s.max(epsilon_floor))
        .collect();
    let n = spec.slice_len();
    let partial: Vec<f64> = vol
        .values_mut()
        .par_chunks_mut(n)
        .map(|slice| {
            let mut s = 0.0;
            for (v, l) in slice.iter_mut().zip(&likelihood) {
                *v *= l;
                s += *v;
            }
            s
        })
        .collect();
    let mass: f64 = partial.iter().sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Ok(vol.normalize_or_reset());
    }
    let inv = 1.0 / mass;
    vol.values_mut()
        .par_chunks_mut(n)
        .for_each(|slice| slice.iter_mut().for_each(|v| *v *= inv));
    Ok(MassStatus::Normalized)
}

/// Pure form of [`bayes_update_in_place`] using the default likelihood floor.
pub fn bayes_update(
    prior: &LikelihoodVolume,
    sensor_xy: &Heatmap,
) -> Result<(LikelihoodVolume, MassStatus), GridError> {
    let mut out = prior.clone();
    let status = bayes_update_in_place(&mut out, sensor_xy, DEFAULT_EPSILON_FLOOR)?;
    Ok((out, status))
}

/// Mode-local Gaussian summary of a likelihood volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose2D,
    /// Spatial covariance (m²) of the windowed distribution, row-major `[[xx, xy], [yx, yy]]`.
    pub covariance: [[f64; 2]; 2],
    /// Angular deviation `sqrt(2(1 - R))` where `R` is the mean resultant length.
    pub circular_std: f64,
    pub argmax: GridIndex,
}

/// Summarises the mode containing the global argmax.
///
/// Cells within `window_radius` (Chebyshev, in cells) of the argmax are
/// weighted across all heading bins. Heading uses a circular mean; if the
/// resultant vanishes the argmax bin heading is returned instead.
pub fn extract_pose(
    vol: &LikelihoodVolume,
    window_radius: usize,
) -> Result<PoseEstimate, GridError> {
    let spec = vol.spec();
    let mass = vol.total_mass();
    if !(mass > 0.0) {
        return Err(GridError::ZeroMass);
    }
    if (mass - 1.0).abs() > 1e-6 {
        return Err(GridError::NotNormalized(mass));
    }
    let am = vol.argmax();
    let x_lo = am.x_idx.saturating_sub(window_radius);
    let x_hi = (am.x_idx + window_radius).min(spec.x_bins - 1);
    let y_lo = am.y_idx.saturating_sub(window_radius);
    let y_hi = (am.y_idx + window_radius).min(spec.y_bins - 1);

    let headings: Vec<(f64, f64)> = (0..spec.theta_bins)
        .map(|t| {
            let a = t as f64 * spec.res_theta;
            (a.cos(), a.sin())
        })
        .collect();

    // Offsets relative to the argmax cell keep the sums well conditioned.
    let (mut w, mut sx, mut sy, mut sxx, mut sxy, mut syy, mut sc, mut ss) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, &(c, s)) in headings.iter().enumerate() {
        let slice = vol.slice(t);
        let mut wt = 0.0;
        for ix in x_lo..=x_hi {
            let row = &slice[ix * spec.y_bins..(ix + 1) * spec.y_bins];
            let dx = (ix as f64 - am.x_idx as f64) * spec.res_x;
            for (iy, &p) in row.iter().enumerate().take(y_hi + 1).skip(y_lo) {
                if p == 0.0 {
                    continue;
                }
                let dy = (iy as f64 - am.y_idx as f64) * spec.res_y;
                wt += p;
                sx += p * dx;
                sy += p * dy;
                sxx += p * dx * dx;
                sxy += p * dx * dy;
                syy += p * dy * dy;
            }
        }
        w += wt;
        sc += wt * c;
        ss += wt * s;
    }
    if !(w > 0.0) {
        return Err(GridError::ZeroMass);
    }
    let mx = sx / w;
    let my = sy / w;
    let cxx = (sxx / w - mx * mx).max(0.0);
    let cyy = (syy / w - my * my).max(0.0);
    let cxy = sxy / w - mx * my;
    let resultant = sc.hypot(ss) / w;
    let theta = if resultant < MIN_RESULTANT {
        spec.bin_heading(am.t_idx)
    } else {
        ss.atan2(sc)
    };
    let circular_std = (2.0 * (1.0 - resultant.min(1.0))).sqrt();
    Ok(PoseEstimate {
        pose: Pose2D::new(spec.cell_x(am.x_idx) + mx, spec.cell_y(am.y_idx) + my, theta),
        covariance: [[cxx, cxy], [cxy, cyy]],
        circular_std,
        argmax: am,
    })
}
