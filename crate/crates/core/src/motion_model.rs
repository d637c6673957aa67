//! Rotation-translation-rotation odometry, noise injection and the per-channel
//! displacement bookkeeping that feeds the odometry kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::state_grid::{wrap_angle, GridSpec, Pose2D};

/// Translations shorter than this are treated as pure rotations.
const MIN_TRANSLATION: f64 = 1e-12;

/// Accumulated values this close to an integer are snapped onto it, so that
/// rotation round-off (e.g. `cos(π/2)`) cannot emit a spurious `-1` shift.
const SNAP_TOLERANCE: f64 = 1e-12;

/// Odometry step as rotate, drive forward, rotate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotTransRot {
    pub d_theta1: f64,
    /// Forward translation in metres, negative when reversing.
    pub d_x: f64,
    pub d_theta2: f64,
}

impl RotTransRot {
    pub fn new(d_theta1: f64, d_x: f64, d_theta2: f64) -> Self {
        Self {
            d_theta1: wrap_angle(d_theta1),
            d_x,
            d_theta2: wrap_angle(d_theta2),
        }
    }

    pub fn total_rotation(&self) -> f64 {
        self.d_theta1 + self.d_theta2
    }
}

/// Odometry noise coefficients: rotation from rotation, rotation from
/// translation, translation from translation, translation from rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl NoiseParams {
    pub fn is_valid(&self) -> bool {
        [self.a1, self.a2, self.a3, self.a4]
            .iter()
            .all(|a| a.is_finite() && *a >= 0.0)
    }

    /// Std of the first and second rotations (radians) and the translation (metres).
    pub fn stds(&self, m: &RotTransRot) -> (f64, f64, f64) {
        let rot_sq = m.d_theta1 * m.d_theta1 + m.d_theta2 * m.d_theta2;
        let tr_sq = m.d_x * m.d_x;
        (
            (self.a1 * m.d_theta1 * m.d_theta1 + self.a2 * tr_sq).sqrt(),
            (self.a3 * tr_sq + self.a4 * rot_sq).sqrt(),
            (self.a1 * m.d_theta2 * m.d_theta2 + self.a2 * tr_sq).sqrt(),
        )
    }
}

/// Planar displacement plus total heading change.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionVector {
    pub s_x: f64,
    pub s_y: f64,
    pub d_theta: f64,
}

/// Motion expressed in each heading channel, in cell units.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedMotionSet {
    pub per_channel: Vec<MotionVector>,
}

/// Integer cell shift `(x, y, θ)` for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellShift {
    pub x: i64,
    pub y: i64,
    pub theta: i64,
}

pub fn decompose_motion(prev: &Pose2D, curr: &Pose2D) -> RotTransRot {
    let dx = curr.x - prev.x;
    let dy = curr.y - prev.y;
    let trans = dx.hypot(dy);
    if trans < MIN_TRANSLATION {
        return RotTransRot::new(0.0, 0.0, curr.theta - prev.theta);
    }
    let rot1 = wrap_angle(dy.atan2(dx) - prev.theta);
    let rot2 = wrap_angle(curr.theta - prev.theta - rot1);
    RotTransRot {
        d_theta1: rot1,
        d_x: trans,
        d_theta2: rot2,
    }
}

/// Applies an odometry step to a pose.
pub fn compose(pose: &Pose2D, m: &RotTransRot) -> Pose2D {
    let heading = pose.theta + m.d_theta1;
    Pose2D::new(
        pose.x + m.d_x * heading.cos(),
        pose.y + m.d_x * heading.sin(),
        heading + m.d_theta2,
    )
}

/// Draws a noisy copy of `motion` with variances scaled by `noise`.
pub fn sample_noisy<R: Rng + ?Sized>(
    motion: &RotTransRot,
    noise: &NoiseParams,
    rng: &mut R,
) -> RotTransRot {
    let (s1, st, s2) = noise.stds(motion);
    let mut draw = |mean: f64, std: f64| {
        let z: f64 = StandardNormal.sample(rng);
        if std > 0.0 {
            mean + std * z
        } else {
            mean
        }
    };
    let d_theta1 = draw(motion.d_theta1, s1);
    let d_x = draw(motion.d_x, st);
    let d_theta2 = draw(motion.d_theta2, s2);
    RotTransRot::new(d_theta1, d_x, d_theta2)
}

pub fn sample_noisy_seeded(motion: &RotTransRot, noise: &NoiseParams, seed: u64) -> RotTransRot {
    sample_noisy(motion, noise, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Rotates the forward motion into every heading channel and converts it to
/// cell units.
pub fn rotate_and_scale(motion: &RotTransRot, spec: &GridSpec) -> RotatedMotionSet {
    let fx = motion.d_x * motion.d_theta1.cos();
    let fy = motion.d_x * motion.d_theta1.sin();
    let d_theta = motion.total_rotation() / spec.res_theta;
    let per_channel = (0..spec.theta_bins)
        .map(|c| {
            let (s, co) = (c as f64 * spec.res_theta).sin_cos();
            MotionVector {
                s_x: (co * fx - s * fy) / spec.res_x,
                s_y: (s * fx + co * fy) / spec.res_y,
                d_theta,
            }
        })
        .collect();
    RotatedMotionSet { per_channel }
}

/// Fractional displacement carried between updates, per channel `(x, y, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionAccumulator {
    residual: Vec<[f64; 3]>,
}

fn split(total: f64) -> (i64, f64) {
    let nearest = total.round();
    if (total - nearest).abs() < SNAP_TOLERANCE {
        return (nearest as i64, 0.0);
    }
    let whole = total.floor();
    let frac = total - whole;
    if frac >= 1.0 {
        (whole as i64 + 1, 0.0)
    } else {
        (whole as i64, frac)
    }
}

impl MotionAccumulator {
    pub fn new(theta_bins: usize) -> Self {
        Self {
            residual: vec![[0.0; 3]; theta_bins],
        }
    }

    pub fn residual(&self) -> &[[f64; 3]] {
        &self.residual
    }

    pub fn channels(&self) -> usize {
        self.residual.len()
    }

    /// Adds one step, returning the whole-cell shift to apply per channel and
    /// keeping the fractional remainder in `[0, 1)`.
    pub fn accumulate(&mut self, step: &RotatedMotionSet) -> Vec<CellShift> {
        assert_eq!(
            step.per_channel.len(),
            self.residual.len(),
            "motion set and accumulator channel counts differ"
        );
        self.residual
            .iter_mut()
            .zip(&step.per_channel)
            .map(|(r, m)| {
                let (ix, fx) = split(r[0] + m.s_x);
                let (iy, fy) = split(r[1] + m.s_y);
                let (it, ft) = split(r[2] + m.d_theta);
                *r = [fx, fy, ft];
                CellShift {
                    x: ix,
                    y: iy,
                    theta: it,
                }
            })
            .collect()
    }
}
