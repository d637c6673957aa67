//! XY sensor likelihoods: heatmaps, likelihood-band volumes and a synthetic
//! heatmap oracle standing in for a learned regressor.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state_grid::{GridError, GridSpec, Pose2D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid sensor value {value} at cell {index}")]
    InvalidValue { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("invalid band spec: {0}")]
    InvalidBandSpec(String),
    #[error("invalid oracle parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Nonnegative likelihood over the XY plane, stored `[X][Y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self, SensorError> {
        if values.len() != width * height {
            return Err(SensorError::DimensionMismatch {
                expected: (1, width, height),
                found: (1, values.len(), 1),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(SensorError::InvalidValue { index, value });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Width along x (the grid's X count).
    pub fn width(&self) -> usize {
        self.width
    }

    /// Height along y (the grid's Y count).
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.height + y]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        assert!(value.is_finite() && value >= 0.0, "heatmap values must be finite and >= 0");
        self.values[x * self.height + y] = value;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Cell with the highest value; ties go to the lowest linear index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.height, best % self.height)
    }

    /// Scaled so the peak is 1. An all-zero map is returned unchanged.
    pub fn peak_normalized(&self) -> Heatmap {
        let m = self.max();
        if m <= 0.0 {
            return self.clone();
        }
        Heatmap {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v / m).collect(),
        }
    }
}

/// Number of likelihood bands and how many of the top bands are summed on decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub n_bands: usize,
    pub top_n: usize,
}

impl BandSpec {
    pub fn new(n_bands: usize, top_n: usize) -> Result<Self, SensorError> {
        let s = Self { n_bands, top_n };
        s.validate()?;
        Ok(s)
    }

    /// `top_n = max(1, N / 4)`.
    pub fn with_default_top(n_bands: usize) -> Result<Self, SensorError> {
        Self::new(n_bands, (n_bands / 4).max(1))
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if self.n_bands < 2 {
            return Err(SensorError::InvalidBandSpec(format!(
                "need at least 2 bands, got {}",
                self.n_bands
            )));
        }
        if self.top_n == 0 || self.top_n >= self.n_bands {
            return Err(SensorError::InvalidBandSpec(format!(
                "top_n must satisfy 1 <= top_n < {}, got {}",
                self.n_bands, self.top_n
            )));
        }
        Ok(())
    }

    /// Band holding a peak-normalized likelihood `p`.
    pub fn band_of(&self, p: f64) -> usize {
        ((p * self.n_bands as f64).floor().max(0.0) as usize).min(self.n_bands - 1)
    }
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            n_bands: 10,
            top_n: 2,
        }
    }
}

/// Per-cell band scores, stored `[band][x][y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandVolume {
    n_bands: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl BandVolume {
    pub fn from_values(
        n_bands: usize,
        width: usize,
        height: usize,
        values: Vec<f64>,
    ) -> Result<Self, SensorError> {
        if n_bands < 2 {
            return Err(SensorError::InvalidBandSpec(format!(
                "band volume needs at least 2 bands, got {n_bands}"
            )));
        }
        if values.len() != n_bands * width * height {
            return Err(SensorError::DimensionMismatch {
                expected: (n_bands, width, height),
                found: (values.len(), 1, 1),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SensorError::InvalidValue { index, value });
        }
        Ok(Self {
            n_bands,
            width,
            height,
            values,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn score(&self, band: usize, x: usize, y: usize) -> f64 {
        self.values[(band * self.width + x) * self.height + y]
    }
}

/// One-hot band classification of a peak-normalized heatmap.
pub fn encode_bands(h: &Heatmap, spec: &BandSpec) -> Result<BandVolume, SensorError> {
    spec.validate()?;
    if let Some((index, &value)) = h
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(SensorError::InvalidValue { index, value });
    }
    let plane = h.width * h.height;
    let mut values = vec![0.0; spec.n_bands * plane];
    for (i, &p) in h.values().iter().enumerate() {
        values[spec.band_of(p) * plane + i] = 1.0;
    }
    BandVolume::from_values(spec.n_bands, h.width, h.height, values)
}

/// Softmax over bands, then the mass of the `top_n` highest bands per cell.
pub fn decode_bands(bv: &BandVolume, spec: &BandSpec) -> Result<Heatmap, SensorError> {
    spec.validate()?;
    if spec.n_bands != bv.n_bands {
        return Err(SensorError::DimensionMismatch {
            expected: (spec.n_bands, bv.width, bv.height),
            found: (bv.n_bands, bv.width, bv.height),
        });
    }
    let plane = bv.width * bv.height;
    let first_top = spec.n_bands - spec.top_n;
    let mut out = Vec::with_capacity(plane);
    let mut exps = vec![0.0; spec.n_bands];
    for i in 0..plane {
        let peak = (0..spec.n_bands)
            .map(|b| bv.values[b * plane + i])
            .fold(f64::NEG_INFINITY, f64::max);
        for (b, e) in exps.iter_mut().enumerate() {
            *e = (bv.values[b * plane + i] - peak).exp();
        }
        let total: f64 = exps.iter().sum();
        let top: f64 = exps[first_top..].iter().sum();
        out.push(top / total);
    }
    Heatmap::from_values(bv.width, bv.height, out)
}

/// Where an extra oracle mode appears.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistractorPlacement {
    /// Fixed map-frame translation from the true position.
    MapOffset { dx: f64, dy: f64 },
    /// Translation expressed in the vehicle frame (forward, left).
    BodyOffset { forward: f64, left: f64 },
    /// Fixed world position.
    Absolute { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distractor {
    pub placement: DistractorPlacement,
    /// Peak height relative to the true mode.
    pub weight: f64,
}

impl Distractor {
    pub fn position(&self, true_pose: &Pose2D) -> (f64, f64) {
        match self.placement {
            DistractorPlacement::MapOffset { dx, dy } => (true_pose.x + dx, true_pose.y + dy),
            DistractorPlacement::BodyOffset { forward, left } => {
                let (s, c) = true_pose.theta.sin_cos();
                (
                    true_pose.x + c * forward - s * left,
                    true_pose.y + s * forward + c * left,
                )
            }
            DistractorPlacement::Absolute { x, y } => (x, y),
        }
    }
}

/// Synthetic observation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    /// Spread (m) of each mode; `0` places a single-cell spike.
    pub sigma_obs: f64,
    #[serde(default)]
    pub distractors: Vec<Distractor>,
    /// Constant added to every cell.
    #[serde(default)]
    pub floor: f64,
    /// Probability that a frame carries no information (all-floor map).
    #[serde(default)]
    pub dropout_prob: f64,
}

impl OracleParams {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.sigma_obs.is_finite() && self.sigma_obs >= 0.0) {
            return Err(SensorError::InvalidParams("sigma_obs must be >= 0".into()));
        }
        if !(self.floor.is_finite() && self.floor >= 0.0) {
            return Err(SensorError::InvalidParams("floor must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(SensorError::InvalidParams("dropout_prob must lie in [0, 1]".into()));
        }
        if self.distractors.iter().any(|d| !(d.weight.is_finite() && d.weight >= 0.0)) {
            return Err(SensorError::InvalidParams("distractor weights must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            sigma_obs: 1.0,
            distractors: Vec::new(),
            floor: 0.01,
            dropout_prob: 0.0,
        }
    }
}

fn add_mode(map: &mut Heatmap, spec: &GridSpec, x: f64, y: f64, weight: f64, sigma: f64) {
    if weight == 0.0 {
        return;
    }
    if sigma <= 0.0 {
        if let Ok((ix, iy)) = spec.xy_index(x, y) {
            map.values[ix * map.height + iy] += weight;
        }
        return;
    }
    // Tails beyond 8σ underflow relative to the floor anyway.
    let reach = 8.0 * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let ix_lo = (((x - reach - spec.origin_x) / spec.res_x).floor().max(0.0)) as usize;
    let iy_lo = (((y - reach - spec.origin_y) / spec.res_y).floor().max(0.0)) as usize;
    let ix_hi = ((x + reach - spec.origin_x) / spec.res_x).ceil();
    let iy_hi = ((y + reach - spec.origin_y) / spec.res_y).ceil();
    if ix_hi < 0.0 || iy_hi < 0.0 {
        return;
    }
    let ix_hi = (ix_hi as usize).min(spec.x_bins - 1);
    let iy_hi = (iy_hi as usize).min(spec.y_bins - 1);
    for ix in ix_lo..=ix_hi {
        let dx = spec.cell_x(ix) - x;
        for iy in iy_lo..=iy_hi {
            let dy = spec.cell_y(iy) - y;
            map.values[ix * map.height + iy] += weight * (-(dx * dx + dy * dy) * inv).exp();
        }
    }
}

/// Renders a synthetic heatmap for `true_pose`: a unit-height mode at the
/// true position, weighted distractor modes and a constant floor. Dropout
/// frames contain the floor only.
pub fn oracle_observe<R: Rng + ?Sized>(
    true_pose: &Pose2D,
    spec: &GridSpec,
    params: &OracleParams,
    rng: &mut R,
) -> Result<Heatmap, SensorError> {
    params.validate()?;
    spec.xy_index(true_pose.x, true_pose.y)?;
    let dropped = rng.random::<f64>() < params.dropout_prob;
    let mut map = Heatmap::filled(spec.x_bins, spec.y_bins, params.floor);
    if dropped {
        return Ok(map);
    }
    add_mode(&mut map, spec, true_pose.x, true_pose.y, 1.0, params.sigma_obs);
    for d in &params.distractors {
        let (x, y) = d.position(true_pose);
        add_mode(&mut map, spec, x, y, d.weight, params.sigma_obs);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec::new(4, 40, 20, 1.0, 1.0, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn band_index_examples() {
        let s = BandSpec::new(10, 2).unwrap();
        assert_eq!(s.band_of(0.0), 0);
        assert_eq!(s.band_of(1.0), 9);
        assert_eq!(s.band_of(0.37), 3);
    }

    #[test]
    fn band_spec_validation() {
        assert!(BandSpec::new(1, 1).is_err());
        assert!(BandSpec::new(10, 10).is_err());
        assert!(BandSpec::new(10, 0).is_err());
        assert_eq!(BandSpec::with_default_top(10).unwrap().top_n, 2);
        assert_eq!(BandSpec::with_default_top(3).unwrap().top_n, 1);
    }

    #[test]
    fn encode_is_one_hot() {
        let h = Heatmap::from_values(1, 3, vec![0.0, 0.37, 1.0]).unwrap();
        let bv = encode_bands(&h, &BandSpec::new(10, 2).unwrap()).unwrap();
        for (y, band) in [(0, 0), (1, 3), (2, 9)] {
            for b in 0..10 {
                assert_eq!(bv.score(b, 0, y), if b == band { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn encode_rejects_negative() {
        let h = Heatmap {
            width: 1,
            height: 1,
            values: vec![-0.5],
        };
        assert!(matches!(
            encode_bands(&h, &BandSpec::default()),
            Err(SensorError::InvalidValue { .. })
        ));
    }

    #[test]
    fn decode_one_hot_top_band() {
        let s = BandSpec::new(10, 1).unwrap();
        let h = Heatmap::filled(1, 1, 1.0);
        let out = decode_bands(&encode_bands(&h, &s).unwrap(), &s).unwrap();
        let e = std::f64::consts::E;
        assert!((out.values()[0] - e / (e + 9.0)).abs() < 1e-15);
        assert!((out.values()[0] - 0.232).abs() < 1e-3);
    }

    #[test]
    fn decode_uniform_scores_exact() {
        for n in 2..12 {
            for top in 1..n {
                let s = BandSpec::new(n, top).unwrap();
                let bv = BandVolume::from_values(n, 2, 1, vec![0.7; 2 * n]).unwrap();
                let out = decode_bands(&bv, &s).unwrap();
                assert!(out.values().iter().all(|&v| v == top as f64 / n as f64));
            }
        }
    }

    #[test]
    fn decode_dimension_mismatch() {
        let bv = BandVolume::from_values(4, 1, 1, vec![0.0; 4]).unwrap();
        assert!(matches!(
            decode_bands(&bv, &BandSpec::new(5, 1).unwrap()),
            Err(SensorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn oracle_spike_at_true_cell() {
        let params = OracleParams {
            sigma_obs: 0.0,
            floor: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = oracle_observe(&Pose2D::new(7.2, 3.9, 0.3), &spec(), &params, &mut rng).unwrap();
        assert_eq!(h.get(7, 4), 1.0);
        assert_eq!(h.values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn oracle_equal_distractor_is_bimodal() {
        let params = OracleParams {
            sigma_obs: 1.5,
            floor: 0.0,
            distractors: vec![Distractor {
                placement: DistractorPlacement::MapOffset { dx: 20.0, dy: 0.0 },
                weight: 1.0,
            }],
            dropout_prob: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = oracle_observe(&Pose2D::new(10.0, 10.0, 0.0), &spec(), &params, &mut rng).unwrap();
        assert!((h.get(10, 10) - h.get(30, 10)).abs() < 1e-12);
        assert_eq!(h.argmax(), (10, 10));
    }

    #[test]
    fn oracle_dropout_is_floor_only() {
        let params = OracleParams {
            sigma_obs: 1.0,
            floor: 0.05,
            dropout_prob: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = oracle_observe(&Pose2D::new(5.0, 5.0, 0.0), &spec(), &params, &mut rng).unwrap();
        assert!(h.values().iter().all(|&v| v == 0.05));
    }

    #[test]
    fn oracle_out_of_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            oracle_observe(&Pose2D::new(-5.0, 5.0, 0.0), &spec(), &OracleParams::default(), &mut rng),
            Err(SensorError::Grid(GridError::OutOfBounds { .. }))
        ));
    }

    #[test]
    fn body_offset_rotates_with_heading() {
        let d = Distractor {
            placement: DistractorPlacement::BodyOffset {
                forward: 2.0,
                left: 0.0,
            },
            weight: 1.0,
        };
        let (x, y) = d.position(&Pose2D::new(1.0, 1.0, std::f64::consts::FRAC_PI_2));
        assert!((x - 1.0).abs() < 1e-12 && (y - 3.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_is_deterministic_per_seed() {
        let params = OracleParams {
            dropout_prob: 0.5,
            ..Default::default()
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .map(|_| oracle_observe(&Pose2D::new(5.0, 5.0, 0.0), &spec(), &params, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }
}
