//! Absolute trajectory error in the shared map frame (no alignment step).

use std::fmt::Write as _;

use thiserror::Error;

use crate::state_grid::{wrap_angle, Pose2D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trajectory record is empty")]
    Empty,
    #[error("length mismatch for {method}: expected {expected}, found {found}")]
    LengthMismatch {
        method: String,
        expected: usize,
        found: usize,
    },
    #[error("no runs to compare")]
    NoRuns,
}

/// Step-aligned ground-truth and estimated poses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pairs: Vec<(Pose2D, Pose2D)>,
}

impl TrajectoryRecord {
    pub fn new(gt: &[Pose2D], est: &[Pose2D]) -> Result<Self, EvalError> {
        if gt.len() != est.len() {
            return Err(EvalError::LengthMismatch {
                method: "record".into(),
                expected: gt.len(),
                found: est.len(),
            });
        }
        Ok(Self {
            pairs: gt.iter().copied().zip(est.iter().copied()).collect(),
        })
    }

    pub fn from_pairs(pairs: Vec<(Pose2D, Pose2D)>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(Pose2D, Pose2D)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Per-step translational errors in metres.
    pub fn errors(&self) -> Vec<f64> {
        self.pairs.iter().map(|(g, e)| g.distance(e)).collect()
    }
}

/// Population statistics of the translational error, plus heading RMSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsTable {
    pub rmse_m: f64,
    pub mean_m: f64,
    pub median_m: f64,
    pub std_m: f64,
    pub heading_rmse: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn ate(rec: &TrajectoryRecord) -> Result<MetricsTable, EvalError> {
    if rec.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = rec.len() as f64;
    let mut errors = rec.errors();
    let mean = errors.iter().sum::<f64>() / n;
    let mean_sq = errors.iter().map(|e| e * e).sum::<f64>() / n;
    let std = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    errors.sort_by(f64::total_cmp);
    let heading_sq = rec
        .pairs
        .iter()
        .map(|(g, e)| wrap_angle(e.theta - g.theta).powi(2))
        .sum::<f64>()
        / n;
    Ok(MetricsTable {
        rmse_m: mean_sq.sqrt(),
        mean_m: mean,
        median_m: median(&errors),
        std_m: std.sqrt(),
        heading_rmse: heading_sq.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun {
    pub method: String,
    pub metrics: MetricsTable,
}

/// Methods ordered by translational RMSE, best first. Ties keep input order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub runs: Vec<RankedRun>,
}

pub const REPORT_HEADER: &str = "method,rmse_m,mean_m,median_m,std_m,heading_rmse_rad";

impl ComparisonReport {
    pub fn best(&self) -> &RankedRun {
        &self.runs[0]
    }

    pub fn rank_of(&self, method: &str) -> Option<usize> {
        self.runs.iter().position(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.runs {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.method, m.rmse_m, m.mean_m, m.median_m, m.std_m, m.heading_rmse
            );
        }
        s
    }
}

/// Evaluates several methods against the same ground truth.
pub fn compare_runs(records: &[(String, TrajectoryRecord)]) -> Result<ComparisonReport, EvalError> {
    let first = records.first().ok_or(EvalError::NoRuns)?;
    let mut runs = Vec::with_capacity(records.len());
    for (method, rec) in records {
        if rec.len() != first.1.len() {
            return Err(EvalError::LengthMismatch {
                method: method.clone(),
                expected: first.1.len(),
                found: rec.len(),
            });
        }
        runs.push(RankedRun {
            method: method.clone(),
            metrics: ate(rec)?,
        });
    }
    runs.sort_by(|a, b| a.metrics.rmse_m.total_cmp(&b.metrics.rmse_m));
    Ok(ComparisonReport { runs })
}
