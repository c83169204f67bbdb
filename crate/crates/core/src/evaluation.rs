//! Forecast skill and long-run attractor statistics of surrogate runs.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::features::FreeRun;
use crate::io::{create_file, fmt_f64};
use crate::{RafdaError, Result};

/// Threshold on the relative squared forecast error.
pub const DEFAULT_THETA: f64 = 40.0;
/// Maximal Lyapunov exponent of Lorenz-63, used to convert to Lyapunov times.
pub const LORENZ_LYAPUNOV_MAX: f64 = 0.91;
/// Minimum length of runs entering [`attractor_stats`].
pub const MIN_ATTRACTOR_POINTS: usize = 1000;

const MIN_VALIDATION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastScore {
    /// Forecast time in Lyapunov times.
    pub tau_f: f64,
    pub raw_steps: usize,
    pub theta: f64,
    pub lyapunov_max: f64,
    pub dt: f64,
}

/// Relative squared error `||v - s||^2 / ||v||^2`, or `None` when the
/// validation vector is (numerically) zero.
pub fn relative_error(surrogate: &DVector<f64>, validation: &DVector<f64>) -> Option<f64> {
    let denom = validation.norm_squared();
    if denom.sqrt() < MIN_VALIDATION_NORM {
        return None;
    }
    Some((validation - surrogate).norm_squared() / denom)
}

/// Number of steps the surrogate run stays within `theta` of the validation
/// run, scanning forward from the shared initial point and stopping at the
/// first crossing.
///
/// A surrogate run shorter than the validation run (a truncated blow-up)
/// ends the scan at its last state.
pub fn forecast_time(
    surrogate_run: &[DVector<f64>],
    validation_run: &[DVector<f64>],
    theta: f64,
    dt: f64,
    lyapunov_max: f64,
) -> Result<ForecastScore> {
    if surrogate_run.is_empty() || validation_run.is_empty() {
        return Err(RafdaError::InvalidArgument("forecast time of an empty run".into()));
    }
    let horizon = surrogate_run.len().min(validation_run.len()) - 1;
    let mut raw_steps = horizon;
    for n in 0..=horizon {
        if let Some(e) = relative_error(&surrogate_run[n], &validation_run[n]) {
            if !(e <= theta) {
                raw_steps = n.saturating_sub(1);
                break;
            }
        }
    }
    Ok(ForecastScore {
        tau_f: raw_steps as f64 * dt * lyapunov_max,
        raw_steps,
        theta,
        lyapunov_max,
        dt,
    })
}

/// Componentwise statistics of a long surrogate run against a reference run
/// in delay coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorStats {
    pub points: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub reference_mean: Vec<f64>,
    pub reference_variance: Vec<f64>,
    /// `(mean - reference_mean) / reference_std`
    pub mean_offset: Vec<f64>,
    /// `variance / reference_variance - 1`
    pub variance_rel_diff: Vec<f64>,
    pub box_min: Vec<f64>,
    pub box_max: Vec<f64>,
    pub reference_box_min: Vec<f64>,
    pub reference_box_max: Vec<f64>,
    /// Fraction of run points inside the reference bounding box with its
    /// half-widths enlarged by 10%.
    pub occupancy: f64,
    /// False when the run blew up.
    pub valid: bool,
}

impl AttractorStats {
    /// Valid, with occupancy at least `min_occupancy` and every component
    /// variance within `variance_tol` (relative) of the reference.
    pub fn is_consistent(&self, min_occupancy: f64, variance_tol: f64) -> bool {
        self.valid
            && self.occupancy >= min_occupancy
            && self.variance_rel_diff.iter().all(|d| d.abs() <= variance_tol)
    }
}

fn moments(run: &[DVector<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let dim = run[0].len();
    let n = run.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for v in run {
        for k in 0..dim {
            mean[k] += v[k];
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for v in run {
        for k in 0..dim {
            var[k] += (v[k] - mean[k]).powi(2);
        }
    }
    var.iter_mut().for_each(|s| *s /= n - 1.0);
    (mean, var, lo, hi)
}

pub fn attractor_stats(run: &FreeRun, reference: &[DVector<f64>]) -> Result<AttractorStats> {
    let states = &run.states;
    if reference.len() < MIN_ATTRACTOR_POINTS {
        return Err(RafdaError::NotEnoughPoints(format!(
            "reference run has {} points, need {MIN_ATTRACTOR_POINTS}",
            reference.len()
        )));
    }
    if run.blow_up.is_none() && states.len() < MIN_ATTRACTOR_POINTS {
        return Err(RafdaError::NotEnoughPoints(format!(
            "surrogate run has {} points, need {MIN_ATTRACTOR_POINTS}",
            states.len()
        )));
    }
    if states.len() < 2 {
        return Err(RafdaError::NotEnoughPoints("surrogate run blew up immediately".into()));
    }
    let dim = reference[0].len();
    if states[0].len() != dim {
        return Err(RafdaError::DimensionMismatch {
            context: "surrogate vs reference delay dimension",
            expected: dim,
            got: states[0].len(),
        });
    }
    let (mean, variance, box_min, box_max) = moments(states);
    let (reference_mean, reference_variance, reference_box_min, reference_box_max) = moments(reference);

    let (inner_lo, inner_hi): (Vec<f64>, Vec<f64>) = (0..dim)
        .map(|k| {
            let centre = 0.5 * (reference_box_max[k] + reference_box_min[k]);
            let half = 0.5 * (reference_box_max[k] - reference_box_min[k]) * 1.1;
            (centre - half, centre + half)
        })
        .unzip();
    let inside = states
        .iter()
        .filter(|v| (0..dim).all(|k| v[k] >= inner_lo[k] && v[k] <= inner_hi[k]))
        .count();

    let mean_offset = (0..dim)
        .map(|k| (mean[k] - reference_mean[k]) / reference_variance[k].sqrt())
        .collect();
    let variance_rel_diff = (0..dim)
        .map(|k| variance[k] / reference_variance[k] - 1.0)
        .collect();

    Ok(AttractorStats {
        points: states.len(),
        mean,
        variance,
        reference_mean,
        reference_variance,
        mean_offset,
        variance_rel_diff,
        box_min,
        box_max,
        reference_box_min,
        reference_box_max,
        occupancy: inside as f64 / states.len() as f64,
        valid: run.blow_up.is_none(),
    })
}

/// Fixed-width histogram starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(RafdaError::InvalidArgument("bin width must be positive".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(RafdaError::InvalidArgument("histogram values must be finite and non-negative".into()));
        }
        let max = values.iter().copied().fold(0.0, f64::max);
        let bins = (max / bin_width).floor() as usize + 1;
        let mut counts = vec![0; bins];
        for &v in values {
            counts[((v / bin_width).floor() as usize).min(bins - 1)] += 1;
        }
        Ok(Histogram { bin_width, counts })
    }

    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as f64 * self.bin_width, (i + 1) as f64 * self.bin_width, c))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = create_file(path)?;
        let res = (|| {
            writeln!(f, "bin_left,bin_right,count")?;
            for (l, r, c) in self.bins() {
                writeln!(f, "{},{},{c}", fmt_f64(l), fmt_f64(r))?;
            }
            f.flush()
        })();
        res.map_err(|e| RafdaError::io(path, e))
    }
}
