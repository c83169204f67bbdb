//! Sequential learning of the output weights with a stochastic ensemble
//! Kalman filter over the augmented state `x = (zeta, w)`.
//!
//! Each member carries a delay vector and a full copy of the flattened output
//! matrix (row-major: the first `D_r` entries are the first row of `W`). The
//! forecast propagates the delay vector with the member's own surrogate and
//! leaves the weights unchanged; the analysis assimilates the next observed
//! delay vector with perturbed observations. Since the observation operator
//! only selects the `zeta` block, the gain is assembled from the
//! `zeta`-`zeta` and `w`-`zeta` covariance blocks and the full augmented
//! covariance is never formed.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::symmetric_sqrt;
use crate::embedding::DelayVectorSet;
use crate::features::{FeatureParams, Provenance, WeightMatrix};
use crate::io::{create_file, fmt_f64};
use crate::regression::{build_training_matrices, ridge_regression};
use crate::{RafdaError, Result};

/// State spread (trace of the state covariance) beyond which the filter is
/// declared divergent.
pub const DIVERGENCE_SPREAD: f64 = 1e8;

/// Joint ensemble of delay vectors and flattened output weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEnsemble {
    /// `D_zeta x M`
    zeta: DMatrix<f64>,
    /// `(D_zeta * D_r) x M`
    weights: DMatrix<f64>,
    feature_dim: usize,
}

impl AugmentedEnsemble {
    pub fn new(zeta: DMatrix<f64>, weights: DMatrix<f64>, feature_dim: usize) -> Result<Self> {
        if zeta.ncols() < 2 {
            return Err(RafdaError::InvalidArgument("an ensemble needs at least 2 members".into()));
        }
        if weights.ncols() != zeta.ncols() {
            return Err(RafdaError::DimensionMismatch {
                context: "weight block members vs state block members",
                expected: zeta.ncols(),
                got: weights.ncols(),
            });
        }
        if weights.nrows() != zeta.nrows() * feature_dim {
            return Err(RafdaError::DimensionMismatch {
                context: "weight block rows vs D_zeta * D_r",
                expected: zeta.nrows() * feature_dim,
                got: weights.nrows(),
            });
        }
        Ok(AugmentedEnsemble {
            zeta,
            weights,
            feature_dim,
        })
    }

    pub fn members(&self) -> usize {
        self.zeta.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.zeta.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Dimension of the augmented state, `D_zeta (1 + D_r)`.
    pub fn augmented_dim(&self) -> usize {
        self.zeta.nrows() + self.weights.nrows()
    }

    pub fn zeta_block(&self) -> &DMatrix<f64> {
        &self.zeta
    }

    pub fn weight_block(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Applies the observation operator, which selects the state block.
    pub fn observed(&self) -> &DMatrix<f64> {
        &self.zeta
    }

    /// Weight part of member `i` as a `D_zeta x D_r` matrix.
    pub fn member_weights(&self, i: usize) -> DMatrix<f64> {
        unflatten(self.weights.column(i).as_slice(), self.state_dim(), self.feature_dim)
    }

    /// Ensemble mean of the weight block, reshaped to `D_zeta x D_r`.
    pub fn mean_weights(&self) -> DMatrix<f64> {
        let mean = self.weights.column_mean();
        unflatten(mean.as_slice(), self.state_dim(), self.feature_dim)
    }

    pub fn mean_state(&self) -> DVector<f64> {
        self.zeta.column_mean()
    }

    /// Stacks the blocks into the full `D_x x M` ensemble matrix.
    pub fn augmented(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.augmented_dim(), self.members());
        x.rows_mut(0, self.state_dim()).copy_from(&self.zeta);
        x.rows_mut(self.state_dim(), self.weights.nrows()).copy_from(&self.weights);
        x
    }

    pub fn is_finite(&self) -> bool {
        self.zeta.iter().chain(self.weights.iter()).all(|v| v.is_finite())
    }

    /// Trace of the empirical state-block covariance.
    pub fn state_spread(&self) -> f64 {
        spread(&self.zeta)
    }

    /// Trace of the empirical weight-block covariance.
    pub fn weight_spread(&self) -> f64 {
        spread(&self.weights)
    }
}

fn spread(block: &DMatrix<f64>) -> f64 {
    let mean = member_mean(block);
    let total: f64 = members_of(block)
        .map(|col| col.iter().zip(&mean).map(|(v, mu)| (v - mu) * (v - mu)).sum::<f64>())
        .sum();
    total / (block.ncols() - 1) as f64
}

fn members_of(block: &DMatrix<f64>) -> std::slice::ChunksExact<'_, f64> {
    block.as_slice().chunks_exact(block.nrows().max(1))
}

/// Mean over columns, as a plain vector.
fn member_mean(block: &DMatrix<f64>) -> Vec<f64> {
    let mut mean = vec![0.0; block.nrows()];
    for col in members_of(block) {
        for (acc, v) in mean.iter_mut().zip(col) {
            *acc += v;
        }
    }
    let inv = 1.0 / block.ncols() as f64;
    mean.iter_mut().for_each(|v| *v *= inv);
    mean
}

/// Row-major flattening of a `D_zeta x D_r` matrix.
pub fn flatten(w: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(w.len(), w.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

pub fn unflatten(w: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, w)
}

fn subtract_row_means(block: &mut DMatrix<f64>) -> DVector<f64> {
    let mean = block.column_mean();
    for mut col in block.column_iter_mut() {
        col -= &mean;
    }
    mean
}

/// Filter settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Observation covariance of a delay vector, `I_m (x) Gamma`.
    gamma_dc: DMatrix<f64>,
    gamma_dc_sqrt: DMatrix<f64>,
    /// Multiplicative covariance inflation.
    pub alpha: f64,
    /// Variance of the initial weight perturbations.
    pub gamma_init: f64,
    pub members: usize,
}

impl FilterConfig {
    pub fn new(gamma_dc: DMatrix<f64>, alpha: f64, gamma_init: f64, members: usize) -> Result<Self> {
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(RafdaError::InvalidArgument(format!("inflation must be >= 1, got {alpha}")));
        }
        if !(gamma_init >= 0.0) || !gamma_init.is_finite() {
            return Err(RafdaError::InvalidArgument(format!(
                "initial weight spread must be non-negative, got {gamma_init}"
            )));
        }
        if members < 2 {
            return Err(RafdaError::InvalidArgument("an ensemble needs at least 2 members".into()));
        }
        let gamma_dc_sqrt = symmetric_sqrt(&gamma_dc)?;
        Ok(FilterConfig {
            gamma_dc,
            gamma_dc_sqrt,
            alpha,
            gamma_init,
            members,
        })
    }

    /// Delay-vector covariance `I_m (x) Gamma` for a `d x d` observation
    /// covariance `Gamma` and embedding dimension `m`.
    pub fn from_observation_covariance(
        gamma: &DMatrix<f64>,
        m: usize,
        alpha: f64,
        gamma_init: f64,
        members: usize,
    ) -> Result<Self> {
        let d = gamma.nrows();
        let mut dc = DMatrix::zeros(d * m, d * m);
        for lag in 0..m {
            dc.view_mut((lag * d, lag * d), (d, d)).copy_from(gamma);
        }
        FilterConfig::new(dc, alpha, gamma_init, members)
    }

    /// Isotropic observation noise `eta I` on `state_dim`-dimensional delay
    /// vectors.
    pub fn isotropic(state_dim: usize, eta: f64, alpha: f64, gamma_init: f64, members: usize) -> Result<Self> {
        FilterConfig::new(DMatrix::identity(state_dim, state_dim) * eta, alpha, gamma_init, members)
    }

    pub fn gamma_dc(&self) -> &DMatrix<f64> {
        &self.gamma_dc
    }

    pub fn state_dim(&self) -> usize {
        self.gamma_dc.nrows()
    }

    /// Independent `N(0, Gamma_dc)` draws, one column per member.
    pub fn draw_perturbations<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let xi = DMatrix::from_fn(self.state_dim(), self.members, |_, _| rng.sample(StandardNormal));
        &self.gamma_dc_sqrt * xi
    }
}

/// Members `zeta ~ N(zeta0, Gamma_dc)` and `w ~ N(w_LR, gamma_init I)`.
pub fn init_ensemble<R: Rng + ?Sized>(
    zeta0: &DVector<f64>,
    w_lr: &WeightMatrix,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<AugmentedEnsemble> {
    let dz = zeta0.len();
    if dz != cfg.state_dim() || w_lr.matrix.nrows() != dz {
        return Err(RafdaError::DimensionMismatch {
            context: "initial delay vector vs filter / weight dimension",
            expected: cfg.state_dim(),
            got: dz,
        });
    }
    let dr = w_lr.matrix.ncols();
    let mut zeta = cfg.draw_perturbations(rng);
    for mut col in zeta.column_iter_mut() {
        col += zeta0;
    }
    let w_mean = flatten(&w_lr.matrix);
    let sd = cfg.gamma_init.sqrt();
    let mut weights = DMatrix::zeros(dz * dr, cfg.members);
    for mut col in weights.column_iter_mut() {
        for (v, &mu) in col.iter_mut().zip(w_mean.iter()) {
            let xi: f64 = rng.sample(StandardNormal);
            *v = mu + sd * xi;
        }
    }
    AugmentedEnsemble::new(zeta, weights, dr)
}

/// Propagates each member's delay vector with its own surrogate; weights
/// persist.
pub fn forecast_step(ens: &AugmentedEnsemble, params: &FeatureParams) -> Result<AugmentedEnsemble> {
    let mut out = ens.clone();
    forecast_in_place(&mut out, params)?;
    Ok(out)
}

fn forecast_in_place(ens: &mut AugmentedEnsemble, params: &FeatureParams) -> Result<()> {
    let (dz, dr) = (ens.state_dim(), ens.feature_dim);
    if params.input_dim() != dz || params.feature_dim() != dr {
        return Err(RafdaError::DimensionMismatch {
            context: "feature map vs ensemble dimensions",
            expected: dz * dr,
            got: params.input_dim() * params.feature_dim(),
        });
    }
    let mut phi = vec![0.0; dr];
    for i in 0..ens.members() {
        params.map_into(ens.zeta.column(i).as_slice(), &mut phi);
        let w = ens.weights.column(i);
        let w = w.as_slice();
        let mut col = ens.zeta.column_mut(i);
        for r in 0..dz {
            let row = &w[r * dr..(r + 1) * dr];
            col[r] = row.iter().zip(&phi).map(|(a, b)| a * b).sum();
        }
    }
    if ens.zeta.iter().any(|v| !v.is_finite()) {
        return Err(RafdaError::NonFinite("forecast"));
    }
    Ok(())
}

/// Scales deviations from the ensemble mean by `sqrt(alpha)`, so the
/// empirical covariance of the whole augmented state scales by `alpha`.
pub fn apply_inflation(ens: &AugmentedEnsemble, alpha: f64) -> Result<AugmentedEnsemble> {
    let mut out = ens.clone();
    inflate_in_place(&mut out, alpha)?;
    Ok(out)
}

fn inflate_in_place(ens: &mut AugmentedEnsemble, alpha: f64) -> Result<()> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(RafdaError::InvalidArgument(format!("inflation must be >= 1, got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(());
    }
    let scale = alpha.sqrt();
    for block in [&mut ens.zeta, &mut ens.weights] {
        let mean = member_mean(block);
        let rows = block.nrows().max(1);
        for col in block.as_mut_slice().chunks_exact_mut(rows) {
            for (v, &mu) in col.iter_mut().zip(&mean) {
                *v = mu + (*v - mu) * scale;
            }
        }
    }
    Ok(())
}

/// Per-step filter record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `||mean(zeta_f) - zeta_obs||`
    pub innovation_norm: f64,
    /// Trace of the analysis state covariance.
    pub state_spread: f64,
    /// Trace of the analysis weight covariance.
    pub weight_spread: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterDiagnostics {
    pub records: Vec<StepRecord>,
    pub diverged_at: Option<usize>,
}

impl FilterDiagnostics {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = create_file(path)?;
        let res = (|| {
            writeln!(f, "step,innovation_norm,state_spread,weight_spread,diverged")?;
            for r in &self.records {
                writeln!(
                    f,
                    "{},{},{},{},{}",
                    r.step,
                    fmt_f64(r.innovation_norm),
                    fmt_f64(r.state_spread),
                    fmt_f64(r.weight_spread),
                    r.diverged as u8
                )?;
            }
            f.flush()
        })();
        res.map_err(|e| RafdaError::io(path, e))
    }
}

/// Stochastic analysis with freshly drawn observation perturbations.
pub fn analysis_step<R: Rng + ?Sized>(
    ens_forecast: &AugmentedEnsemble,
    obs: &DVector<f64>,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<(AugmentedEnsemble, StepRecord)> {
    let perturbations = cfg.draw_perturbations(rng);
    let mut out = ens_forecast.clone();
    let record = analysis_in_place(&mut out, obs, &perturbations, cfg.gamma_dc())?;
    Ok((out, record))
}

/// Analysis with given perturbations `eta_i`; the perturbed observations are
/// `zeta_obs - eta_i`.
pub fn analysis_update(
    ens_forecast: &AugmentedEnsemble,
    obs: &DVector<f64>,
    perturbations: &DMatrix<f64>,
    gamma_dc: &DMatrix<f64>,
) -> Result<(AugmentedEnsemble, StepRecord)> {
    let mut out = ens_forecast.clone();
    let record = analysis_in_place(&mut out, obs, perturbations, gamma_dc)?;
    Ok((out, record))
}

fn analysis_in_place(
    ens: &mut AugmentedEnsemble,
    obs: &DVector<f64>,
    perturbations: &DMatrix<f64>,
    gamma_dc: &DMatrix<f64>,
) -> Result<StepRecord> {
    let (dz, m) = (ens.state_dim(), ens.members());
    if obs.len() != dz || perturbations.shape() != (dz, m) || gamma_dc.shape() != (dz, dz) {
        return Err(RafdaError::DimensionMismatch {
            context: "observation / perturbation / covariance vs ensemble state",
            expected: dz,
            got: obs.len(),
        });
    }
    let norm = 1.0 / (m - 1) as f64;

    let mut z_dev = ens.zeta.clone();
    let z_mean = subtract_row_means(&mut z_dev);

    // W Zdev^T equals the centred product up to the rounding left in the
    // row sums of Zdev, which the rank-one term removes
    let z_dev_t = z_dev.transpose();
    let p_zz = &z_dev * &z_dev_t * norm;
    let w_mean = DVector::from_vec(member_mean(&ens.weights));
    let z_dev_sums = z_dev.column_sum();
    let mut p_wz = &ens.weights * &z_dev_t;
    p_wz.ger(-1.0, &w_mean, &z_dev_sums, 1.0);
    p_wz *= norm;

    let innovation_norm = (&z_mean - obs).norm();

    // H X - Z_p with Z_p = obs - eta
    let mut innovations = ens.zeta.clone() + perturbations;
    for mut col in innovations.column_iter_mut() {
        col -= obs;
    }

    let s = &p_zz + gamma_dc;
    let chol = Cholesky::<f64, Dyn>::new(s)
        .ok_or_else(|| RafdaError::SolveFailed("innovation covariance is not positive definite".into()))?;
    let v = chol.solve(&innovations);

    ens.zeta.gemm(-1.0, &p_zz, &v, 1.0);
    ens.weights.gemm(-1.0, &p_wz, &v, 1.0);

    if !ens.is_finite() {
        return Err(RafdaError::NonFinite("analysis"));
    }
    let state_spread = ens.state_spread();
    Ok(StepRecord {
        step: 0,
        innovation_norm,
        state_spread,
        weight_spread: ens.weight_spread(),
        diverged: !(state_spread <= DIVERGENCE_SPREAD),
    })
}

/// Result of a completed filter run.
#[derive(Debug, Clone)]
pub struct RafdaRun {
    /// Ensemble mean of the final weight block.
    pub weights: WeightMatrix,
    /// Ridge solution used to centre the initial ensemble.
    pub ridge: WeightMatrix,
    pub diagnostics: FilterDiagnostics,
}

/// Payload of a divergent filter run.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub step: usize,
    /// Mean weights of the last ensemble that passed all checks.
    pub last_weights: WeightMatrix,
    pub diagnostics: FilterDiagnostics,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "filter diverged at step {}", self.step)
    }
}

/// Ridge initialization followed by sequential assimilation of every
/// delay vector after the first.
pub fn run_rafda<R: Rng + ?Sized>(
    observations: &DelayVectorSet,
    params: &FeatureParams,
    cfg: &FilterConfig,
    beta: f64,
    rng: &mut R,
) -> Result<RafdaRun> {
    let tm = build_training_matrices(observations, params)?;
    let w_lr = ridge_regression(&tm, beta)?;
    run_rafda_from(observations, params, cfg, &w_lr, rng)
}

/// Filter run with a given initial weight estimate.
pub fn run_rafda_from<R: Rng + ?Sized>(
    observations: &DelayVectorSet,
    params: &FeatureParams,
    cfg: &FilterConfig,
    w_lr: &WeightMatrix,
    rng: &mut R,
) -> Result<RafdaRun> {
    if observations.is_empty() {
        return Err(RafdaError::NotEnoughPoints("no delay vectors to assimilate".into()));
    }
    let mut ens = init_ensemble(&observations.column(0), w_lr, cfg, rng)?;
    let mut diagnostics = FilterDiagnostics::default();
    let (dz, dr) = (ens.state_dim(), ens.feature_dim());
    let mut last_good = ens.weights.column_mean();

    for n in 1..observations.len() {
        let outcome = (|| {
            forecast_in_place(&mut ens, params)?;
            inflate_in_place(&mut ens, cfg.alpha)?;
            let perturbations = cfg.draw_perturbations(rng);
            analysis_in_place(&mut ens, &observations.column(n), &perturbations, cfg.gamma_dc())
        })();
        match outcome {
            Ok(mut record) => {
                record.step = n;
                diagnostics.records.push(record);
                if record.diverged {
                    return Err(diverged(n, unflatten(last_good.as_slice(), dz, dr), diagnostics));
                }
                last_good = ens.weights.column_mean();
            }
            Err(RafdaError::NonFinite(_)) | Err(RafdaError::SolveFailed(_)) => {
                diagnostics.records.push(StepRecord {
                    step: n,
                    innovation_norm: f64::NAN,
                    state_spread: f64::NAN,
                    weight_spread: f64::NAN,
                    diverged: true,
                });
                return Err(diverged(n, unflatten(last_good.as_slice(), dz, dr), diagnostics));
            }
            Err(e) => return Err(e),
        }
    }

    Ok(RafdaRun {
        weights: WeightMatrix::new(unflatten(last_good.as_slice(), dz, dr), Provenance::Rafda)?,
        ridge: w_lr.clone(),
        diagnostics,
    })
}

fn diverged(step: usize, last_good: DMatrix<f64>, mut diagnostics: FilterDiagnostics) -> RafdaError {
    diagnostics.diverged_at = Some(step);
    RafdaError::FilterDiverged(Box::new(Divergence {
        step,
        last_weights: WeightMatrix {
            matrix: last_good,
            provenance: Provenance::Rafda,
        },
        diagnostics,
    }))
}
