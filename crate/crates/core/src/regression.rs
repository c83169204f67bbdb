//! Batch ridge regression of the output weights.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::embedding::DelayVectorSet;
use crate::features::{FeatureParams, Provenance, WeightMatrix};
use crate::{RafdaError, Result};

/// Refinement sweeps applied after the Cholesky solve.
const REFINEMENT_STEPS: usize = 2;

/// Targets `zeta_n` (n = 1..N) and features `phi(zeta_{n-1})`, column aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrices {
    /// `D_zeta x N`
    pub targets: DMatrix<f64>,
    /// `D_r x N`
    pub features: DMatrix<f64>,
}

impl TrainingMatrices {
    pub fn new(targets: DMatrix<f64>, features: DMatrix<f64>) -> Result<Self> {
        if targets.ncols() != features.ncols() {
            return Err(RafdaError::DimensionMismatch {
                context: "target vs feature column count",
                expected: targets.ncols(),
                got: features.ncols(),
            });
        }
        Ok(TrainingMatrices { targets, features })
    }

    pub fn pairs(&self) -> usize {
        self.targets.ncols()
    }

    /// `0.5 ||Z - W Phi||_F^2 + 0.5 beta ||W||_F^2`
    pub fn cost(&self, weights: &DMatrix<f64>, beta: f64) -> f64 {
        let resid = &self.targets - weights * &self.features;
        0.5 * resid.norm_squared() + 0.5 * beta * weights.norm_squared()
    }
}

pub fn build_training_matrices(delays: &DelayVectorSet, params: &FeatureParams) -> Result<TrainingMatrices> {
    if delays.len() < 2 {
        return Err(RafdaError::NotEnoughPoints(format!(
            "ridge regression needs at least 2 delay vectors, got {}",
            delays.len()
        )));
    }
    if delays.dim() != params.input_dim() {
        return Err(RafdaError::DimensionMismatch {
            context: "delay vector dimension vs feature map input",
            expected: params.input_dim(),
            got: delays.dim(),
        });
    }
    let n = delays.len() - 1;
    let z = delays.matrix();
    let targets = z.columns(1, n).into_owned();
    let mut features = DMatrix::zeros(params.feature_dim(), n);
    for col in 0..n {
        let input = z.column(col);
        params.map_into(input.as_slice(), features.column_mut(col).as_mut_slice());
    }
    TrainingMatrices::new(targets, features)
}

/// `W = Z Phi^T (Phi Phi^T + beta I)^{-1}` via a Cholesky solve of the
/// regularized Gram matrix, followed by iterative refinement.
pub fn ridge_regression(tm: &TrainingMatrices, beta: f64) -> Result<WeightMatrix> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(RafdaError::InvalidArgument(format!(
            "regularization must be non-negative, got {beta}"
        )));
    }
    if tm.targets.iter().chain(tm.features.iter()).any(|v| !v.is_finite()) {
        return Err(RafdaError::SolveFailed("training matrices contain non-finite values".into()));
    }
    let phi = &tm.features;
    let mut gram = phi * phi.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += beta;
    }
    // G W^T = (Z Phi^T)^T = Phi Z^T since G is symmetric
    let rhs = phi * tm.targets.transpose();
    let chol = Cholesky::<f64, Dyn>::new(gram.clone())
        .ok_or_else(|| RafdaError::SolveFailed("regularized Gram matrix is not positive definite".into()))?;
    let mut wt = chol.solve(&rhs);
    for _ in 0..REFINEMENT_STEPS {
        let resid = &rhs - &gram * &wt;
        wt += chol.solve(&resid);
    }
    if wt.iter().any(|v| !v.is_finite()) {
        return Err(RafdaError::SolveFailed("ridge solution is not finite".into()));
    }
    WeightMatrix::new(wt.transpose(), Provenance::Ridge)
}

/// `||W (Phi Phi^T + beta I) - Z Phi^T||_F / ||Z Phi^T||_F`
pub fn normal_equation_residual(tm: &TrainingMatrices, weights: &DMatrix<f64>, beta: f64) -> f64 {
    let phi = &tm.features;
    let rhs = &tm.targets * phi.transpose();
    let lhs = (weights * phi) * phi.transpose() + weights * beta;
    (lhs - &rhs).norm() / rhs.norm()
}
