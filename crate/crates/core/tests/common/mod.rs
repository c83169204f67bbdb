//! Reference implementations shared by the integration tests. They use
//! plain vectors and their own elimination so they share no code with the
//! library's nalgebra paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rafda::enkf::{analysis_update, AugmentedEnsemble};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }

    pub fn add_prod(self, a: f64, b: f64) -> Dd {
        let (p, e) = two_prod(a, b);
        self.add(Dd { hi: p, lo: e })
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Solves `a x = b` for every column of `b` by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n`, `b` row-major `n x k`.
pub fn gauss_solve(a: &[f64], b: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            for c in 0..k {
                x.swap(col * k + c, piv * k + c);
            }
        }
        let d = a[col * n + col];
        assert!(d != 0.0, "singular system");
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            for c in 0..k {
                x[r * k + c] -= f * x[col * k + c];
            }
        }
    }
    for col in (0..n).rev() {
        let d = a[col * n + col];
        for c in 0..k {
            let mut s = x[col * k + c];
            for j in col + 1..n {
                s -= a[col * n + j] * x[j * k + c];
            }
            x[col * k + c] = s / d;
        }
    }
    x
}

/// `W` solving `W (Phi Phi^T + beta I) = Z Phi^T`, with the normal equations
/// formed in double-double and the solve refined against them.
pub fn ridge_oracle(z: &DMatrix<f64>, phi: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let (dz, dr, n) = (z.nrows(), phi.nrows(), phi.ncols());
    // A = Phi Phi^T + beta I, B = Phi Z^T, both row-major
    let mut a = vec![Dd::default(); dr * dr];
    for i in 0..dr {
        for j in 0..dr {
            let mut s = Dd::from(if i == j { beta } else { 0.0 });
            for t in 0..n {
                s = s.add_prod(phi[(i, t)], phi[(j, t)]);
            }
            a[i * dr + j] = s;
        }
    }
    let mut b = vec![Dd::default(); dr * dz];
    for i in 0..dr {
        for r in 0..dz {
            let mut s = Dd::default();
            for t in 0..n {
                s = s.add_prod(phi[(i, t)], z[(r, t)]);
            }
            b[i * dz + r] = s;
        }
    }
    let a_hi: Vec<f64> = a.iter().map(|v| v.value()).collect();
    let mut x = gauss_solve(&a_hi, &b.iter().map(|v| v.value()).collect::<Vec<_>>(), dr, dz);
    for _ in 0..4 {
        let mut resid = vec![0.0; dr * dz];
        for i in 0..dr {
            for c in 0..dz {
                let mut s = b[i * dz + c];
                for j in 0..dr {
                    let (p, e) = two_prod(a[i * dr + j].hi, x[j * dz + c]);
                    s = s.add(Dd { hi: -p, lo: -e });
                    s = s.add_prod(-a[i * dr + j].lo, x[j * dz + c]);
                }
                resid[i * dz + c] = s.value();
            }
        }
        let dx = gauss_solve(&a_hi, &resid, dr, dz);
        x.iter_mut().zip(&dx).for_each(|(v, d)| *v += d);
    }
    // x holds W^T row-major (dr x dz)
    DMatrix::from_fn(dz, dr, |r, c| x[c * dz + r])
}

/// Stochastic EnKF analysis with the full `D_x x D_x` covariance of the
/// augmented ensemble `x` (columns are members; the first `dz` rows are
/// observed).
pub fn dense_analysis(
    x: &DMatrix<f64>,
    dz: usize,
    obs: &DVector<f64>,
    perturbations: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (dx, m) = (x.nrows(), x.ncols());
    let mean: Vec<f64> = (0..dx).map(|i| (0..m).map(|j| x[(i, j)]).sum::<f64>() / m as f64).collect();
    let mut p = vec![0.0; dx * dx];
    for i in 0..dx {
        for k in 0..dx {
            let mut s = 0.0;
            for j in 0..m {
                s += (x[(i, j)] - mean[i]) * (x[(k, j)] - mean[k]);
            }
            p[i * dx + k] = s / (m - 1) as f64;
        }
    }
    // S = H P H^T + Gamma; K^T = S^{-1} (P H^T)^T
    let mut s = vec![0.0; dz * dz];
    for i in 0..dz {
        for k in 0..dz {
            s[i * dz + k] = p[i * dx + k] + gamma[(i, k)];
        }
    }
    let mut pht_t = vec![0.0; dz * dx];
    for i in 0..dz {
        for k in 0..dx {
            pht_t[i * dx + k] = p[k * dx + i];
        }
    }
    // S is symmetric, so S^{-1} (P H^T)^T = (P H^T S^{-1})^T
    let kt = gauss_solve(&s, &pht_t, dz, dx);
    let mut out = x.clone();
    for j in 0..m {
        let innov: Vec<f64> = (0..dz).map(|r| x[(r, j)] - (obs[r] - perturbations[(r, j)])).collect();
        for i in 0..dx {
            let corr: f64 = (0..dz).map(|r| kt[r * dx + i] * innov[r]).sum();
            out[(i, j)] -= corr;
        }
    }
    out
}

/// One random instance for the blockwise/dense comparison.
pub struct AnalysisCase {
    pub ensemble: AugmentedEnsemble,
    pub obs: DVector<f64>,
    pub perturbations: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

pub fn random_analysis_case(seed: u64) -> AnalysisCase {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dz = rng.random_range(1..=3usize);
    let max_dr = 10 / dz - 1;
    let dr = rng.random_range(0..=max_dr);
    let m = rng.random_range(2..=5usize);
    let zeta = DMatrix::from_fn(dz, m, |_, _| rng.random_range(-3.0..3.0));
    let weights = DMatrix::from_fn(dz * dr, m, |_, _| rng.random_range(-2.0..2.0));
    let obs = DVector::from_fn(dz, |_, _| rng.random_range(-3.0..3.0));
    let perturbations = DMatrix::from_fn(dz, m, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
    let l = DMatrix::from_fn(dz, dz, |_, _| rng.random_range(-0.5..0.5));
    let gamma = &l * l.transpose() + DMatrix::identity(dz, dz) * rng.random_range(0.05..1.0);
    AnalysisCase {
        ensemble: AugmentedEnsemble::new(zeta, weights, dr).unwrap(),
        obs,
        perturbations,
        gamma,
    }
}

/// Largest absolute entry difference between the library's blockwise
/// analysis and the dense oracle, scaled by the largest entry.
pub fn analysis_discrepancy(case: &AnalysisCase) -> f64 {
    let (updated, _) = analysis_update(&case.ensemble, &case.obs, &case.perturbations, &case.gamma).unwrap();
    let dense = dense_analysis(
        &case.ensemble.augmented(),
        case.ensemble.state_dim(),
        &case.obs,
        &case.perturbations,
        &case.gamma,
    );
    let scale = dense.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    (updated.augmented() - dense).amax() / scale
}

/// Scalar linear-Gaussian twin: `x_{n+1} = a x_n + q^{1/2} xi`, observed
/// directly with variance `r`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarModel {
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
    pub steps: usize,
}

impl Default for ScalarModel {
    fn default() -> Self {
        ScalarModel {
            a: 0.9,
            q: 0.1,
            r: 0.5,
            m0: 1.0,
            p0: 1.0,
            steps: 10,
        }
    }
}

/// Observations of one truth run.
pub fn scalar_observations(model: &ScalarModel, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = model.m0 + model.p0.sqrt() * rng.sample::<f64, _>(StandardNormal);
    (0..model.steps)
        .map(|_| {
            x = model.a * x + model.q.sqrt() * rng.sample::<f64, _>(StandardNormal);
            x + model.r.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Exact Kalman filter mean and variance after the last observation.
pub fn kalman(model: &ScalarModel, obs: &[f64]) -> (f64, f64) {
    let (mut m, mut p) = (model.m0, model.p0);
    for &y in obs {
        let (mf, pf) = (model.a * m, model.a * model.a * p + model.q);
        let k = pf / (pf + model.r);
        m = mf + k * (y - mf);
        p = (1.0 - k) * pf;
    }
    (m, p)
}

/// Ensemble mean and variance of the library's stochastic analysis driven
/// through the same observations with `members` members.
pub fn enkf_scalar(model: &ScalarModel, obs: &[f64], members: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut normal = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
    let zeta = DMatrix::from_fn(1, members, |_, _| model.m0 + normal(model.p0.sqrt()));
    let mut ens = AugmentedEnsemble::new(zeta, DMatrix::zeros(0, members), 0).unwrap();
    let gamma = DMatrix::from_element(1, 1, model.r);
    for &y in obs {
        let zeta = ens.zeta_block().map(|v| model.a * v) + DMatrix::from_fn(1, members, |_, _| normal(model.q.sqrt()));
        let forecast = AugmentedEnsemble::new(zeta, DMatrix::zeros(0, members), 0).unwrap();
        let perturbations = DMatrix::from_fn(1, members, |_, _| normal(model.r.sqrt()));
        ens = analysis_update(&forecast, &DVector::from_element(1, y), &perturbations, &gamma)
            .unwrap()
            .0;
    }
    let z = ens.zeta_block();
    let mean = z.mean();
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (members - 1) as f64;
    (mean, var)
}

/// RMS error of the ensemble mean and variance against the Kalman values
/// over `trials` independent observation records and ensembles.
pub fn enkf_rms_error(model: &ScalarModel, members: usize, trials: usize) -> (f64, f64) {
    let (mut em, mut ev) = (0.0, 0.0);
    for t in 0..trials as u64 {
        let obs = scalar_observations(model, 1000 + t);
        let (km, kv) = kalman(model, &obs);
        let (m, v) = enkf_scalar(model, &obs, members, (members as u64) << 32 | t);
        em += (m - km).powi(2);
        ev += (v - kv).powi(2);
    }
    ((em / trials as f64).sqrt(), (ev / trials as f64).sqrt())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Random ridge instance with a comfortably conditioned Gram matrix.
pub fn random_ridge_case(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dz = rng.random_range(1..=3usize);
    let dr = rng.random_range(1..=12usize);
    let n = rng.random_range(2..=40usize);
    let beta = 10f64.powf(rng.random_range(-4.0..1.0));
    let z = DMatrix::from_fn(dz, n, |_, _| rng.random_range(-5.0..5.0));
    let phi = DMatrix::from_fn(dr, n, |_, _| rng.random_range(-1.0..1.0));
    (z, phi, beta)
}
