//! Truth model, integrator and the partial noisy observation operator.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SVector, Vector3};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::io::{create_file, fmt_f64};
use crate::{RafdaError, Result};

/// State of the Lorenz-63 system, `(x, y, z)`.
pub type StateVector = Vector3<f64>;

pub const LORENZ_SIGMA: f64 = 10.0;
pub const LORENZ_RHO: f64 = 28.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;

/// Time derivative of the standard Lorenz-63 system with
/// `sigma = 10`, `rho = 28`, `beta = 8/3`.
pub fn lorenz63_rhs(state: &StateVector) -> StateVector {
    let (x, y, z) = (state.x, state.y, state.z);
    Vector3::new(
        LORENZ_SIGMA * (y - x),
        LORENZ_RHO * x - y - x * z,
        -LORENZ_BETA * z + x * y,
    )
}

/// Classical fourth-order Runge-Kutta over `n_steps` output intervals of
/// length `dt_out`, each split into `substeps` internal steps.
///
/// Returns `n_steps + 1` states, the first being `initial`.
pub fn integrate<const N: usize, F>(
    rhs: F,
    initial: &SVector<f64, N>,
    dt_out: f64,
    n_steps: usize,
    substeps: usize,
) -> Result<Vec<SVector<f64, N>>>
where
    F: Fn(&SVector<f64, N>) -> SVector<f64, N>,
{
    if !(dt_out > 0.0) || !dt_out.is_finite() {
        return Err(RafdaError::InvalidArgument(format!(
            "dt_out must be positive, got {dt_out}"
        )));
    }
    if substeps == 0 {
        return Err(RafdaError::InvalidArgument("substeps must be at least 1".into()));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(RafdaError::IntegrationDiverged { step: 0 });
    }

    let h = dt_out / substeps as f64;
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut u = *initial;
    out.push(u);
    for step in 1..=n_steps {
        for _ in 0..substeps {
            let k1 = rhs(&u);
            let k2 = rhs(&(u + k1 * (0.5 * h)));
            let k3 = rhs(&(u + k2 * (0.5 * h)));
            let k4 = rhs(&(u + k3 * h));
            u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(RafdaError::IntegrationDiverged { step });
        }
        out.push(u);
    }
    Ok(out)
}

/// A uniformly sampled sequence of states of the truth model.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<StateVector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Noise-free series of a single state component.
    pub fn component(&self, k: usize) -> TimeSeries {
        let data = self.states.iter().map(|s| s[k]).collect();
        TimeSeries::scalar(data, self.dt)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = create_file(path)?;
        let res = (|| {
            writeln!(f, "t,x,y,z")?;
            for (n, s) in self.states.iter().enumerate() {
                writeln!(
                    f,
                    "{},{},{},{}",
                    fmt_f64(n as f64 * self.dt),
                    fmt_f64(s.x),
                    fmt_f64(s.y),
                    fmt_f64(s.z)
                )?;
            }
            f.flush()
        })();
        res.map_err(|e| RafdaError::io(path, e))
    }
}

/// Uniformly sampled sequence of `dim`-vectors, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dim: usize,
    dt: f64,
    data: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dim: usize, dt: f64, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(RafdaError::InvalidArgument("series dimension must be positive".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(RafdaError::InvalidArgument(format!(
                "sampling interval must be positive, got {dt}"
            )));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(RafdaError::InvalidArgument(format!(
                "series needs a positive multiple of {dim} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(RafdaError::InvalidArgument("series contains non-finite values".into()));
        }
        Ok(TimeSeries { dim, dt, data })
    }

    /// Scalar series. Panics on invalid input; use [`TimeSeries::new`] for
    /// untrusted data.
    pub fn scalar(data: Vec<f64>, dt: f64) -> Self {
        TimeSeries::new(1, dt, data).expect("valid scalar series")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn value(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.data.iter().skip(k).step_by(self.dim).copied().collect()
    }

    /// First `len` samples.
    pub fn truncated(&self, len: usize) -> TimeSeries {
        let len = len.min(self.len());
        TimeSeries {
            dim: self.dim,
            dt: self.dt,
            data: self.data[..len * self.dim].to_vec(),
        }
    }

    /// Writes `t,<names...>`; components are named `y0, y1, ...` unless
    /// `names` is given.
    pub fn write_csv(&self, path: &Path, names: Option<&[&str]>) -> Result<()> {
        let header: Vec<String> = match names {
            Some(n) if n.len() == self.dim => n.iter().map(|s| s.to_string()).collect(),
            _ if self.dim == 1 => vec!["x".to_string()],
            _ => (0..self.dim).map(|k| format!("y{k}")).collect(),
        };
        let mut f = create_file(path)?;
        let res = (|| {
            writeln!(f, "t,{}", header.join(","))?;
            for n in 0..self.len() {
                let mut line = fmt_f64(n as f64 * self.dt);
                for v in self.value(n) {
                    line.push(',');
                    line.push_str(&fmt_f64(*v));
                }
                writeln!(f, "{line}")?;
            }
            f.flush()
        })();
        res.map_err(|e| RafdaError::io(path, e))
    }

    /// Reads a CSV with a header row and a leading time column; the sampling
    /// interval is taken from the first two time stamps (1 for a single row).
    pub fn read_csv(path: &Path) -> Result<TimeSeries> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => RafdaError::Format {
                    path: path.into(),
                    message: e.to_string(),
                },
                _ => RafdaError::Csv(e),
            })?;
        let ncols = reader.headers()?.len();
        if ncols < 2 {
            return Err(RafdaError::Format {
                path: path.into(),
                message: "expected a time column followed by at least one value column".into(),
            });
        }
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| RafdaError::Format {
                    path: path.into(),
                    message: format!("row {}: column {} is not a number: {field:?}", row + 2, col + 1),
                })?;
                if col == 0 {
                    times.push(v);
                } else {
                    data.push(v);
                }
            }
        }
        let dt = if times.len() >= 2 { times[1] - times[0] } else { 1.0 };
        TimeSeries::new(ncols - 1, dt, data).map_err(|e| RafdaError::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

/// Partial observation `y = G u + Gamma^{1/2} xi` with `xi` standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    projection: DMatrix<f64>,
    noise_covariance: DMatrix<f64>,
    noise_sqrt: DMatrix<f64>,
}

impl ObservationModel {
    /// Observation of the listed state components of a `state_dim`-dimensional
    /// system, with isotropic noise covariance `eta * I`.
    pub fn select(components: &[usize], state_dim: usize, eta: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(RafdaError::InvalidArgument("observe at least one component".into()));
        }
        let mut g = DMatrix::zeros(components.len(), state_dim);
        for (row, &k) in components.iter().enumerate() {
            if k >= state_dim {
                return Err(RafdaError::DimensionMismatch {
                    context: "observed component index",
                    expected: state_dim,
                    got: k,
                });
            }
            g[(row, k)] = 1.0;
        }
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(RafdaError::InvalidArgument(format!(
                "noise strength must be non-negative, got {eta}"
            )));
        }
        let gamma = DMatrix::identity(components.len(), components.len()) * eta;
        Self::new(g, gamma)
    }

    /// Lorenz-63 observed through its `x` component only.
    pub fn lorenz_x(eta: f64) -> Result<Self> {
        Self::select(&[0], 3, eta)
    }

    pub fn new(projection: DMatrix<f64>, noise_covariance: DMatrix<f64>) -> Result<Self> {
        let d = projection.nrows();
        for row in projection.row_iter() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(RafdaError::InvalidArgument(
                    "each projection row must select exactly one state component".into(),
                ));
            }
        }
        if noise_covariance.shape() != (d, d) {
            return Err(RafdaError::DimensionMismatch {
                context: "noise covariance size",
                expected: d,
                got: noise_covariance.nrows(),
            });
        }
        let noise_sqrt = symmetric_sqrt(&noise_covariance)?;
        Ok(ObservationModel {
            projection,
            noise_covariance,
            noise_sqrt,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.noise_covariance
    }
}

/// Symmetric (spectral) square root of a symmetric positive semi-definite
/// matrix.
pub fn symmetric_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(RafdaError::InvalidArgument("covariance must be square".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(RafdaError::InvalidArgument("covariance has non-finite entries".into()));
    }
    let n = a.nrows();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(RafdaError::InvalidArgument("covariance must be symmetric".into()));
            }
        }
    }
    // Diagonal covariances are by far the common case; keep them exact.
    if (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == 0.0)) {
        if (0..n).any(|i| a[(i, i)] < 0.0) {
            return Err(RafdaError::InvalidArgument("covariance has a negative eigenvalue".into()));
        }
        return Ok(DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| a[(i, i)].sqrt())));
    }
    let eig = a.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(RafdaError::InvalidArgument("covariance has a negative eigenvalue".into()));
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

/// Applies the observation model to every state of `trajectory`.
pub fn observe<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    model: &ObservationModel,
    rng: &mut R,
) -> Result<TimeSeries> {
    if model.state_dim() != 3 {
        return Err(RafdaError::DimensionMismatch {
            context: "projection columns vs trajectory state dimension",
            expected: 3,
            got: model.state_dim(),
        });
    }
    let d = model.obs_dim();
    let mut data = Vec::with_capacity(trajectory.len() * d);
    let mut xi = DVector::zeros(d);
    for state in &trajectory.states {
        let clean = &model.projection * state;
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let y = clean + &model.noise_sqrt * &xi;
        data.extend(y.iter());
    }
    TimeSeries::new(d, trajectory.dt, data)
}

/// Settings for one training/validation twin-experiment dataset.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub dt: f64,
    /// Model time discarded before recording.
    pub transient: f64,
    pub substeps: usize,
    pub train_len: usize,
    pub validation_len: usize,
    pub observation: ObservationModel,
}

impl DatasetConfig {
    /// Sampling and transient of the Lorenz-63 twin experiments, observing `x`.
    pub fn lorenz(eta: f64, train_len: usize, validation_len: usize) -> Result<Self> {
        Ok(DatasetConfig {
            dt: 0.02,
            transient: 40.0,
            substeps: 10,
            train_len,
            validation_len,
            observation: ObservationModel::lorenz_x(eta)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub train: TimeSeries,
    pub validation: TimeSeries,
    pub truth_train: Trajectory,
    pub truth_validation: Trajectory,
}

/// Random initial condition, uniform on `[-10, 10]^3`.
pub fn random_initial_condition<R: Rng + ?Sized>(rng: &mut R) -> StateVector {
    let u = Uniform::new_inclusive(-10.0, 10.0).expect("valid range");
    Vector3::new(rng.sample(u), rng.sample(u), rng.sample(u))
}

/// Integrates from `initial`, discards the transient and records `len` samples.
pub fn simulate(initial: &StateVector, dt: f64, transient: f64, substeps: usize, len: usize) -> Result<Trajectory> {
    if len == 0 {
        return Err(RafdaError::InvalidArgument("trajectory length must be positive".into()));
    }
    let skip = (transient / dt).round() as usize;
    let start = if skip > 0 {
        *integrate(lorenz63_rhs, initial, dt, skip, substeps)?
            .last()
            .expect("non-empty trajectory")
    } else {
        *initial
    };
    let states = integrate(lorenz63_rhs, &start, dt, len - 1, substeps)?;
    Ok(Trajectory { dt, states })
}

/// Training and validation data from independent random initial conditions.
///
/// The training trajectory is observed through `cfg.observation`; the
/// validation trajectory is observed with an independent noise draw, and both
/// noise-free trajectories are kept.
pub fn generate_dataset<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> Result<DatasetPair> {
    let ic_train = random_initial_condition(rng);
    let ic_valid = random_initial_condition(rng);
    let truth_train = simulate(&ic_train, cfg.dt, cfg.transient, cfg.substeps, cfg.train_len)?;
    let truth_validation = simulate(&ic_valid, cfg.dt, cfg.transient, cfg.substeps, cfg.validation_len)?;
    let train = observe(&truth_train, &cfg.observation, rng)?;
    let validation = observe(&truth_validation, &cfg.observation, rng)?;
    Ok(DatasetPair {
        train,
        validation,
        truth_train,
        truth_validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rhs_fixed_points() {
        let c = 72f64.sqrt();
        for p in [
            Vector3::zeros(),
            Vector3::new(c, c, 27.0),
            Vector3::new(-c, -c, 27.0),
        ] {
            assert!(lorenz63_rhs(&p).norm() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn rhs_at_ones() {
        let r = lorenz63_rhs(&Vector3::new(1.0, 1.0, 1.0));
        // 10(1-1), 28-1-1, -8/3+1
        assert_eq!(r.x, 0.0);
        assert_eq!(r.y, 26.0);
        assert_relative_eq!(r.z, -8.0 / 3.0 + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exponential_one_step() {
        let traj = integrate(|u: &SVector<f64, 1>| *u, &SVector::<f64, 1>::new(1.0), 0.1, 1, 1).unwrap();
        assert_eq!(traj.len(), 2);
        // RK4 local error for u' = u is h^5/120.
        assert!((traj[1][0] - 0.1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn zero_steps_returns_initial() {
        let u0 = Vector3::new(1.0, 2.0, 3.0);
        let traj = integrate(lorenz63_rhs, &u0, 0.02, 0, 10).unwrap();
        assert_eq!(traj, vec![u0]);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |substeps: usize| {
            let traj = integrate(|u: &SVector<f64, 1>| *u, &SVector::<f64, 1>::new(1.0), 1.0, 1, substeps).unwrap();
            (traj[1][0] - 1f64.exp()).abs()
        };
        let ratio = err(8) / err(16);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
        // global error ~ h^4 within a factor 2 over a decade of h
        let (e1, e10) = (err(4), err(40));
        let scaled = e1 / e10 / 1e4;
        assert!((0.5..2.0).contains(&scaled), "{scaled}");
    }

    #[test]
    fn divergence_is_reported() {
        let err = integrate(|u: &SVector<f64, 1>| SVector::<f64, 1>::new(u[0] * u[0]), &SVector::<f64, 1>::new(1.0), 0.5, 10, 1)
            .unwrap_err();
        assert!(matches!(err, RafdaError::IntegrationDiverged { step } if step >= 1));
    }

    #[test]
    fn bad_integration_arguments() {
        let u0 = Vector3::new(1.0, 1.0, 1.0);
        assert!(integrate(lorenz63_rhs, &u0, 0.0, 1, 1).is_err());
        assert!(integrate(lorenz63_rhs, &u0, 0.02, 1, 0).is_err());
    }

    #[test]
    fn absorbing_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let u0 = Vector3::new(
                rng.random_range(-25.0..25.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(0.0..60.0),
            );
            let traj = integrate(lorenz63_rhs, &u0, 0.02, 5000, 10).unwrap();
            for s in traj {
                assert!(s.x.abs() <= 40.0 && s.y.abs() <= 50.0 && (-5.0..=80.0).contains(&s.z), "{s:?}");
            }
        }
    }

    #[test]
    fn noise_free_observation_is_projection() {
        let traj = simulate(&Vector3::new(1.0, 1.0, 1.0), 0.02, 1.0, 10, 50).unwrap();
        let model = ObservationModel::lorenz_x(0.0).unwrap();
        let obs = observe(&traj, &model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(obs.len(), 50);
        for (n, s) in traj.states.iter().enumerate() {
            assert_eq!(obs.value(n)[0], s.x);
        }
    }

    #[test]
    fn observation_noise_variance() {
        let traj = simulate(&Vector3::new(1.0, 1.0, 1.0), 0.02, 5.0, 10, 20_000).unwrap();
        let model = ObservationModel::lorenz_x(0.2).unwrap();
        let obs = observe(&traj, &model, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let resid: Vec<f64> = traj.states.iter().zip(obs.as_slice()).map(|(s, y)| y - s.x).collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        assert!((var - 0.2).abs() < 0.02, "{var}");
    }

    #[test]
    fn observation_is_deterministic_per_seed() {
        let traj = simulate(&Vector3::new(1.0, 1.0, 1.0), 0.02, 1.0, 10, 100).unwrap();
        let model = ObservationModel::lorenz_x(0.2).unwrap();
        let a = observe(&traj, &model, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = observe(&traj, &model, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn projection_must_match_state() {
        let model = ObservationModel::select(&[0], 4, 0.1).unwrap();
        let traj = simulate(&Vector3::new(1.0, 1.0, 1.0), 0.02, 0.0, 10, 5).unwrap();
        assert!(matches!(
            observe(&traj, &model, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(RafdaError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection_rows_validated() {
        let g = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        assert!(ObservationModel::new(g, DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn spectral_sqrt_of_full_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = symmetric_sqrt(&a).unwrap();
        assert_relative_eq!(&s * &s, a, epsilon = 1e-12);
        assert!(symmetric_sqrt(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn zero_transient_starts_at_initial_condition() {
        let u0 = Vector3::new(3.0, -2.0, 20.0);
        let traj = simulate(&u0, 0.02, 0.0, 10, 10).unwrap();
        assert_eq!(traj.states[0], u0);
    }

    #[test]
    fn dataset_shapes_and_independence() {
        let cfg = DatasetConfig::lorenz(0.2, 4000 + 21, 551).unwrap();
        let a = generate_dataset(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate_dataset(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.train.len(), 4021);
        assert_eq!(a.validation.len(), 551);
        assert_ne!(a.truth_train.states[0], a.truth_validation.states[0]);
        assert_ne!(a.truth_train.states[0], b.truth_train.states[0]);
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = TimeSeries::scalar(vec![0.1, 1.0 / 3.0, -2e-9], 0.02);
        s.write_csv(&path, None).unwrap();
        let back = TimeSeries::read_csv(&path).unwrap();
        assert_eq!(back.as_slice(), s.as_slice());
        assert_relative_eq!(back.dt(), 0.02, epsilon = 1e-15);
    }
}
