//! Multi-realization studies: forecast-time statistics, noise sweeps and
//! attractor reproduction, with their on-disk results.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{observe, random_initial_condition, simulate, ObservationModel, TimeSeries, Trajectory};
use crate::embedding::{
    average_mutual_information, build_delay_vectors, select_delay, select_embedding_dimension, DelayVectorSet,
    EmbeddingSearch,
};
use crate::enkf::{run_rafda_from, FilterConfig, RafdaRun};
use crate::evaluation::{attractor_stats, forecast_time, AttractorStats, ForecastScore, Histogram};
use crate::features::{free_run, sample_feature_params, EmbeddingMeta, FeatureParams, SurrogateModel, WeightMatrix};
use crate::io::{create_file, fmt_f64, read_json, write_json};
use crate::regression::{build_training_matrices, ridge_regression};
use crate::seeds::{realization_seed, stream_rng, Stream};
use crate::{RafdaError, Result};

/// Bin width of forecast-time histograms, in Lyapunov times.
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.25;
/// RK4 substeps per output step.
pub const DEFAULT_SUBSTEPS: usize = 10;
/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "RAFDA_THREADS";

/// Every scalar of a twin experiment. Missing keys take the defaults of
/// [`ExperimentConfig::default`]; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dt: f64,
    /// Observation noise variance.
    pub eta: f64,
    /// Model time discarded before recording.
    pub transient: f64,
    pub substeps: usize,
    /// Training pairs.
    #[serde(rename = "N")]
    pub n_train: usize,
    #[serde(rename = "D_r")]
    pub feature_dim: usize,
    pub w: f64,
    pub b: f64,
    #[serde(rename = "M")]
    pub members: usize,
    pub beta: f64,
    pub alpha: f64,
    /// Variance of the initial weight ensemble around the ridge solution.
    pub gamma: f64,
    pub theta: f64,
    pub lyapunov_max: f64,
    /// Embedding dimension; `null` selects it by false nearest neighbours.
    pub m: Option<usize>,
    /// Delay in samples; `null` selects it by mutual information.
    pub tau: Option<usize>,
    pub n_realizations: usize,
    pub seed: u64,
    /// Forecast window in Lyapunov times.
    pub validation_horizon: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dt: 0.02,
            eta: 0.2,
            transient: 40.0,
            substeps: DEFAULT_SUBSTEPS,
            n_train: 4000,
            feature_dim: 300,
            w: 0.005,
            b: 4.0,
            members: 300,
            beta: 2e-5,
            alpha: 1.0002,
            gamma: 0.01,
            theta: 40.0,
            lyapunov_max: 0.91,
            m: Some(3),
            tau: Some(10),
            n_realizations: 50,
            seed: 0,
            validation_horizon: 10.0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(RafdaError::Config(format!("`{name}` must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(RafdaError::Config(format!("`{name}` must be non-negative and finite, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(RafdaError::Config(format!("`{name}` must be at least {min}, got {v}")))
    }
}

impl ExperimentConfig {
    /// Defaults with the embedding left to automatic selection.
    pub fn auto_embedding() -> Self {
        ExperimentConfig {
            m: None,
            tau: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("dt", self.dt)?;
        non_negative("eta", self.eta)?;
        non_negative("transient", self.transient)?;
        at_least("substeps", self.substeps, 1)?;
        at_least("N", self.n_train, 1)?;
        at_least("D_r", self.feature_dim, 1)?;
        positive("w", self.w)?;
        non_negative("b", self.b)?;
        at_least("M", self.members, 2)?;
        non_negative("beta", self.beta)?;
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(RafdaError::Config(format!("`alpha` must be >= 1, got {}", self.alpha)));
        }
        non_negative("gamma", self.gamma)?;
        positive("theta", self.theta)?;
        positive("lyapunov_max", self.lyapunov_max)?;
        if let Some(m) = self.m {
            at_least("m", m, 1)?;
        }
        if let Some(tau) = self.tau {
            at_least("tau", tau, 1)?;
        }
        at_least("n_realizations", self.n_realizations, 1)?;
        positive("validation_horizon", self.validation_horizon)
    }

    /// Steps in `lyapunov_times` Lyapunov times, rounded up.
    pub fn steps_for(&self, lyapunov_times: f64) -> usize {
        (lyapunov_times / (self.lyapunov_max * self.dt) - 1e-9).ceil() as usize
    }

    pub fn validation_steps(&self) -> usize {
        self.steps_for(self.validation_horizon)
    }

    pub fn search(&self) -> EmbeddingSearch {
        EmbeddingSearch::default()
    }

    /// Samples generated for training: enough for `N` pairs under any
    /// embedding the search can return.
    fn training_samples(&self) -> usize {
        let s = self.search();
        let m = self.m.unwrap_or(s.m_max + 1);
        let tau = self.tau.unwrap_or(s.max_lag);
        self.n_train + 1 + (m.max(1) - 1) * tau
    }

    /// Hash of every field except `n_realizations`, tagging per-realization
    /// results so stale ones are recomputed.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.n_realizations = 1;
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RafdaError::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            RafdaError::Config(msg) => RafdaError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| RafdaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Twin-experiment data of one realization.
#[derive(Debug, Clone)]
pub struct RealizationData {
    /// Noisy observations of `x`.
    pub train: TimeSeries,
    pub truth_train: Trajectory,
    /// Initial condition of the validation run, on the attractor.
    pub validation_start: nalgebra::Vector3<f64>,
}

/// Draws the training run and its observation noise from the training
/// stream, and the validation initial condition from the validation stream.
pub fn realization_data(cfg: &ExperimentConfig, index: u64) -> Result<RealizationData> {
    let mut rng = stream_rng(cfg.seed, index, Stream::Training);
    let ic = random_initial_condition(&mut rng);
    let truth_train = simulate(&ic, cfg.dt, cfg.transient, cfg.substeps, cfg.training_samples())?;
    let obs = ObservationModel::lorenz_x(cfg.eta)?;
    let train = observe(&truth_train, &obs, &mut rng)?;

    let mut rng = stream_rng(cfg.seed, index, Stream::Validation);
    let ic = random_initial_condition(&mut rng);
    let validation_start = *simulate(&ic, cfg.dt, cfg.transient, cfg.substeps, 1)?
        .states
        .last()
        .expect("one state");
    Ok(RealizationData {
        train,
        truth_train,
        validation_start,
    })
}

/// `(m, tau)`: pinned values, or selected on the given scalar series.
pub fn resolve_embedding(cfg: &ExperimentConfig, series: &[f64]) -> Result<(usize, usize)> {
    let search = cfg.search();
    let tau = match cfg.tau {
        Some(t) => t,
        None => select_delay(&average_mutual_information(
            series,
            search.max_lag.min(series.len().saturating_sub(1)),
            search.bins,
        )?)?,
    };
    let m = match cfg.m {
        Some(m) => m,
        None => select_embedding_dimension(series, tau, search.m_max, search.threshold)?.0,
    };
    Ok((m, tau))
}

/// Clean delay vectors of the `x` component from `start`, `len` vectors long.
pub fn truth_delay_vectors(
    cfg: &ExperimentConfig,
    start: &nalgebra::Vector3<f64>,
    m: usize,
    tau: usize,
    len: usize,
) -> Result<DelayVectorSet> {
    let traj = simulate(start, cfg.dt, 0.0, cfg.substeps, len + (m - 1) * tau)?;
    build_delay_vectors(&traj.component(0), m, tau)
}

/// Outcome of the filter for one realization.
#[derive(Debug, Clone)]
pub enum FilterOutcome {
    Converged(Box<RafdaRun>),
    /// Step at which the filter diverged.
    Diverged(usize),
}

/// Both surrogates of one realization.
#[derive(Debug, Clone)]
pub struct TrainedRealization {
    pub index: u64,
    pub m: usize,
    pub tau: usize,
    pub params: FeatureParams,
    pub lr: WeightMatrix,
    pub rafda: FilterOutcome,
    pub data: RealizationData,
}

impl TrainedRealization {
    pub fn embedding(&self, dt: f64) -> EmbeddingMeta {
        EmbeddingMeta {
            m: self.m,
            tau: self.tau,
            dt,
            d: 1,
        }
    }

    pub fn lr_model(&self, dt: f64) -> Result<SurrogateModel> {
        SurrogateModel::new(self.params.clone(), self.lr.clone(), self.embedding(dt))
    }

    pub fn rafda_model(&self, dt: f64) -> Option<Result<SurrogateModel>> {
        match &self.rafda {
            FilterOutcome::Converged(run) => Some(SurrogateModel::new(
                self.params.clone(),
                run.weights.clone(),
                self.embedding(dt),
            )),
            FilterOutcome::Diverged(_) => None,
        }
    }
}

/// Data, embedding, feature draw, ridge fit and filter for one realization.
pub fn train_realization(cfg: &ExperimentConfig, index: u64) -> Result<TrainedRealization> {
    let data = realization_data(cfg, index)?;
    let (m, tau) = resolve_embedding(cfg, data.train.as_slice())?;
    let needed = cfg.n_train + 1 + (m - 1) * tau;
    let delays = build_delay_vectors(&data.train.truncated(needed), m, tau)?;

    let params = sample_feature_params(
        cfg.feature_dim,
        m,
        cfg.w,
        cfg.b,
        &mut stream_rng(cfg.seed, index, Stream::Features),
    )?;
    let tm = build_training_matrices(&delays, &params)?;
    let lr = ridge_regression(&tm, cfg.beta)?;

    let filter = FilterConfig::isotropic(m, cfg.eta, cfg.alpha, cfg.gamma, cfg.members)?;
    let mut rng = stream_rng(cfg.seed, index, Stream::Filter);
    let rafda = match run_rafda_from(&delays, &params, &filter, &lr, &mut rng) {
        Ok(run) => FilterOutcome::Converged(Box::new(run)),
        Err(RafdaError::FilterDiverged(d)) => {
            log::debug!("realization {index}: {d}");
            FilterOutcome::Diverged(d.step)
        }
        Err(e) => return Err(e),
    };
    Ok(TrainedRealization {
        index,
        m,
        tau,
        params,
        lr,
        rafda,
        data,
    })
}

/// Forecast of `weights` from the first validation vector, scored against
/// the rest.
pub fn score_forecast(
    cfg: &ExperimentConfig,
    weights: &WeightMatrix,
    params: &FeatureParams,
    validation: &[DVector<f64>],
) -> Result<ForecastScore> {
    let run = free_run(weights, params, &validation[0], validation.len() - 1)?;
    forecast_time(&run.states, validation, cfg.theta, cfg.dt, cfg.lyapunov_max)
}

/// Per-realization forecast times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub index: u64,
    pub seed: u64,
    pub eta: f64,
    pub tau_f_lr: f64,
    /// Zero when the filter diverged.
    pub tau_f_rafda: f64,
    pub diverged: bool,
    pub wall_ms: u64,
}

pub fn run_realization(cfg: &ExperimentConfig, index: u64) -> Result<RealizationResult> {
    let started = Instant::now();
    let trained = train_realization(cfg, index)?;
    let mut result = score_realization(cfg, &trained)?;
    result.wall_ms = started.elapsed().as_millis() as u64;
    Ok(result)
}

/// Forecast times of both surrogates of a trained realization; `wall_ms`
/// is left at zero.
pub fn score_realization(cfg: &ExperimentConfig, trained: &TrainedRealization) -> Result<RealizationResult> {
    let validation = truth_delay_vectors(
        cfg,
        &trained.data.validation_start,
        trained.m,
        trained.tau,
        cfg.validation_steps() + 1,
    )?
    .to_vecs();
    let tau_f_lr = score_forecast(cfg, &trained.lr, &trained.params, &validation)?.tau_f;
    let (tau_f_rafda, diverged) = match &trained.rafda {
        FilterOutcome::Converged(run) => (score_forecast(cfg, &run.weights, &trained.params, &validation)?.tau_f, false),
        FilterOutcome::Diverged(_) => (0.0, true),
    };
    Ok(RealizationResult {
        index: trained.index,
        seed: realization_seed(cfg.seed, trained.index),
        eta: cfg.eta,
        tau_f_lr,
        tau_f_rafda,
        diverged,
        wall_ms: 0,
    })
}

/// Location and shape of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
    /// Moment skewness `m3 / m2^{3/2}` (zero for a constant sample).
    pub skewness: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(RafdaError::NotEnoughPoints("statistics of an empty sample".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let std = if values.len() > 1 {
            (m2 * n / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
        Ok(Moments {
            mean,
            median,
            std,
            skewness,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub n: usize,
    pub eta: f64,
    pub lr: Moments,
    pub rafda: Moments,
    pub diverged: usize,
    /// `rafda.mean / lr.mean`
    pub ratio: f64,
}

impl StudySummary {
    pub fn from_results(results: &[RealizationResult]) -> Result<Self> {
        let lr: Vec<f64> = results.iter().map(|r| r.tau_f_lr).collect();
        let rafda: Vec<f64> = results.iter().map(|r| r.tau_f_rafda).collect();
        let lr = Moments::of(&lr)?;
        let rafda = Moments::of(&rafda)?;
        Ok(StudySummary {
            n: results.len(),
            eta: results[0].eta,
            lr,
            rafda,
            diverged: results.iter().filter(|r| r.diverged).count(),
            ratio: rafda.mean / lr.mean,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub results: Vec<RealizationResult>,
    pub summary: StudySummary,
    pub histogram_rafda: Histogram,
    pub histogram_lr: Histogram,
}

impl StudyOutcome {
    fn from_results(results: Vec<RealizationResult>) -> Result<Self> {
        let summary = StudySummary::from_results(&results)?;
        let rafda: Vec<f64> = results.iter().map(|r| r.tau_f_rafda).collect();
        let lr: Vec<f64> = results.iter().map(|r| r.tau_f_lr).collect();
        Ok(StudyOutcome {
            histogram_rafda: Histogram::new(&rafda, HISTOGRAM_BIN_WIDTH)?,
            histogram_lr: Histogram::new(&lr, HISTOGRAM_BIN_WIDTH)?,
            results,
            summary,
        })
    }
}

/// Worker count: `RAFDA_THREADS` when set to a positive integer, otherwise
/// the machine's parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| RafdaError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Serialize, Deserialize)]
struct PartFile {
    fingerprint: String,
    result: RealizationResult,
}

fn part_path(dir: &Path, index: u64) -> PathBuf {
    dir.join("parts").join(format!("r{index:06}.json"))
}

/// A finished realization persisted under `dir`, if it matches `cfg`.
fn load_part(dir: &Path, cfg: &ExperimentConfig, fingerprint: &str, index: u64) -> Option<RealizationResult> {
    let part: PartFile = read_json(&part_path(dir, index)).ok()?;
    (part.fingerprint == fingerprint && part.result.index == index && part.result.eta == cfg.eta).then_some(part.result)
}

fn store_part(dir: &Path, fingerprint: &str, result: &RealizationResult) -> Result<()> {
    let path = part_path(dir, result.index);
    let tmp = path.with_extension("json.tmp");
    write_json(
        &tmp,
        &PartFile {
            fingerprint: fingerprint.to_string(),
            result: result.clone(),
        },
    )?;
    fs::rename(&tmp, &path).map_err(|e| RafdaError::io(&path, e))
}

/// `n_realizations` independent realizations, in parallel, without
/// persistence.
pub fn run_ensemble_study(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    cfg.validate()?;
    let results = with_pool(|| {
        (0..cfg.n_realizations as u64)
            .into_par_iter()
            .map(|i| run_realization(cfg, i))
            .collect::<Result<Vec<_>>>()
    })??;
    StudyOutcome::from_results(results)
}

/// As [`run_ensemble_study`], persisting each realization under `dir` as it
/// finishes and reusing realizations already there, then writing the merged
/// results.
pub fn run_study_in(cfg: &ExperimentConfig, dir: &Path) -> Result<StudyOutcome> {
    cfg.validate()?;
    fs::create_dir_all(dir.join("parts")).map_err(|e| RafdaError::io(dir, e))?;
    cfg.save(&dir.join("config.json"))?;
    let fingerprint = cfg.fingerprint();
    let results = with_pool(|| {
        (0..cfg.n_realizations as u64)
            .into_par_iter()
            .map(|i| match load_part(dir, cfg, &fingerprint, i) {
                Some(r) => Ok(r),
                None => {
                    let r = run_realization(cfg, i)?;
                    log::info!(
                        "eta {} realization {i}: lr {:.3} rafda {:.3}{}",
                        cfg.eta,
                        r.tau_f_lr,
                        r.tau_f_rafda,
                        if r.diverged { " (diverged)" } else { "" }
                    );
                    store_part(dir, &fingerprint, &r)?;
                    Ok(r)
                }
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let outcome = StudyOutcome::from_results(results)?;
    write_study(dir, &outcome)?;
    Ok(outcome)
}

pub fn write_study(dir: &Path, outcome: &StudyOutcome) -> Result<()> {
    write_realizations_csv(&dir.join("realizations.csv"), &outcome.results)?;
    write_json(&dir.join("summary.json"), &outcome.summary)?;
    outcome.histogram_rafda.write_csv(&dir.join("histogram.csv"))?;
    outcome.histogram_lr.write_csv(&dir.join("histogram_lr.csv"))
}

pub fn write_realizations_csv(path: &Path, results: &[RealizationResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record(["seed", "eta", "tau_f_lr", "tau_f_rafda", "diverged", "wall_ms"])?;
    for r in results {
        w.write_record([
            r.seed.to_string(),
            fmt_f64(r.eta),
            fmt_f64(r.tau_f_lr),
            fmt_f64(r.tau_f_rafda),
            r.diverged.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| RafdaError::io(path, e))
}

/// Rows of a `realizations.csv`; the index is the row position.
pub fn read_realizations_csv(path: &Path) -> Result<Vec<RealizationResult>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let bad = |what: &str| RafdaError::Format {
        path: path.to_path_buf(),
        message: format!("bad {what}"),
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(bad("row width"));
        }
        let f = |k: usize| rec[k].parse::<f64>().map_err(|_| bad("number"));
        out.push(RealizationResult {
            index: i as u64,
            seed: rec[0].parse().map_err(|_| bad("seed"))?,
            eta: f(1)?,
            tau_f_lr: f(2)?,
            tau_f_rafda: f(3)?,
            diverged: rec[4].parse().map_err(|_| bad("diverged flag"))?,
            wall_ms: rec[5].parse().map_err(|_| bad("wall time"))?,
        });
    }
    Ok(out)
}

/// Forecast-time statistics at one noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub mean_lr: f64,
    pub std_lr: f64,
    pub mean_rafda: f64,
    pub std_rafda: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(create_file(path)?);
        w.write_record(["eta", "mean_lr", "std_lr", "mean_rafda", "std_rafda", "n"])?;
        for p in &self.points {
            w.write_record([
                fmt_f64(p.eta),
                fmt_f64(p.mean_lr),
                fmt_f64(p.std_lr),
                fmt_f64(p.mean_rafda),
                fmt_f64(p.std_rafda),
                p.n.to_string(),
            ])?;
        }
        w.flush().map_err(|e| RafdaError::io(path, e))
    }
}

fn check_grid(etas: &[f64]) -> Result<()> {
    if etas.is_empty() {
        return Err(RafdaError::InvalidArgument("noise sweep needs at least one eta".into()));
    }
    if etas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(RafdaError::InvalidArgument("eta values must be strictly increasing".into()));
    }
    Ok(())
}

fn sweep_point(summary: &StudySummary) -> SweepPoint {
    SweepPoint {
        eta: summary.eta,
        mean_lr: summary.lr.mean,
        std_lr: summary.lr.std,
        mean_rafda: summary.rafda.mean,
        std_rafda: summary.rafda.std,
        n: summary.n,
    }
}

/// One study per noise level; realization `i` shares its initial
/// conditions, feature draw and filter stream across levels.
pub fn run_noise_sweep(cfg: &ExperimentConfig, etas: &[f64]) -> Result<SweepResult> {
    check_grid(etas)?;
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let c = ExperimentConfig { eta, ..cfg.clone() };
        points.push(sweep_point(&run_ensemble_study(&c)?.summary));
    }
    Ok(SweepResult { points })
}

/// Directory of one noise level inside a sweep directory.
pub fn eta_dir(dir: &Path, eta: f64) -> PathBuf {
    dir.join(format!("eta_{eta:e}"))
}

/// Resumable [`run_noise_sweep`]: one study directory per noise level
/// plus `sweep.csv`.
pub fn run_noise_sweep_in(cfg: &ExperimentConfig, etas: &[f64], dir: &Path) -> Result<SweepResult> {
    check_grid(etas)?;
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| RafdaError::io(dir, e))?;
    cfg.save(&dir.join("config.json"))?;
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let c = ExperimentConfig { eta, ..cfg.clone() };
        points.push(sweep_point(&run_study_in(&c, &eta_dir(dir, eta))?.summary));
    }
    let sweep = SweepResult { points };
    sweep.write_csv(&dir.join("sweep.csv"))?;
    Ok(sweep)
}

/// Long-run statistics of both surrogates of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorTrial {
    pub index: u64,
    pub lr: AttractorStats,
    /// `None` when the filter diverged.
    pub rafda: Option<AttractorStats>,
}

/// Reference points in the attractor comparison.
pub const ATTRACTOR_REFERENCE_LEN: usize = 20_000;

/// Free runs of `lyapunov_times` from the first validation vector, compared
/// with a long clean run of the validation trajectory.
pub fn attractor_trial(cfg: &ExperimentConfig, index: u64, lyapunov_times: f64) -> Result<AttractorTrial> {
    attractor_trial_for(cfg, &train_realization(cfg, index)?, lyapunov_times)
}

pub fn attractor_trial_for(
    cfg: &ExperimentConfig,
    trained: &TrainedRealization,
    lyapunov_times: f64,
) -> Result<AttractorTrial> {
    let reference = truth_delay_vectors(
        cfg,
        &trained.data.validation_start,
        trained.m,
        trained.tau,
        ATTRACTOR_REFERENCE_LEN,
    )?
    .to_vecs();
    let steps = cfg.steps_for(lyapunov_times);
    let stats = |w: &WeightMatrix| attractor_stats(&free_run(w, &trained.params, &reference[0], steps)?, &reference);
    let lr = stats(&trained.lr)?;
    let rafda = match &trained.rafda {
        FilterOutcome::Converged(run) => Some(stats(&run.weights)?),
        FilterOutcome::Diverged(_) => None,
    };
    Ok(AttractorTrial {
        index: trained.index,
        lr,
        rafda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_train: 300,
            feature_dim: 40,
            members: 20,
            n_realizations: 3,
            validation_horizon: 2.0,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.feature_dim, 300);
        assert_eq!(cfg.members, 300);
        assert_eq!(cfg.n_train, 4000);
        assert_eq!(cfg.beta, 2e-5);
        assert_eq!(cfg.alpha, 1.0002);
        assert_eq!(cfg.validation_steps(), 550);
    }

    #[test]
    fn range_and_key_errors_name_the_field() {
        let e = ExperimentConfig::from_json_str(r#"{"eta": -1}"#).unwrap_err().to_string();
        assert!(e.contains("eta"), "{e}");
        let e = ExperimentConfig::from_json_str(r#"{"etta": 1}"#).unwrap_err().to_string();
        assert!(e.contains("etta"), "{e}");
        let e = ExperimentConfig::from_json_str(r#"{"M": 1}"#).unwrap_err().to_string();
        assert!(e.contains('M'), "{e}");
        assert!(ExperimentConfig::from_json_str("{").unwrap_err().is_usage());
    }

    #[test]
    fn symbol_keys() {
        let cfg = ExperimentConfig::from_json_str(r#"{"D_r": 10, "M": 4, "N": 7, "m": 3, "tau": 10}"#).unwrap();
        assert_eq!((cfg.feature_dim, cfg.members, cfg.n_train), (10, 4, 7));
        assert_eq!((cfg.m, cfg.tau), (Some(3), Some(10)));
        let round: ExperimentConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn pinned_embedding_bypasses_search() {
        let cfg = ExperimentConfig { m: Some(4), tau: Some(2), ..Default::default() };
        // a constant series would make the search fail
        assert_eq!(resolve_embedding(&cfg, &[1.0; 50]).unwrap(), (4, 2));
        assert!(resolve_embedding(&ExperimentConfig::auto_embedding(), &[1.0; 50]).is_err());
        let auto = ExperimentConfig::from_json_str(r#"{"m": null, "tau": null}"#).unwrap();
        assert_eq!(auto, ExperimentConfig::auto_embedding());
    }

    #[test]
    fn moments_of_known_samples() {
        let m = Moments::of(&[2.5]).unwrap();
        assert_eq!((m.mean, m.median, m.std, m.skewness), (2.5, 2.5, 0.0, 0.0));
        let m = Moments::of(&[1.0, 2.0, 3.0, 10.0]).unwrap();
        assert_relative_eq!(m.mean, 4.0);
        assert_relative_eq!(m.median, 2.5);
        assert_relative_eq!(m.std, (50.0f64 / 3.0).sqrt(), epsilon = 1e-14);
        // m2 = 12.5, m3 = (-27 - 8 - 1 + 216) / 4 = 45
        assert_relative_eq!(m.skewness, 45.0 / 12.5f64.powf(1.5), epsilon = 1e-14);
        assert!(Moments::of(&[]).is_err());
    }

    #[test]
    fn realization_is_deterministic() {
        let cfg = tiny();
        let mut a = run_realization(&cfg, 1).unwrap();
        let mut b = run_realization(&cfg, 1).unwrap();
        a.wall_ms = 0;
        b.wall_ms = 0;
        assert_eq!(a, b);
        assert!(a.tau_f_lr >= 0.0 && a.tau_f_rafda >= 0.0);
        let c = run_realization(&cfg, 2).unwrap();
        assert_ne!(a.seed, c.seed);
    }

    #[test]
    fn single_realization_summary() {
        let cfg = ExperimentConfig { n_realizations: 1, ..tiny() };
        let out = run_ensemble_study(&cfg).unwrap();
        let r = &out.results[0];
        assert_eq!(out.summary.n, 1);
        assert_eq!(out.summary.rafda.mean, r.tau_f_rafda);
        assert_eq!(out.summary.lr.median, r.tau_f_lr);
        assert_eq!(out.histogram_rafda.counts.iter().sum::<usize>(), 1);
    }

    #[test]
    fn extreme_noise_records_divergence() {
        let cfg = ExperimentConfig { eta: 1e9, n_realizations: 1, ..tiny() };
        let r = run_realization(&cfg, 0).unwrap();
        if r.diverged {
            assert_eq!(r.tau_f_rafda, 0.0);
        }
        assert!(r.tau_f_lr >= 0.0);
    }

    #[test]
    fn grid_must_increase() {
        assert!(check_grid(&[0.1, 0.1]).is_err());
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[0.2]).is_ok());
    }
}
