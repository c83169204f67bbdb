//! Delay-coordinate reconstruction.
//!
//! The delay is chosen from the average mutual information between the series
//! and its lagged copy (first local minimum, falling back to the first drop
//! below `1/e` of the lag-one value). The dimension is the smallest one whose
//! fraction of false nearest neighbours falls below a threshold.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::TimeSeries;
use crate::{RafdaError, Result};

/// Default histogram resolution for the mutual information estimate.
pub const DEFAULT_AMI_BINS: usize = 16;
/// Distance growth beyond which a nearest neighbour is declared false.
pub const FNN_DISTANCE_RATIO: f64 = 10.0;
/// Default acceptance threshold on the false-neighbour fraction.
pub const FNN_THRESHOLD: f64 = 0.10;

const MIN_NEIGHBOUR_DISTANCE: f64 = 1e-12;

/// Delay vectors stored as the columns of a `D_zeta x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayVectorSet {
    vectors: DMatrix<f64>,
    m: usize,
    tau: usize,
    d: usize,
}

impl DelayVectorSet {
    pub fn from_matrix(vectors: DMatrix<f64>, m: usize, tau: usize, d: usize) -> Result<Self> {
        if vectors.nrows() != m * d {
            return Err(RafdaError::DimensionMismatch {
                context: "delay vector rows vs m * d",
                expected: m * d,
                got: vectors.nrows(),
            });
        }
        Ok(DelayVectorSet { vectors, m, tau, d })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn column(&self, n: usize) -> DVector<f64> {
        self.vectors.column(n).into_owned()
    }

    /// Number of delay vectors.
    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    /// Dimension of each delay vector, `d * m`.
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn obs_dim(&self) -> usize {
        self.d
    }

    /// The first `n` delay vectors.
    pub fn truncated(&self, n: usize) -> DelayVectorSet {
        let n = n.min(self.len());
        DelayVectorSet {
            vectors: self.vectors.columns(0, n).into_owned(),
            ..*self
        }
    }

    pub fn to_vecs(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|n| self.column(n)).collect()
    }
}

/// Column `n` is `(y_n, y_{n+tau}, ..., y_{n+(m-1)tau})`; for multivariate
/// series each lag contributes a block of `d` consecutive components.
pub fn build_delay_vectors(series: &TimeSeries, m: usize, tau: usize) -> Result<DelayVectorSet> {
    if m == 0 || tau == 0 {
        return Err(RafdaError::InvalidArgument(format!(
            "embedding needs m >= 1 and tau >= 1, got m = {m}, tau = {tau}"
        )));
    }
    let span = (m - 1) * tau;
    if series.len() < span + 1 {
        return Err(RafdaError::SeriesTooShort {
            len: series.len(),
            m,
            tau,
        });
    }
    let d = series.dim();
    let n = series.len() - span;
    let vectors = DMatrix::from_fn(d * m, n, |row, col| {
        let (lag, k) = (row / d, row % d);
        series.value(col + lag * tau)[k]
    });
    Ok(DelayVectorSet { vectors, m, tau, d })
}

fn bin_index(v: f64, min: f64, width: f64, bins: usize) -> usize {
    (((v - min) / width) as usize).min(bins - 1)
}

/// Mutual information (nats) between `y_n` and `y_{n+lag}` for every lag in
/// `0..=max_lag`, from a `bins x bins` histogram of equal-width cells spanning
/// the range of the series.
pub fn average_mutual_information(series: &[f64], max_lag: usize, bins: usize) -> Result<Vec<(usize, f64)>> {
    if bins < 2 {
        return Err(RafdaError::InvalidArgument("need at least 2 histogram bins".into()));
    }
    if max_lag >= series.len() {
        return Err(RafdaError::InvalidArgument(format!(
            "max_lag {max_lag} must be smaller than the series length {}",
            series.len()
        )));
    }
    let (min, max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(max > min) {
        return Err(RafdaError::ZeroEntropy);
    }
    let width = (max - min) / bins as f64;
    let cells: Vec<usize> = series.iter().map(|&v| bin_index(v, min, width, bins)).collect();

    let mut curve = Vec::with_capacity(max_lag + 1);
    let mut joint = vec![0usize; bins * bins];
    let mut left = vec![0usize; bins];
    let mut right = vec![0usize; bins];
    for lag in 0..=max_lag {
        joint.iter_mut().for_each(|c| *c = 0);
        left.iter_mut().for_each(|c| *c = 0);
        right.iter_mut().for_each(|c| *c = 0);
        let pairs = series.len() - lag;
        for n in 0..pairs {
            let (a, b) = (cells[n], cells[n + lag]);
            joint[a * bins + b] += 1;
            left[a] += 1;
            right[b] += 1;
        }
        let total = pairs as f64;
        let mut mi = 0.0;
        for a in 0..bins {
            for b in 0..bins {
                let c = joint[a * bins + b];
                if c > 0 {
                    let p = c as f64 / total;
                    let pa = left[a] as f64 / total;
                    let pb = right[b] as f64 / total;
                    mi += p * (p / (pa * pb)).ln();
                }
            }
        }
        curve.push((lag, mi));
    }
    Ok(curve)
}

/// Lag of the first strict local minimum of the mutual information curve,
/// or else the first lag whose value drops below `1/e` of the lag-one value.
pub fn select_delay(ami_curve: &[(usize, f64)]) -> Result<usize> {
    if ami_curve.len() < 3 {
        return Err(RafdaError::InvalidArgument(
            "mutual information curve needs at least 3 points".into(),
        ));
    }
    for w in ami_curve.windows(3) {
        if w[1].1 < w[0].1 && w[1].1 < w[2].1 {
            return Ok(w[1].0);
        }
    }
    let cutoff = ami_curve[1].1 / std::f64::consts::E;
    ami_curve[2..]
        .iter()
        .find(|(_, v)| *v < cutoff)
        .map(|(lag, _)| *lag)
        .ok_or(RafdaError::NoDelayFound)
}

/// Fraction of points whose nearest neighbour at dimension `m` moves away by
/// more than a factor [`FNN_DISTANCE_RATIO`] once both points are extended to
/// dimension `m + 1`.
///
/// Neighbours closer in time than `tau` samples are excluded, as are
/// candidates at a distance below `1e-12`. Ties go to the smallest index.
pub fn false_nearest_fraction(series: &[f64], tau: usize, m: usize) -> Result<f64> {
    if m == 0 || tau == 0 {
        return Err(RafdaError::InvalidArgument(format!(
            "false neighbours need m >= 1 and tau >= 1, got m = {m}, tau = {tau}"
        )));
    }
    // points that can be extended to dimension m + 1
    let points = series.len().saturating_sub(m * tau);
    if points < 2 {
        return Err(RafdaError::NotEnoughPoints(format!(
            "{} samples give {points} points at m = {m}, tau = {tau}",
            series.len()
        )));
    }

    let verdicts: Vec<Option<bool>> = (0..points)
        .into_par_iter()
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..points {
                if i.abs_diff(j) <= tau {
                    continue;
                }
                let mut d2 = 0.0;
                for k in 0..m {
                    let diff = series[i + k * tau] - series[j + k * tau];
                    d2 += diff * diff;
                }
                if d2 < MIN_NEIGHBOUR_DISTANCE * MIN_NEIGHBOUR_DISTANCE {
                    continue;
                }
                if best.is_none_or(|(_, b)| d2 < b) {
                    best = Some((j, d2));
                }
            }
            best.map(|(j, d2)| {
                let extra = series[i + m * tau] - series[j + m * tau];
                let grown = (d2 + extra * extra).sqrt() / d2.sqrt();
                grown > FNN_DISTANCE_RATIO
            })
        })
        .collect();

    let counted = verdicts.iter().flatten().count();
    if counted == 0 {
        return Err(RafdaError::NotEnoughPoints(
            "no point has an admissible nearest neighbour".into(),
        ));
    }
    let false_count = verdicts.iter().flatten().filter(|&&f| f).count();
    Ok(false_count as f64 / counted as f64)
}

/// Smallest `m <= m_max` whose false-neighbour fraction is below `threshold`,
/// together with the fractions evaluated on the way.
pub fn select_embedding_dimension(
    series: &[f64],
    tau: usize,
    m_max: usize,
    threshold: f64,
) -> Result<(usize, Vec<(usize, f64)>)> {
    if m_max == 0 {
        return Err(RafdaError::InvalidArgument("m_max must be at least 1".into()));
    }
    let mut fractions = Vec::new();
    for m in 1..=m_max {
        let f = false_nearest_fraction(series, tau, m)?;
        fractions.push((m, f));
        if f < threshold {
            return Ok((m, fractions));
        }
    }
    Err(RafdaError::DimensionNotFound {
        m_max,
        threshold,
        fractions,
    })
}

/// Outcome of automatic delay and dimension selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    #[serde(rename = "ami")]
    pub ami_curve: Vec<(usize, f64)>,
    #[serde(rename = "fnn")]
    pub fnn_fractions: Vec<(usize, f64)>,
    #[serde(rename = "tau")]
    pub chosen_tau: usize,
    #[serde(rename = "m")]
    pub chosen_m: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingSearch {
    pub max_lag: usize,
    pub bins: usize,
    pub m_max: usize,
    pub threshold: f64,
}

impl Default for EmbeddingSearch {
    fn default() -> Self {
        EmbeddingSearch {
            max_lag: 50,
            bins: DEFAULT_AMI_BINS,
            m_max: 10,
            threshold: FNN_THRESHOLD,
        }
    }
}

/// Chooses `tau` and then `m` for a scalar series.
pub fn estimate_embedding(series: &[f64], search: &EmbeddingSearch) -> Result<EmbeddingReport> {
    let max_lag = search.max_lag.min(series.len().saturating_sub(1));
    let ami_curve = average_mutual_information(series, max_lag, search.bins)?;
    let chosen_tau = select_delay(&ami_curve)?;
    let (chosen_m, fnn_fractions) = select_embedding_dimension(series, chosen_tau, search.m_max, search.threshold)?;
    Ok(EmbeddingReport {
        ami_curve,
        fnn_fractions,
        chosen_tau,
        chosen_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delay_vectors_from_definition() {
        let s = TimeSeries::scalar(vec![1.0, 2.0, 3.0, 4.0, 5.0], 1.0);
        let z = build_delay_vectors(&s, 2, 2).unwrap();
        assert_eq!(z.len(), 3);
        assert_eq!(z.matrix(), &DMatrix::from_column_slice(2, 3, &[1.0, 3.0, 2.0, 4.0, 3.0, 5.0]));
    }

    #[test]
    fn m_one_is_the_series() {
        let s = TimeSeries::scalar(vec![0.3, -1.0, 2.5], 0.1);
        let z = build_delay_vectors(&s, 1, 4).unwrap();
        assert_eq!(z.matrix().as_slice(), s.as_slice());
    }

    #[test]
    fn multivariate_blocks() {
        let s = TimeSeries::new(2, 1.0, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let z = build_delay_vectors(&s, 2, 1).unwrap();
        assert_eq!(z.dim(), 4);
        assert_eq!(z.column(0).as_slice(), &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(z.column(1).as_slice(), &[2.0, 20.0, 3.0, 30.0]);
    }

    #[test]
    fn too_short_series() {
        let s = TimeSeries::scalar(vec![1.0; 20], 1.0);
        assert!(matches!(build_delay_vectors(&s, 3, 10), Err(RafdaError::SeriesTooShort { .. })));
        assert_eq!(build_delay_vectors(&s, 3, 9).unwrap().len(), 2);
    }

    #[test]
    fn ami_lag_zero_is_entropy_and_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..2000).map(|n| (n as f64 * 0.07).sin() + 0.1 * rng.random::<f64>()).collect();
        let curve = average_mutual_information(&s, 30, 16).unwrap();
        let (min, max) = s.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let width = (max - min) / 16.0;
        let mut counts = [0usize; 16];
        for &v in &s {
            counts[bin_index(v, min, width, 16)] += 1;
        }
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / s.len() as f64;
                -p * p.ln()
            })
            .sum();
        assert!((curve[0].1 - h).abs() < 1e-12);
        assert!(curve.iter().all(|&(_, v)| v <= curve[0].1 + 1e-12));
    }

    #[test]
    fn ami_of_shuffled_series_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s: Vec<f64> = (0..10_000).map(|n| (n as f64 * 0.05).sin()).collect();
        s.shuffle(&mut rng);
        let curve = average_mutual_information(&s, 5, 16).unwrap();
        for &(lag, v) in &curve[1..] {
            assert!(v < 0.05, "lag {lag}: {v}");
        }
    }

    #[test]
    fn ami_constant_series() {
        assert!(matches!(
            average_mutual_information(&[2.0; 100], 3, 16),
            Err(RafdaError::ZeroEntropy)
        ));
    }

    #[test]
    fn delay_rules() {
        let curve: Vec<(usize, f64)> = [4.0, 2.0, 1.0, 1.5, 1.2].iter().copied().enumerate().collect();
        assert_eq!(select_delay(&curve).unwrap(), 2);

        let decreasing: Vec<(usize, f64)> = [5.0, 4.0, 3.0, 2.0, 1.0].iter().copied().enumerate().collect();
        // 4 / e = 1.47
        assert_eq!(select_delay(&decreasing).unwrap(), 4);

        let increasing: Vec<(usize, f64)> = [1.0, 2.0, 3.0, 4.0].iter().copied().enumerate().collect();
        assert!(matches!(select_delay(&increasing), Err(RafdaError::NoDelayFound)));
        assert!(select_delay(&increasing[..2]).is_err());
    }

    #[test]
    fn monotone_ramp_has_no_false_neighbours() {
        let s: Vec<f64> = (0..500).map(|n| 0.01 * n as f64).collect();
        assert_eq!(false_nearest_fraction(&s, 3, 1).unwrap(), 0.0);
    }

    /// Brute-force check on a sine with a quarter-period delay: one
    /// coordinate cannot tell the rising from the falling branch, two can.
    #[test]
    fn sine_unfolds_at_two() {
        // irrational period so no branch nearly repeats itself
        let period = 10.0 * (1.0 + 5f64.sqrt());
        let omega = std::f64::consts::TAU / period;
        let s: Vec<f64> = (0..1000).map(|n| (omega * n as f64).sin()).collect();
        let tau = (std::f64::consts::FRAC_PI_2 / omega).round() as usize;
        let f1 = false_nearest_fraction(&s, tau, 1).unwrap();
        let f2 = false_nearest_fraction(&s, tau, 2).unwrap();
        assert!(f1 > 0.3, "{f1}");
        assert!(f2 < 0.10, "{f2}");
        let (m, curve) = select_embedding_dimension(&s, tau, 5, FNN_THRESHOLD).unwrap();
        assert_eq!(m, 2);
        assert_eq!(curve.len(), 2);
    }

    #[test]
    fn vacuous_threshold_picks_one() {
        let s: Vec<f64> = (0..300).map(|n| (0.2 * n as f64).sin()).collect();
        assert_eq!(select_embedding_dimension(&s, 8, 4, 1.0).unwrap().0, 1);
    }

    #[test]
    fn fnn_needs_points() {
        assert!(matches!(
            false_nearest_fraction(&[1.0, 2.0, 3.0], 1, 2),
            Err(RafdaError::NotEnoughPoints(_))
        ));
    }

    #[test]
    fn report_json_keys() {
        let report = EmbeddingReport {
            ami_curve: vec![(0, 2.0), (1, 1.0)],
            fnn_fractions: vec![(1, 0.5)],
            chosen_tau: 1,
            chosen_m: 1,
        };
        let v: serde_json::Value = serde_json::to_value(&report).unwrap();
        assert_eq!(v["ami"][1][0], 1);
        assert_eq!(v["fnn"][0][1], 0.5);
        assert_eq!(v["tau"], 1);
        assert_eq!(v["m"], 1);
    }

    proptest! {
        #[test]
        fn consecutive_delay_vectors_overlap(
            data in proptest::collection::vec(-100.0f64..100.0, 40..120),
            m in 1usize..5,
            tau in 1usize..6,
            d in 1usize..3,
        ) {
            let len = data.len() / d;
            prop_assume!(len > (m - 1) * tau);
            let series = TimeSeries::new(d, 0.1, data[..len * d].to_vec()).unwrap();
            let z = build_delay_vectors(&series, m, tau).unwrap();
            prop_assert_eq!(z.len(), len - (m - 1) * tau);
            prop_assert_eq!(z.dim(), m * d);
            // lag block k + 1 of column n is lag block k of column n + tau
            for n in 0..z.len().saturating_sub(tau) {
                for lag in 0..m - 1 {
                    for k in 0..d {
                        prop_assert_eq!(z.matrix()[((lag + 1) * d + k, n)], z.matrix()[(lag * d + k, n + tau)]);
                    }
                }
            }
            for n in 0..z.len() {
                prop_assert_eq!(z.matrix()[(0, n)], series.value(n)[0]);
            }
        }
    }
}
