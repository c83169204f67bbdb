//! Stochastic EnKF on a scalar linear-Gaussian model against the exact
//! Kalman filter, for growing ensembles.
//!
//! `cargo run --release --example enkf_linear_gaussian`

use nalgebra::{DMatrix, DVector};
use rafda::enkf::{analysis_update, AugmentedEnsemble};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

const A: f64 = 0.9;
const Q: f64 = 0.1;
const R: f64 = 0.5;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut x = rng.sample::<f64, _>(StandardNormal) + 1.0;
    let obs: Vec<f64> = (0..20)
        .map(|_| {
            x = A * x + Q.sqrt() * rng.sample::<f64, _>(StandardNormal);
            x + R.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();

    let (mut km, mut kp) = (1.0, 1.0);
    for &y in &obs {
        let (mf, pf) = (A * km, A * A * kp + Q);
        let k = pf / (pf + R);
        km = mf + k * (y - mf);
        kp = (1.0 - k) * pf;
    }
    println!("Kalman mean {km:.5} variance {kp:.5}");

    let gamma = DMatrix::from_element(1, 1, R);
    for members in [10, 100, 1000, 10000] {
        let mut rng = ChaCha20Rng::seed_from_u64(members as u64);
        let mut zeta = DMatrix::from_fn(1, members, |_, _| 1.0 + rng.sample::<f64, _>(StandardNormal));
        for &y in &obs {
            zeta = zeta.map(|v| A * v + Q.sqrt() * rng.sample::<f64, _>(StandardNormal));
            let ens = AugmentedEnsemble::new(zeta, DMatrix::zeros(0, members), 0)?;
            let eta = DMatrix::from_fn(1, members, |_, _| R.sqrt() * rng.sample::<f64, _>(StandardNormal));
            zeta = analysis_update(&ens, &DVector::from_element(1, y), &eta, &gamma)?.0.zeta_block().clone();
        }
        let mean = zeta.mean();
        let var = zeta.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (members - 1) as f64;
        println!("M = {members:>5}: mean error {:.2e}, variance error {:.2e}", (mean - km).abs(), (var - kp).abs());
    }
    Ok(())
}
