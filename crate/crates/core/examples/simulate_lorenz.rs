//! Integrates Lorenz-63, observes x with noise and writes both to CSV.
//!
//! `cargo run --release --example simulate_lorenz -- [out_dir] [eta]`

use std::path::PathBuf;

use nalgebra::Vector3;
use rafda::dynamics::{observe, simulate, ObservationModel};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "results/simulate_lorenz".into()));
    let eta: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.2);

    let truth = simulate(&Vector3::new(1.0, 1.0, 1.0), 0.02, 40.0, 10, 5000)?;
    let obs = observe(&truth, &ObservationModel::lorenz_x(eta)?, &mut ChaCha20Rng::seed_from_u64(1))?;
    std::fs::create_dir_all(&out)?;
    truth.write_csv(&out.join("truth.csv"))?;
    obs.write_csv(&out.join("observations.csv"), Some(&["x"]))?;

    for k in 0..3 {
        let c = truth.component(k);
        let v = c.as_slice();
        let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |a, &x| (a.0.min(x), a.1.max(x)));
        println!("{} in [{lo:.2}, {hi:.2}]", ["x", "y", "z"][k]);
    }
    let resid: f64 = obs
        .as_slice()
        .iter()
        .zip(truth.component(0).as_slice())
        .map(|(o, t)| (o - t).powi(2))
        .sum::<f64>()
        / obs.len() as f64;
    println!("empirical noise variance {resid:.4} (eta = {eta})");
    println!("wrote {}", out.display());
    Ok(())
}
