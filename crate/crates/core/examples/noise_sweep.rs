//! Mean forecast times over a grid of observation noise variances.
//!
//! `cargo run --release --example noise_sweep -- [realizations] [eta,eta,...]`

use rafda::experiments::{run_noise_sweep, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let etas: Vec<f64> = match args.next() {
        Some(s) => s.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => vec![1e-2, 0.2, 1.0],
    };
    let cfg = ExperimentConfig { n_realizations: n, ..Default::default() };
    let sweep = run_noise_sweep(&cfg, &etas)?;
    println!("{:>10} {:>14} {:>14}", "eta", "LR", "RAFDA");
    for p in &sweep.points {
        println!(
            "{:>10.1e} {:>7.3} ±{:<6.3} {:>7.3} ±{:<6.3}",
            p.eta, p.mean_lr, p.std_lr, p.mean_rafda, p.std_rafda
        );
    }
    Ok(())
}
