//! Forecast times of ridge and filtered surrogates over a few realizations.
//!
//! `cargo run --release --example forecast_skill -- [realizations] [eta]`

use rafda::experiments::{run_realization, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let eta: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.2);
    let cfg = ExperimentConfig { eta, ..Default::default() };

    println!("{:>4} {:>10} {:>10} {:>8}", "i", "tau_f LR", "tau_f RAFDA", "ms");
    let (mut lr, mut rafda) = (0.0, 0.0);
    for i in 0..n {
        let r = run_realization(&cfg, i)?;
        println!(
            "{i:>4} {:>10.3} {:>10.3}{} {:>8}",
            r.tau_f_lr,
            r.tau_f_rafda,
            if r.diverged { "*" } else { " " },
            r.wall_ms
        );
        lr += r.tau_f_lr;
        rafda += r.tau_f_rafda;
    }
    println!("mean LR {:.3}  mean RAFDA {:.3}", lr / n as f64, rafda / n as f64);
    Ok(())
}
