//! Long free runs of both surrogates against the true delay attractor.
//!
//! `cargo run --release --example attractor_reproduction -- [realization] [lyapunov_times]`

use rafda::evaluation::AttractorStats;
use rafda::experiments::{attractor_trial, ExperimentConfig};

fn show(name: &str, s: &AttractorStats) {
    println!(
        "{name:>6}: occupancy {:.3}, variance ratio - 1 {:?}, consistent {}",
        s.occupancy,
        s.variance_rel_diff.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        s.is_consistent(0.99, 0.25)
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let index: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let lt: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(25.0);
    let trial = attractor_trial(&ExperimentConfig::default(), index, lt)?;
    show("LR", &trial.lr);
    match &trial.rafda {
        Some(s) => show("RAFDA", s),
        None => println!(" RAFDA: filter diverged"),
    }
    Ok(())
}
