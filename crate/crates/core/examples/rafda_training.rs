//! Ensemble Kalman filter training of the output weights, with the filter
//! diagnostics of every 250th step.
//!
//! `cargo run --release --example rafda_training -- [eta] [members]`

use rafda::experiments::{score_forecast, train_realization, truth_delay_vectors, ExperimentConfig, FilterOutcome};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let eta: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.2);
    let members: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let cfg = ExperimentConfig { eta, members, ..Default::default() };

    let trained = train_realization(&cfg, 0)?;
    let truth = truth_delay_vectors(
        &cfg,
        &trained.data.validation_start,
        trained.m,
        trained.tau,
        cfg.validation_steps() + 1,
    )?
    .to_vecs();
    let lr = score_forecast(&cfg, &trained.lr, &trained.params, &truth)?;
    println!("ridge forecast time {:.3}", lr.tau_f);
    match &trained.rafda {
        FilterOutcome::Converged(run) => {
            println!("{:>6} {:>12} {:>12} {:>12}", "step", "innovation", "state tr", "weight tr");
            for r in run.diagnostics.records.iter().step_by(250) {
                println!("{:>6} {:>12.4} {:>12.3e} {:>12.3e}", r.step, r.innovation_norm, r.state_spread, r.weight_spread);
            }
            let score = score_forecast(&cfg, &run.weights, &trained.params, &truth)?;
            println!("filtered forecast time {:.3}", score.tau_f);
        }
        FilterOutcome::Diverged(step) => println!("filter diverged at step {step}"),
    }
    Ok(())
}
