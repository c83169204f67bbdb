//! Random feature surrogate fitted by ridge regression on noisy x.
//!
//! `cargo run --release --example ridge_baseline -- [eta]`

use rafda::embedding::build_delay_vectors;
use rafda::experiments::{realization_data, score_forecast, truth_delay_vectors, ExperimentConfig};
use rafda::features::{sample_feature_params, surrogate_step};
use rafda::regression::{build_training_matrices, normal_equation_residual, ridge_regression};
use rafda::seeds::{stream_rng, Stream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let eta: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.2);
    let cfg = ExperimentConfig { eta, ..Default::default() };
    let (m, tau) = (cfg.m.unwrap_or(3), cfg.tau.unwrap_or(10));

    let data = realization_data(&cfg, 0)?;
    let delays = build_delay_vectors(&data.train.truncated(cfg.n_train + 1 + (m - 1) * tau), m, tau)?;
    let params = sample_feature_params(cfg.feature_dim, m, cfg.w, cfg.b, &mut stream_rng(cfg.seed, 0, Stream::Features))?;
    let tm = build_training_matrices(&delays, &params)?;
    let w = ridge_regression(&tm, cfg.beta)?;
    println!("{} pairs, normal equation residual {:.2e}", tm.pairs(), normal_equation_residual(&tm, &w.matrix, cfg.beta));

    let truth = truth_delay_vectors(&cfg, &data.validation_start, m, tau, cfg.validation_steps() + 1)?.to_vecs();
    let mut sq = 0.0;
    for pair in truth.windows(2) {
        sq += (surrogate_step(&w, &pair[0], &params)? - &pair[1]).norm_squared();
    }
    println!("one-step rms on clean validation {:.3}", (sq / (truth.len() - 1) as f64).sqrt());

    let score = score_forecast(&cfg, &w, &params, &truth)?;
    println!("forecast time {:.3} Lyapunov times ({} steps)", score.tau_f, score.raw_steps);
    Ok(())
}
