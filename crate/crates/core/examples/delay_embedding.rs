//! Delay and embedding-dimension selection on Lorenz-63 `x` data.
//!
//! `cargo run --release --example delay_embedding`

use rafda::dynamics::{observe, random_initial_condition, simulate, ObservationModel};
use rafda::embedding::{estimate_embedding, EmbeddingSearch};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let ic = random_initial_condition(&mut rng);
    let truth = simulate(&ic, 0.02, 40.0, 10, 10_000)?;
    let search = EmbeddingSearch::default();

    let clean = estimate_embedding(truth.component(0).as_slice(), &search)?;
    println!("clean x, 10^4 samples");
    println!("  AMI (nats) at lags 0..14:");
    for (lag, ami) in clean.ami_curve.iter().take(15) {
        println!("    {lag:>3} {ami:.4}");
    }
    println!("  FNN fraction by m: {:?}", rounded(&clean.fnn_fractions));
    println!("  -> tau = {}, m = {}", clean.chosen_tau, clean.chosen_m);

    for eta in [0.2, 1.0] {
        let noisy = observe(&truth, &ObservationModel::lorenz_x(eta)?, &mut rng)?;
        match estimate_embedding(noisy.as_slice(), &search) {
            Ok(r) => println!(
                "noisy x (eta = {eta}): tau = {}, m = {}, FNN {:?}",
                r.chosen_tau,
                r.chosen_m,
                rounded(&r.fnn_fractions)
            ),
            Err(e) => println!("noisy x (eta = {eta}): {e}"),
        }
    }
    Ok(())
}

fn rounded(f: &[(usize, f64)]) -> Vec<(usize, String)> {
    f.iter().map(|&(m, v)| (m, format!("{v:.3}"))).collect()
}
