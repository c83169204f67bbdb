//! Saves a ridge surrogate to JSON, reloads it and checks that the reloaded
//! model forecasts bit-identically.
//!
//! `cargo run --release --example model_persistence`

use rafda::experiments::{train_realization, truth_delay_vectors, ExperimentConfig};
use rafda::features::{free_run, SurrogateModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig { n_train: 1000, members: 20, ..Default::default() };
    let trained = train_realization(&cfg, 0)?;
    let model = trained.lr_model(cfg.dt)?;

    let dir = std::env::temp_dir().join("rafda_model_persistence");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model_lr.json");
    model.save(&path)?;
    let loaded = SurrogateModel::load(&path)?;

    let start = &truth_delay_vectors(&cfg, &trained.data.validation_start, model.embedding.m, model.embedding.tau, 1)?
        .to_vecs()[0];
    let a = free_run(&model.weights, &model.params, start, 500)?;
    let b = free_run(&loaded.weights, &loaded.params, start, 500)?;
    println!("saved to {}", path.display());
    println!("embedding m = {}, tau = {}", loaded.embedding.m, loaded.embedding.tau);
    println!("reloaded forecast identical: {}", a == b);
    Ok(())
}
