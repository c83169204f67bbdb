use nalgebra::Vector3;
use rafda::dynamics::simulate;
use rafda::embedding::{
    average_mutual_information, estimate_embedding, false_nearest_fraction, select_delay, select_embedding_dimension,
    EmbeddingSearch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn clean_x(len: usize) -> Vec<f64> {
    let traj = simulate(&Vector3::new(1.0, 1.0, 1.0), 0.02, 40.0, 10, len).unwrap();
    traj.component(0).as_slice().to_vec()
}

#[test]
fn delay_lies_near_a_fifth_time_unit() {
    let x = clean_x(10_000);
    let ami = average_mutual_information(&x, 50, 16).unwrap();
    let tau = select_delay(&ami).unwrap();
    assert!((7..=14).contains(&tau), "tau = {tau}");
}

#[test]
fn three_dimensions_unfold_the_attractor() {
    let x = clean_x(10_000);
    assert!(false_nearest_fraction(&x, 10, 1).unwrap() > 0.9);
    assert!(false_nearest_fraction(&x, 10, 3).unwrap() < 0.01);
    let (m, fractions) = select_embedding_dimension(&x, 10, 10, 0.1).unwrap();
    assert_eq!(m, 3, "fractions {fractions:?}");
}

#[test]
fn estimate_agrees_with_the_separate_steps() {
    let x = clean_x(10_000);
    let search = EmbeddingSearch::default();
    let report = estimate_embedding(&x, &search).unwrap();
    let tau = select_delay(&average_mutual_information(&x, search.max_lag, search.bins).unwrap()).unwrap();
    assert_eq!(report.chosen_tau, tau);
    let (m, fractions) = select_embedding_dimension(&x, tau, search.m_max, search.threshold).unwrap();
    assert_eq!(report.chosen_m, m);
    assert_eq!(report.fnn_fractions, fractions);
}

#[test]
fn white_noise_needs_more_dimensions_than_lorenz() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let noise: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (m, _) = select_embedding_dimension(&noise, 1, 10, 0.1).unwrap();
    assert!(m >= 4, "m = {m}");
}
