mod common;

use common::load_outlier_fixture;
use common::oracle::worst_gradient_errors;
use ehrsynth_core::anomaly::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_central_differences() {
    for (net, worst) in worst_gradient_errors(10, 99).into_iter().enumerate() {
        assert!(worst < 1e-4, "network {net}: worst relative error {worst}");
    }
}

/// Rows generated from two nonnegative latent factors, so a ReLU bottleneck
/// of width 2 can represent them.
fn rank_two(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = Array2::from_shape_simple_fn((2, d), || rng.gen_range(-1.0..1.0));
    let factors = Array2::from_shape_simple_fn((n, 2), || rng.gen_range(0.0..1.0));
    factors.dot(&mix)
}

#[test]
fn rank_two_data_reconstructs_closely() {
    let x = rank_two(512, 8, 3);
    let cfg = TrainConfig {
        epochs: 400,
        seed: 1,
        ..TrainConfig::default()
    };
    let trained = train_autoencoder(x.view(), &default_widths(8), &cfg).unwrap();
    let errors = reconstruction_errors(&trained.model, x.view()).unwrap();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    assert!(mean < 1e-2, "mean reconstruction error {mean}");
}

#[test]
fn training_loss_does_not_increase_on_average() {
    let x = rank_two(256, 8, 5);
    let cfg = TrainConfig {
        epochs: 60,
        seed: 2,
        ..TrainConfig::default()
    };
    let hist = train_autoencoder(x.view(), &default_widths(8), &cfg).unwrap().loss_history;
    for pair in hist.chunks(2).collect::<Vec<_>>().windows(2) {
        let a = pair[0].iter().sum::<f64>() / pair[0].len() as f64;
        let b = pair[1].iter().sum::<f64>() / pair[1].len() as f64;
        assert!(b <= a + 1e-6, "loss rose from {a} to {b}");
    }
}

/// Every injected outlier reconstructs worse than every normal row, and the
/// canonical potassium 15 row is flagged. How many of the 20 clear the
/// mean + 2σ threshold is reported by the acceptance suite.
#[test]
fn injected_hard_range_outliers_stand_out() {
    let (rows, injected, plan) = load_outlier_fixture();
    assert_eq!((rows.len(), injected.iter().filter(|x| **x).count()), (1020, 20));
    let (_, t) = preprocess(&rows, &plan).unwrap();
    let widths = default_widths(t.matrix.ncols());
    let cfg = TrainConfig {
        seed: 42,
        ..TrainConfig::default()
    };
    let trained = train_autoencoder(t.matrix.view(), &widths, &cfg).unwrap();
    let errors = reconstruction_errors(&trained.model, t.matrix.view()).unwrap();
    let report = threshold_and_flag(&errors).unwrap();
    let worst_normal = errors.iter().zip(&injected).filter(|(_, i)| !**i).map(|(e, _)| *e).fold(0.0, f64::max);
    let best_outlier = errors.iter().zip(&injected).filter(|(_, i)| **i).map(|(e, _)| *e).fold(f64::MAX, f64::min);
    assert!(best_outlier > worst_normal, "outlier {best_outlier} vs normal {worst_normal}");
    assert!(report.flags.iter().zip(&injected).all(|(f, i)| !*f || *i), "a normal row was flagged");
    let k = plan.numeric.iter().position(|c| c == "potassium_mmol_l").unwrap();
    let potassium_row = rows.iter().position(|r| r[k] == Some(Cell::Num(15.0))).unwrap();
    assert!(report.flags[potassium_row]);
}
