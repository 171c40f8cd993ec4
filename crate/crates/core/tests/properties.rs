//! Randomized property tests for the mixture-fit building blocks.

use num_complex::Complex64;
use proptest::prelude::*;

use noma_cluster::gmm_em::{e_step, fit, init_by_quadrants, m_step, EmConfig};
use noma_cluster::rng::substream;
use noma_cluster::signal_model::qpsk_point;

use rand::Rng;

fn cluster_samples(seed: u64, gain: f64, spread: f64, per_cluster: usize) -> Vec<Complex64> {
    let mut rng = substream(seed, &[7]);
    let mut out = Vec::new();
    for j in 0..4 {
        for _ in 0..per_cluster {
            let noise = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            out.push(qpsk_point(j) * gain + noise * spread);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// After any E-step, every responsibility row is a probability vector.
    #[test]
    fn responsibilities_are_stochastic(
        seed in 0u64..1000,
        gain in 0.5f64..5.0,
        spread in 0.05f64..2.0,
    ) {
        let samples = cluster_samples(seed, gain, spread, 30);
        let config = EmConfig::default();
        let mut state = init_by_quadrants(&samples, &config);
        e_step(&mut state, &samples).unwrap();
        let m = state.num_components();
        for i in 0..samples.len() {
            let mut row_sum = 0.0;
            for j in 0..m {
                let r = state.responsibility(i, j);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
                row_sum += r;
            }
            prop_assert!((row_sum - 1.0).abs() < 1e-9, "row {i} sums to {row_sum}");
        }
    }

    /// With responsibilities held fixed, one M-step commutes with a common
    /// translation of the samples: means shift by the offset, covariances
    /// stay identical.
    #[test]
    fn m_step_translation_equivariance(
        seed in 0u64..1000,
        gain in 0.5f64..5.0,
        spread in 0.05f64..2.0,
        dx in -10.0f64..10.0,
        dy in -10.0f64..10.0,
    ) {
        let samples = cluster_samples(seed, gain, spread, 25);
        let offset = Complex64::new(dx, dy);
        let shifted: Vec<Complex64> = samples.iter().map(|&z| z + offset).collect();
        let config = EmConfig::default();

        let mut state = init_by_quadrants(&samples, &config);
        e_step(&mut state, &samples).unwrap();
        let mut moved = state.clone();
        m_step(&mut state, &samples, &config);
        m_step(&mut moved, &shifted, &config);

        for (a, b) in state.components.iter().zip(moved.components.iter()) {
            prop_assert!((b.mean - a.mean - offset).norm() < 1e-9);
            prop_assert!((b.covariance.xx - a.covariance.xx).abs() < 1e-9);
            prop_assert!((b.covariance.yy - a.covariance.yy).abs() < 1e-9);
            prop_assert!((b.covariance.xy - a.covariance.xy).abs() < 1e-9);
            prop_assert!((b.weight - a.weight).abs() < 1e-12);
        }
    }

    /// A full fit keeps weights uniform (default config pins them) and its
    /// hard assignments match the argmax of the responsibilities.
    #[test]
    fn fit_invariants(
        seed in 0u64..500,
        gain in 1.0f64..5.0,
    ) {
        let samples = cluster_samples(seed, gain, 0.2, 40);
        let state = fit(&samples, &EmConfig::default()).unwrap();
        for c in &state.components {
            prop_assert!((c.weight - 0.25).abs() < 1e-12);
        }
        let m = state.num_components();
        for (i, &a) in state.assignments.iter().enumerate() {
            for j in 0..m {
                prop_assert!(state.responsibility(i, a) >= state.responsibility(i, j) - 1e-12);
            }
        }
    }
}
