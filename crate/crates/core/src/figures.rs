//! Canned experiment suite reproducing the headline SER curves.
//!
//! Scenarios: single user (point-to-point reference), two users at 3 dB and
//! 6 dB power gaps, and three users at 6 dB gaps, each at frame lengths
//! 500 / 100 / 50 where the clustering has enough data to be interesting.
//! `scale` multiplies the frame budgets so smoke runs stay cheap.

use crate::gmm_em::EmConfig;
use crate::sim::{Alignment, DetectorKind, ExperimentConfig};

fn grid(start: i32, end: i32, step: i32, gaps: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut g = start;
    while g <= end {
        let mut tuple = vec![g as f64];
        for &gap in gaps {
            tuple.push(tuple.last().unwrap() - gap);
        }
        out.push(tuple);
        g += step;
    }
    out
}

fn scaled(frames: usize, scale: f64) -> usize {
    ((frames as f64 * scale).round() as usize).max(1)
}

/// Named experiment configs for the full curve suite.
pub fn figure_suite(seed: u64, scale: f64) -> Vec<(String, ExperimentConfig)> {
    let mut suite = Vec::new();
    let base = |k: usize, n: usize, grid: Vec<Vec<f64>>, frames: usize| ExperimentConfig {
        k,
        n,
        snr_grid_db: grid,
        frames_per_point: scaled(frames, scale),
        min_errors: (400.0 * scale.min(1.0)).round().max(1.0) as u64,
        noise_power: 1.0,
        seed,
        detectors: vec![DetectorKind::GmmSic, DetectorKind::MlCsi],
        em: EmConfig::default(),
        alignment: Alignment::Genie,
    };
    for &n in &[500usize, 100, 50] {
        let frames = 8_000_000 / n; // ~8e6 symbols per point before early stop
        suite.push((
            format!("p2p_n{n}"),
            base(1, n, grid(4, 40, 2, &[]), frames),
        ));
    }
    for &(gap, tag) in &[(3.0, "gap3"), (6.0, "gap6")] {
        for &n in &[500usize, 100, 50] {
            let frames = 8_000_000 / n;
            suite.push((
                format!("two_user_{tag}_n{n}"),
                base(2, n, grid(8, 40, 2, &[gap]), frames),
            ));
        }
    }
    suite.push((
        "three_user_gap6_n500".into(),
        base(3, 500, grid(12, 40, 2, &[6.0, 6.0]), 16_000),
    ));
    suite
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_shape() {
        let suite = figure_suite(1, 1.0);
        assert_eq!(suite.len(), 10);
        let names: Vec<&str> = suite.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"p2p_n500"));
        assert!(names.contains(&"two_user_gap3_n100"));
        assert!(names.contains(&"two_user_gap6_n50"));
        assert!(names.contains(&"three_user_gap6_n500"));
        for (_, cfg) in &suite {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn gaps_are_constant_across_grid() {
        let suite = figure_suite(1, 1.0);
        let (_, cfg) = suite.iter().find(|(n, _)| n == "three_user_gap6_n500").unwrap();
        for tuple in &cfg.snr_grid_db {
            assert!((tuple[0] - tuple[1] - 6.0).abs() < 1e-12);
            assert!((tuple[1] - tuple[2] - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_shrinks_budget() {
        let full = figure_suite(1, 1.0);
        let tiny = figure_suite(1, 0.001);
        for ((_, a), (_, b)) in full.iter().zip(tiny.iter()) {
            assert!(b.frames_per_point <= a.frames_per_point);
            assert!(b.frames_per_point >= 1);
            assert!(b.min_errors >= 1);
        }
    }
}
