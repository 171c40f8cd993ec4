//! End-to-end acceptance gate: one test per criterion, each printing a
//! single PASS/FAIL line (visible with `--nocapture`).

use std::collections::HashMap;
use std::sync::OnceLock;

use num_complex::Complex64;

use noma_cluster::gmm_em::{fit, EmConfig};
use noma_cluster::receiver::{detect_symbols, estimate_channel, estimate_phase_rotation};
use noma_cluster::rng::{substream, TAG_CHANNEL, TAG_NOISE, TAG_SYMBOLS};
use noma_cluster::signal_model::{
    db_to_linear, generate_frame, qpsk_point, sample_channel, transmit, ChannelRealization,
    ReceivedBlock, QPSK_ORDER,
};
use noma_cluster::ml_detect_full_csi;
use noma_cluster::sim::{run_sweep, Alignment, DetectorKind, ExperimentConfig, SerRecord};

use rand::Rng;

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Closed-form coherent QPSK SER over Rayleigh fading at average symbol SNR
/// `gamma` (linear), from the exact M-PSK fading average with M = 4.
fn qpsk_rayleigh_ser(gamma: f64) -> f64 {
    let c = gamma / 2.0;
    let s = (c / (1.0 + c)).sqrt();
    0.75 * (1.0 - s * (4.0 / (3.0 * std::f64::consts::PI))
        * (std::f64::consts::FRAC_PI_2 + s.atan()))
}

// ---------------------------------------------------------------------------
// shared Monte Carlo sweeps (criteria 4, 5, 6)

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Scenario {
    P2p,
    Gap3,
    Gap6,
}

fn scenario_config(scenario: Scenario, n: usize) -> ExperimentConfig {
    let (k, grid): (usize, Vec<Vec<f64>>) = match scenario {
        Scenario::P2p => (1, (14..=24).map(|g| vec![g as f64]).collect()),
        Scenario::Gap3 => (
            2,
            (9..=16).map(|g| vec![2.0 * g as f64, 2.0 * g as f64 - 3.0]).collect(),
        ),
        Scenario::Gap6 => (
            2,
            (10..=17).map(|g| vec![2.0 * g as f64, 2.0 * g as f64 - 6.0]).collect(),
        ),
    };
    ExperimentConfig {
        k,
        n,
        snr_grid_db: grid,
        frames_per_point: 750_000 / n,
        min_errors: u64::MAX, // fixed frame budget, no early stop
        noise_power: 1.0,
        seed: 0xACCE,
        detectors: vec![DetectorKind::GmmSic, DetectorKind::MlCsi],
        em: EmConfig::default(),
        alignment: Alignment::Genie,
    }
}

fn sweeps() -> &'static HashMap<(Scenario, usize), Vec<SerRecord>> {
    static SWEEPS: OnceLock<HashMap<(Scenario, usize), Vec<SerRecord>>> = OnceLock::new();
    SWEEPS.get_or_init(|| {
        let mut out = HashMap::new();
        for scenario in [Scenario::P2p, Scenario::Gap3, Scenario::Gap6] {
            for n in [500usize, 100, 50] {
                let config = scenario_config(scenario, n);
                let records = run_sweep(&config).expect("sweep");
                out.insert((scenario, n), records);
            }
        }
        out
    })
}

/// (snr_user_db, ser, ci95) curve for one detector/user, sorted by SNR.
fn curve(records: &[SerRecord], detector: DetectorKind, user: usize) -> Vec<(f64, f64, f64)> {
    let mut pts: Vec<(f64, f64, f64)> = records
        .iter()
        .filter(|r| r.detector == detector && r.user == user)
        .map(|r| (r.snr_user_db(), r.ser(), r.ci95()))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts
}

/// SNR where the curve crosses `target`, from a least-squares log-linear
/// fit over the grid points near the crossing (SER within a factor of 5 of
/// the target). A pointwise segment pick is brittle here: fading makes
/// frame-level error counts heavy-tailed, and a small common fluctuation can
/// park one curve just above the target across a whole segment, turning a
/// few-percent vertical offset into a ~1 dB horizontal artifact. The local
/// fit keeps the log-linear model and the 1 dB grid while averaging that
/// jitter out; it also cancels between detectors because every detector
/// sees identical frames. Zero SER values are clamped to `floor`.
fn crossing(points: &[(f64, f64)], target: f64, floor: f64) -> Option<f64> {
    let near: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, s)| (x, s.max(floor)))
        .filter(|&(_, s)| s >= target / 5.0 && s <= target * 5.0)
        .collect();
    let pts = if near.len() >= 3 {
        near
    } else {
        points.iter().map(|&(x, s)| (x, s.max(floor))).collect()
    };
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, s) in &pts {
        let y = s.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    let b = (n * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / n;
    if b >= 0.0 {
        return None; // SER not decreasing with SNR: no usable crossing
    }
    Some((target.ln() - a) / b)
}

fn crossing_of(records: &[SerRecord], detector: DetectorKind, user: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve(records, detector, user)
        .into_iter()
        .map(|(x, s, _)| (x, s))
        .collect();
    let total = records
        .iter()
        .find(|r| r.detector == detector && r.user == user)
        .map(|r| r.symbols_total.max(1))
        .unwrap_or(1);
    crossing(&pts, 1e-2, 0.5 / total as f64)
}

/// Crossing interval using the Wilson interval envelopes.
fn crossing_bounds(records: &[SerRecord], detector: DetectorKind, user: usize) -> Option<(f64, f64)> {
    let pts = curve(records, detector, user);
    let floor = 1e-8;
    let low_env: Vec<(f64, f64)> = pts.iter().map(|&(x, s, c)| (x, (s - c).max(floor))).collect();
    let high_env: Vec<(f64, f64)> = pts.iter().map(|&(x, s, c)| (x, s + c)).collect();
    let lo = crossing(&low_env, 1e-2, floor)?;
    let hi = crossing(&high_env, 1e-2, floor)?;
    Some((lo.min(hi), lo.max(hi)))
}

/// SNR gap (blind minus full-CSI ML) at SER 1e-2 for one user, with a
/// CI-derived uncertainty interval.
fn gap_with_bounds(records: &[SerRecord], user: usize) -> Option<(f64, f64, f64)> {
    let g = crossing_of(records, DetectorKind::GmmSic, user)?;
    let m = crossing_of(records, DetectorKind::MlCsi, user)?;
    let (g_lo, g_hi) = crossing_bounds(records, DetectorKind::GmmSic, user)?;
    let (m_lo, m_hi) = crossing_bounds(records, DetectorKind::MlCsi, user)?;
    Some((g - m, g_lo - m_hi, g_hi - m_lo))
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_em_monotonicity() {
    let mut frames = 0usize;
    let mut worst = f64::INFINITY;
    'outer: for trial in 0..84u64 {
        for (combo, &(k, snr_db, n)) in [
            (1usize, 0.0f64, 50usize),
            (1, 0.0, 500),
            (1, 10.0, 50),
            (1, 10.0, 500),
            (1, 20.0, 50),
            (1, 20.0, 500),
            (2, 0.0, 50),
            (2, 0.0, 500),
            (2, 10.0, 50),
            (2, 10.0, 500),
            (2, 20.0, 50),
            (2, 20.0, 500),
        ]
        .iter()
        .enumerate()
        {
            let path = trial * 16 + combo as u64;
            let mut ch_rng = substream(path, &[TAG_CHANNEL]);
            let channels: Vec<ChannelRealization> = (0..k)
                .map(|u| sample_channel(u, db_to_linear(snr_db), &mut ch_rng).unwrap())
                .collect();
            let frame = generate_frame(k, n, &mut substream(path, &[TAG_SYMBOLS])).unwrap();
            let rx = transmit(&frame, &channels, 1.0, &mut substream(path, &[TAG_NOISE])).unwrap();
            let state = fit(&rx.samples, &EmConfig::default()).unwrap();
            for w in state.log_likelihood_history.windows(2) {
                let slack = 1e-9 * w[0].abs().max(1.0);
                worst = worst.min(w[1] - w[0]);
                assert!(
                    w[1] >= w[0] - slack,
                    "monotonicity violated: {} -> {} (K={k}, snr={snr_db}, N={n})",
                    w[0],
                    w[1]
                );
            }
            frames += 1;
            if frames >= 1000 {
                break 'outer;
            }
        }
    }
    report(
        1,
        "EM monotonicity",
        true,
        &format!("{frames} frames, smallest iteration gain {worst:.3e}"),
    );
}

#[test]
fn criterion_2_ml_oracle_equivalence() {
    let mut rng = substream(0xAC2, &[]);
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let channels = [
            ChannelRealization {
                user: 0,
                h: Complex64::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0),
                beta: 1.0,
            },
            ChannelRealization {
                user: 1,
                h: Complex64::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0),
                beta: 1.0,
            },
        ];
        let y = Complex64::new(rng.random::<f64>() * 8.0 - 4.0, rng.random::<f64>() * 8.0 - 4.0);
        let rx = ReceivedBlock {
            samples: vec![y],
            noise_power: 1.0,
        };
        let rows = ml_detect_full_csi(&rx, &channels).unwrap();
        // independent exhaustive 16-hypothesis search
        let mut best = (0usize, 0usize);
        let mut best_d = f64::INFINITY;
        for a in 0..QPSK_ORDER {
            for b in 0..QPSK_ORDER {
                let m = channels[0].h * qpsk_point(a) + channels[1].h * qpsk_point(b);
                let d = (y - m).norm_sqr();
                if d < best_d {
                    best_d = d;
                    best = (a, b);
                }
            }
        }
        if (rows[0][0], rows[1][0]) != best {
            mismatches += 1;
        }
    }
    report(
        2,
        "ML oracle equivalence",
        mismatches == 0,
        &format!("{mismatches} mismatches in 1000 samples"),
    );
    assert_eq!(mismatches, 0);
}

#[test]
fn criterion_3_analytic_ser_anchor() {
    let config = ExperimentConfig {
        k: 1,
        n: 500,
        snr_grid_db: vec![vec![5.0], vec![10.0], vec![15.0]],
        frames_per_point: 2000, // 1e6 symbols per point
        min_errors: u64::MAX,
        noise_power: 1.0,
        seed: 0xAC3,
        detectors: vec![DetectorKind::MlCsi],
        em: EmConfig::default(),
        alignment: Alignment::Genie,
    };
    let records = run_sweep(&config).unwrap();
    let mut pass = true;
    let mut detail = String::new();
    for r in &records {
        let gamma_db = r.snr_user_db();
        let analytic = qpsk_rayleigh_ser(db_to_linear(gamma_db));
        let rel = (r.ser() - analytic).abs() / analytic;
        pass &= rel <= 0.05 && r.symbols_total >= 1_000_000;
        detail.push_str(&format!(
            "{gamma_db} dB: sim {:.4e} vs analytic {:.4e} (rel {:.2}%); ",
            r.ser(),
            analytic,
            rel * 100.0
        ));
    }
    report(3, "analytic SER anchor", pass, detail.trim_end_matches("; "));
    assert!(pass, "{detail}");
}

#[test]
fn criterion_4_point_to_point_gap() {
    let records = &sweeps()[&(Scenario::P2p, 500)];
    let min_errors = records.iter().map(|r| r.symbol_errors).min().unwrap_or(0);
    let gap = gap_with_bounds(records, 1);
    let pass = matches!(gap, Some((g, _, _)) if g <= 0.5) && min_errors >= 400;
    let shown = gap.map_or("none".into(), |(g, lo, hi)| {
        format!("{g:.3} dB (bounds {lo:.3}..{hi:.3})")
    });
    report(
        4,
        "point-to-point gap at SER 1e-2",
        pass,
        &format!("gap {shown} (limit 0.5), min errors/point {min_errors}"),
    );
    assert!(pass, "gap {gap:?}, min errors {min_errors}");
}

#[test]
fn criterion_5_two_user_gaps() {
    let gap3 = &sweeps()[&(Scenario::Gap3, 500)];
    let gap6 = &sweeps()[&(Scenario::Gap6, 500)];
    let mut pass = true;
    let mut detail = String::new();
    for user in 1..=2 {
        let g3 = gap_with_bounds(gap3, user);
        let g6 = gap_with_bounds(gap6, user);
        let (Some((g3, _, g3_hi)), Some((g6, g6_lo, _))) = (g3, g6) else {
            pass = false;
            detail.push_str(&format!("user {user}: missing crossing; "));
            continue;
        };
        // 6 dB-gap gaps must not exceed the 3 dB-gap gaps (within CI overlap)
        pass &= g3 <= 1.5 && g6 <= 1.0 && (g6 <= g3 || g6_lo <= g3_hi);
        detail.push_str(&format!("user {user}: gap3 {g3:.3} dB, gap6 {g6:.3} dB; "));
    }
    report(
        5,
        "two-user gaps at SER 1e-2",
        pass,
        detail.trim_end_matches("; "),
    );
    assert!(pass, "{detail}");
}

#[test]
fn criterion_6_block_length_tradeoff() {
    let mut pass = true;
    let mut detail = String::new();
    for (scenario, users) in [
        (Scenario::P2p, 1usize),
        (Scenario::Gap3, 2),
        (Scenario::Gap6, 2),
    ] {
        for user in 1..=users {
            let gaps: Vec<Option<(f64, f64, f64)>> = [500usize, 100, 50]
                .iter()
                .map(|&n| gap_with_bounds(&sweeps()[&(scenario, n)], user))
                .collect();
            let mut line = format!("{scenario:?} user {user}: ");
            for (n, g) in [500, 100, 50].iter().zip(&gaps) {
                match g {
                    Some((g, _, _)) => line.push_str(&format!("N={n} gap {g:.3}; ")),
                    None => line.push_str(&format!("N={n} gap none; ")),
                }
            }
            // non-decreasing as N shrinks, within CI overlap: the smaller-N
            // gap's upper bound must reach the larger-N gap's lower bound
            for w in gaps.windows(2) {
                match (w[0], w[1]) {
                    (Some((_, lo_big, _)), Some((_, _, hi_small))) => {
                        pass &= hi_small >= lo_big;
                    }
                    _ => pass = false,
                }
            }
            detail.push_str(&line);
        }
    }
    report(
        6,
        "block-length tradeoff",
        pass,
        detail.trim_end_matches("; "),
    );
    assert!(pass, "{detail}");
}

#[test]
fn criterion_7_three_user_smoke() {
    let config = ExperimentConfig {
        k: 3,
        n: 500,
        snr_grid_db: (0..5)
            .map(|i| {
                let g1 = 16.0 + 6.0 * i as f64;
                vec![g1, g1 - 6.0, g1 - 12.0]
            })
            .collect(),
        frames_per_point: 800,
        min_errors: u64::MAX,
        noise_power: 1.0,
        seed: 0xAC7,
        detectors: vec![DetectorKind::GmmSic],
        em: EmConfig::default(),
        alignment: Alignment::Genie,
    };
    let records = run_sweep(&config).unwrap();
    let mut pass = true;
    let mut detail = String::new();
    for user in 1..=3 {
        let pts = curve(&records, DetectorKind::GmmSic, user);
        let last = pts.last().unwrap();
        pass &= last.1 <= 1e-2;
        for w in pts.windows(2) {
            // monotone non-increasing within CI overlap
            pass &= w[1].1 <= w[0].1 + w[0].2 + w[1].2;
        }
        detail.push_str(&format!("user {user} final SER {:.3e}; ", last.1));
    }
    report(
        7,
        "three-user smoke",
        pass,
        detail.trim_end_matches("; "),
    );
    assert!(pass, "{detail}");
}

#[test]
fn criterion_8_centroid_recovery() {
    let trials = 500;
    let n = 400usize; // 100 samples per component
    let mut ok = 0usize;
    for trial in 0..trials as u64 {
        let mut rng = substream(0xAC8, &[trial]);
        let gain = 0.5 + 1.5 * rng.random::<f64>();
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let h = Complex64::from_polar(gain, phase);
        // adjacent generators sit |h| * sqrt(2) apart; pick sigma for >= 8
        let sigma = h.norm() * std::f64::consts::SQRT_2 / 8.0;
        let generators: Vec<Complex64> = (0..QPSK_ORDER).map(|j| h * qpsk_point(j)).collect();
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let g = generators[i % QPSK_ORDER];
            // Box-Muller pair for an isotropic Gaussian scatter
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            let r = sigma * (-2.0 * u1.ln()).sqrt();
            let ang = std::f64::consts::TAU * u2;
            samples.push(g + Complex64::from_polar(r, ang));
        }
        let Ok(state) = fit(&samples, &EmConfig::default()) else {
            continue;
        };
        let limit = 4.0 * sigma / ((n / QPSK_ORDER) as f64).sqrt();
        let recovered = generators.iter().all(|&g| {
            state
                .centroids()
                .iter()
                .map(|&m| (m - g).norm())
                .fold(f64::INFINITY, f64::min)
                <= limit
        });
        if recovered {
            ok += 1;
        }
    }
    let rate = ok as f64 / trials as f64;
    let pass = rate >= 0.95;
    report(
        8,
        "centroid recovery",
        pass,
        &format!("{ok}/{trials} trials within 4 sigma / sqrt(N/4)"),
    );
    assert!(pass, "recovery rate {rate}");
}

#[test]
fn criterion_9_equivariance() {
    let mut rng = substream(0xAC9, &[]);
    let mut checks = 0usize;
    for _ in 0..1000 {
        let h = Complex64::from_polar(
            0.2 + 3.0 * rng.random::<f64>(),
            rng.random::<f64>() * std::f64::consts::TAU,
        );
        let alpha = rng.random::<f64>() * std::f64::consts::TAU;
        let c = 0.1 + 5.0 * rng.random::<f64>();
        let centroids = [
            h * qpsk_point(0),
            h * qpsk_point(1),
            h * qpsk_point(2),
            h * qpsk_point(3),
        ];
        let rot = Complex64::from_polar(1.0, alpha);
        let rotated = [
            centroids[0] * rot,
            centroids[1] * rot,
            centroids[2] * rot,
            centroids[3] * rot,
        ];
        let theta1 = estimate_phase_rotation(&centroids).unwrap();
        let theta2 = estimate_phase_rotation(&rotated).unwrap();
        // theta shifts by alpha modulo the pi/2 label ambiguity
        let d = (theta2 - theta1 - alpha) / std::f64::consts::FRAC_PI_2;
        let frac = (d - d.round()).abs();
        assert!(frac < 1e-9, "theta shift off by {frac} turns");

        // |h_hat| scales by c
        let scaled = [
            centroids[0] * c,
            centroids[1] * c,
            centroids[2] * c,
            centroids[3] * c,
        ];
        let h1 = estimate_channel(&centroids, theta1).unwrap();
        let h2 = estimate_channel(&scaled, theta1).unwrap();
        assert!(
            (h2.norm() - c * h1.norm()).abs() <= 1e-9 * (1.0 + c * h1.norm()),
            "scale equivariance violated"
        );

        // post-alignment detected symbols unchanged under rotation
        let samples: Vec<Complex64> = (0..32)
            .map(|_| {
                h * qpsk_point(rng.random_range(0..QPSK_ORDER))
                    + Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                        * (0.1 * h.norm())
            })
            .collect();
        let rotated_samples: Vec<Complex64> = samples.iter().map(|&z| z * rot).collect();
        let d1 = detect_symbols(&samples, theta1);
        let d2 = detect_symbols(&rotated_samples, theta2);
        let k = (((theta1 + alpha - theta2) / std::f64::consts::FRAC_PI_2).round() as i64)
            .rem_euclid(QPSK_ORDER as i64) as usize;
        for (a, b) in d1.iter().zip(d2.iter()) {
            assert_eq!((a + k) % QPSK_ORDER, *b, "detection not rotation-equivariant");
        }
        checks += 1;
    }
    report(9, "rotation/scale equivariance", true, &format!("{checks} checks at 1e-9"));
}

#[test]
fn criterion_10_determinism() {
    let bin = env!("CARGO_BIN_EXE_noma-cluster");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "4")] {
        let out = dir.path().join(run);
        let status = std::process::Command::new(bin)
            .args([
                "figures",
                "--out",
                out.to_str().unwrap(),
                "--scale",
                "0.01",
                "--seed",
                "9",
                "--workers",
                workers,
            ])
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        let mut csvs: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        csvs.sort();
        let blob: Vec<(String, Vec<u8>)> = csvs
            .iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(p).unwrap(),
                )
            })
            .collect();
        outputs.push(blob);
    }
    let pass = !outputs[0].is_empty() && outputs[0] == outputs[1];
    report(
        10,
        "determinism",
        pass,
        &format!(
            "{} CSV files byte-identical across --workers 1 vs 4",
            outputs[0].len()
        ),
    );
    assert!(pass);
}
