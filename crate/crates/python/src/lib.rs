//! Python bindings: frame simulation, GMM fitting, the blind SIC receiver,
//! the full-CSI ML baseline, and small SER sweeps.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use noma_cluster::gmm_em::{fit, EmConfig};
use noma_cluster::receiver::{align_labels, ml_detect_full_csi, sic_detect};
use noma_cluster::rng::{substream, TAG_CHANNEL, TAG_NOISE, TAG_SYMBOLS};
use noma_cluster::signal_model::{
    db_to_linear, generate_frame, qpsk_point as qpsk, sample_channel, transmit,
    ChannelRealization, ReceivedBlock,
};
use noma_cluster::sim::{run_sweep, Alignment, DetectorKind, ExperimentConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Canonical QPSK constellation point for an index in 0..4.
#[pyfunction]
fn qpsk_point(index: usize) -> PyResult<Complex64> {
    if index >= 4 {
        return Err(PyValueError::new_err("index must be in 0..4"));
    }
    Ok(qpsk(index))
}

/// Simulate one uplink frame: per-user Rayleigh channels at the given
/// per-user SNRs (dB), uniform QPSK symbols, AWGN. Returns a dict with the
/// received samples, true channels, and transmitted symbol indices.
#[pyfunction]
#[pyo3(signature = (snr_db, n, seed, noise_power = 1.0))]
fn simulate_frame(
    py: Python<'_>,
    snr_db: Vec<f64>,
    n: usize,
    seed: u64,
    noise_power: f64,
) -> PyResult<Py<PyDict>> {
    let k = snr_db.len();
    let mut ch_rng = substream(seed, &[0, 0, TAG_CHANNEL]);
    let channels = snr_db
        .iter()
        .enumerate()
        .map(|(u, &db)| sample_channel(u, db_to_linear(db) * noise_power, &mut ch_rng))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let frame = generate_frame(k, n, &mut substream(seed, &[0, 0, TAG_SYMBOLS])).map_err(err)?;
    let rx = transmit(
        &frame,
        &channels,
        noise_power,
        &mut substream(seed, &[0, 0, TAG_NOISE]),
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("samples", rx.samples)?;
    out.set_item(
        "channels",
        channels.iter().map(|c| c.h).collect::<Vec<_>>(),
    )?;
    out.set_item(
        "symbols",
        (0..k)
            .map(|u| frame.user_row(u).to_vec())
            .collect::<Vec<Vec<u8>>>(),
    )?;
    out.set_item("noise_power", noise_power)?;
    Ok(out.into())
}

/// Fit the four-component Gaussian mixture to complex samples. Returns the
/// centroids, hard assignments, iteration count, convergence flag, and the
/// (nondecreasing) log-likelihood history.
#[pyfunction]
fn fit_gmm(py: Python<'_>, samples: Vec<Complex64>) -> PyResult<Py<PyDict>> {
    let state = fit(&samples, &EmConfig::default()).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("centroids", state.centroids())?;
    out.set_item("assignments", state.assignments.clone())?;
    out.set_item("iterations", state.iterations)?;
    out.set_item("converged", state.converged)?;
    out.set_item("log_likelihood_history", state.log_likelihood_history.clone())?;
    Ok(out.into())
}

/// Run the blind SIC receiver on received samples for `k` users. Returns
/// detected symbol rows (stage order), per-stage channel estimates, phase
/// rotations, and erasure flags.
#[pyfunction]
#[pyo3(signature = (samples, k, noise_power = 1.0))]
fn detect_sic(
    py: Python<'_>,
    samples: Vec<Complex64>,
    k: usize,
    noise_power: f64,
) -> PyResult<Py<PyDict>> {
    let rx = ReceivedBlock {
        samples,
        noise_power,
    };
    let result = sic_detect(&rx, k, &EmConfig::default()).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("detected", result.detected_symbols.clone())?;
    out.set_item("channel_estimates", result.channel_estimates.clone())?;
    out.set_item(
        "phase_rotations",
        result
            .stages
            .iter()
            .map(|s| s.phase_rotation)
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "erasures",
        result.stages.iter().map(|s| s.erasure).collect::<Vec<_>>(),
    )?;
    out.set_item("detection_order", result.detection_order.clone())?;
    Ok(out.into())
}

/// Joint maximum-likelihood detection with known channels.
#[pyfunction]
#[pyo3(signature = (samples, channels, noise_power = 1.0))]
fn detect_ml(
    samples: Vec<Complex64>,
    channels: Vec<Complex64>,
    noise_power: f64,
) -> PyResult<Vec<Vec<usize>>> {
    let chans: Vec<ChannelRealization> = channels
        .iter()
        .enumerate()
        .map(|(u, &h)| ChannelRealization {
            user: u,
            h,
            beta: h.norm_sqr(),
        })
        .collect();
    let rx = ReceivedBlock {
        samples,
        noise_power,
    };
    ml_detect_full_csi(&rx, &chans).map_err(err)
}

/// Per-user symbol error counts of the blind receiver against the known
/// truth, with the pi/2 label ambiguity resolved by genie alignment.
#[pyfunction]
#[pyo3(signature = (samples, channels, symbols, noise_power = 1.0))]
fn sic_symbol_errors(
    samples: Vec<Complex64>,
    channels: Vec<Complex64>,
    symbols: Vec<Vec<u8>>,
    noise_power: f64,
) -> PyResult<Vec<usize>> {
    let k = channels.len();
    let chans: Vec<ChannelRealization> = channels
        .iter()
        .enumerate()
        .map(|(u, &h)| ChannelRealization {
            user: u,
            h,
            beta: h.norm_sqr(),
        })
        .collect();
    let frame = noma_cluster::Frame::from_rows(&symbols).map_err(err)?;
    let rx = ReceivedBlock {
        samples,
        noise_power,
    };
    let sic = sic_detect(&rx, k, &EmConfig::default()).map_err(err)?;
    let (aligned, _) = align_labels(&sic.detected_symbols, &frame, &chans, &sic).map_err(err)?;
    Ok((0..k)
        .map(|u| {
            (0..frame.len())
                .filter(|&i| aligned[u][i] != frame.symbol(u, i))
                .count()
        })
        .collect())
}

/// Monte Carlo SER sweep. `snr_grid_db` is a list of per-user SNR tuples;
/// returns one dict per (point, detector, user) with errors, totals, SER,
/// and the Wilson 95% half-width.
#[pyfunction]
#[pyo3(signature = (k, n, snr_grid_db, frames_per_point, seed, detectors = vec![], noise_power = 1.0, min_errors = u64::MAX))]
#[allow(clippy::too_many_arguments)]
fn ser_sweep(
    py: Python<'_>,
    k: usize,
    n: usize,
    snr_grid_db: Vec<Vec<f64>>,
    frames_per_point: usize,
    seed: u64,
    detectors: Vec<String>,
    noise_power: f64,
    min_errors: u64,
) -> PyResult<Vec<Py<PyDict>>> {
    let detectors = if detectors.is_empty() {
        vec![DetectorKind::GmmSic, DetectorKind::MlCsi]
    } else {
        detectors
            .iter()
            .map(|d| d.parse::<DetectorKind>().map_err(err))
            .collect::<PyResult<Vec<_>>>()?
    };
    let config = ExperimentConfig {
        k,
        n,
        snr_grid_db,
        frames_per_point,
        min_errors,
        noise_power,
        seed,
        detectors,
        em: EmConfig::default(),
        alignment: Alignment::Genie,
    };
    let records = run_sweep(&config).map_err(err)?;
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("detector", r.detector.as_str())?;
            d.set_item("user", r.user)?;
            d.set_item("snr_tuple_db", r.snr_tuple_db.clone())?;
            d.set_item("snr_user_db", r.snr_user_db())?;
            d.set_item("frames", r.frames)?;
            d.set_item("symbols", r.symbols_total)?;
            d.set_item("errors", r.symbol_errors)?;
            d.set_item("ser", r.ser())?;
            d.set_item("ci95", r.ci95())?;
            Ok(d.into())
        })
        .collect()
}

#[pymodule]
fn noma_cluster_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(qpsk_point, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_frame, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm, m)?)?;
    m.add_function(wrap_pyfunction!(detect_sic, m)?)?;
    m.add_function(wrap_pyfunction!(detect_ml, m)?)?;
    m.add_function(wrap_pyfunction!(sic_symbol_errors, m)?)?;
    m.add_function(wrap_pyfunction!(ser_sweep, m)?)?;
    Ok(())
}
