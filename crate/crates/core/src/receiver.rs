//! Blind SIC receiver and the full-CSI maximum-likelihood baseline.
//!
//! Each SIC stage fits a 4-component mixture to the current residual,
//! estimates the stage's phase rotation from the cluster centroids, slices
//! symbols with rotated decision boundaries, averages the centroids into a
//! channel estimate, reconstructs the stage signal, and subtracts it. A
//! blind QPSK stage cannot tell a channel phase from that phase plus a
//! multiple of pi/2, so SER scoring uses genie label alignment against the
//! true channels.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gmm_em::{fit, EmConfig, GmmState};
use crate::rng::substream;
use crate::signal_model::{qpsk_point, ChannelRealization, Frame, ReceivedBlock, QPSK_ORDER};

/// Estimated stage power below which the remaining stages are erased.
const CHANNEL_FLOOR: f64 = 1e-12;

/// Per-stage receiver output.
#[derive(Debug, Clone)]
pub struct StageEstimate {
    /// Cluster means as complex numbers, in component order.
    pub centroids: [Complex64; QPSK_ORDER],
    /// Common phase rotation of the centroids, in (-pi/4, pi/4].
    pub phase_rotation: f64,
    pub channel_estimate: Complex64,
    /// Detected symbol indices for this stage.
    pub assignments: Vec<usize>,
    /// Residual after cancelling this stage.
    pub residual: Vec<Complex64>,
    /// Stage could not be estimated; assignments are all zero.
    pub erasure: bool,
    pub gmm_iterations: usize,
    pub gmm_converged: bool,
    pub gmm_fallback_init: bool,
}

/// Full blind SIC result.
#[derive(Debug, Clone)]
pub struct SicResult {
    /// Stage estimates in decode order (strongest residual first).
    pub stages: Vec<StageEstimate>,
    /// Detected symbols, one row per stage in decode order. After the joint
    /// refinement pass these are the lattice decisions, not the raw
    /// per-stage slices (which stay in `stages[..].assignments`).
    pub detected_symbols: Vec<Vec<usize>>,
    /// Final per-stage channel estimates (refined when refinement ran).
    pub channel_estimates: Vec<Complex64>,
    /// Stage indices sorted by decreasing estimated power.
    pub detection_order: Vec<usize>,
}

/// How blind stage labels are mapped onto true users for scoring.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    /// Stage index assigned to each user.
    pub stage_for_user: Vec<usize>,
    /// Applied label rotation (multiple of pi/2) per user.
    pub rotation_for_user: Vec<usize>,
    /// Whether a full stage/user permutation search ran (near-equal powers).
    pub permutation_searched: bool,
}

fn wrap_quarter(theta: f64) -> f64 {
    // reduce to (-pi/4, pi/4]
    let q = std::f64::consts::FRAC_PI_2;
    let mut t = theta % q;
    if t > std::f64::consts::FRAC_PI_4 {
        t -= q;
    } else if t <= -std::f64::consts::FRAC_PI_4 {
        t += q;
    }
    t
}

/// Common phase rotation of four cluster centroids.
///
/// Each centroid is matched to its nearest canonical QPSK phase modulo pi/2
/// and the wrapped differences are combined by a circular mean: raising a
/// centroid to the fourth power maps every canonical phase onto pi, so the
/// mean of `-c^4 / |c|^4` carries four times the common rotation, seam-free.
pub fn estimate_phase_rotation(centroids: &[Complex64; QPSK_ORDER]) -> Result<f64> {
    let mut sum = Complex64::new(0.0, 0.0);
    for (i, &c) in centroids.iter().enumerate() {
        let r = c.norm();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateCentroid(format!(
                "centroid {i} has magnitude {r}"
            )));
        }
        let unit = c / r;
        let fourth = unit * unit * unit * unit;
        sum -= fourth;
    }
    if sum.norm() < 1e-12 {
        return Err(Error::DegenerateCentroid(
            "centroid rotations cancel; no common phase".into(),
        ));
    }
    Ok(wrap_quarter(sum.arg() / 4.0))
}

/// Slice samples into constellation indices with decision boundaries rotated
/// by `theta`. Boundary ties break toward the lower index.
pub fn detect_symbols(samples: &[Complex64], theta: f64) -> Vec<usize> {
    let rot = Complex64::from_polar(1.0, -theta);
    samples
        .iter()
        .map(|&z| {
            let w = z * rot;
            match (w.re >= 0.0, w.im >= 0.0) {
                (true, true) => 0,
                (false, true) => 1,
                (false, false) => 2,
                (true, false) => 3,
            }
        })
        .collect()
}

/// Average the centroids into a channel estimate: each centroid is divided
/// by its matched canonical symbol and the quotients are averaged.
pub fn estimate_channel(centroids: &[Complex64; QPSK_ORDER], theta: f64) -> Result<Complex64> {
    let matched = detect_symbols(centroids, theta);
    let mut sum = Complex64::new(0.0, 0.0);
    for (i, &c) in centroids.iter().enumerate() {
        if !(c.norm() > 0.0) {
            return Err(Error::DegenerateCentroid(format!("centroid {i} is zero")));
        }
        sum += c / qpsk_point(matched[i]);
    }
    Ok(sum / QPSK_ORDER as f64)
}

/// Candidate score: total scatter of the samples around the rigid centers
/// `h_hat * s_k` the candidate implies (each sample charged to its nearest
/// center). The correct grouping puts centers in the middle of the actual
/// clusters; collapsed, striped, or square-midpoint local optima place
/// them off the data and score far worse. Candidates whose centroids do
/// not cover all four symbols are rejected outright.
fn rigid_center_scatter(
    samples: &[Complex64],
    centroids: &[Complex64; QPSK_ORDER],
    theta: f64,
    h_hat: Complex64,
) -> f64 {
    let matched = detect_symbols(centroids, theta);
    let mut seen = [false; QPSK_ORDER];
    for &s in &matched {
        seen[s] = true;
    }
    if !seen.iter().all(|&s| s) {
        return f64::INFINITY;
    }
    let centers: Vec<Complex64> = (0..QPSK_ORDER).map(|k| h_hat * qpsk_point(k)).collect();
    samples
        .iter()
        .map(|&z| {
            centers
                .iter()
                .map(|&c| (z - c).norm_sqr())
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// One fitted stage candidate: state (in its own rotated frame, valid for
/// its assignments), centroids in the data frame, theta and channel estimate.
struct StageFit {
    state: GmmState,
    centroids: [Complex64; QPSK_ORDER],
    theta: f64,
    h_hat: Complex64,
}

/// Fit a stage mixture with rotation multi-start. The quadrant init is
/// biased whenever the cluster pattern straddles the axes (channel phase
/// near an odd multiple of pi/4), so the fit is repeated on pre-rotated
/// copies of the data at pi/8 spacing. Rotation preserves the model class,
/// so only the starting partition differs. Likelihood cannot arbitrate
/// between candidates (striped local optima can out-score the true
/// grouping), so the winner is the candidate whose centroids best form a
/// rigid QPSK square.
fn fit_stage(residual: &[Complex64], config: &EmConfig) -> Result<StageFit> {
    let mut best: Option<(StageFit, f64)> = None;
    let mut last_err = None;
    for step in 0..4 {
        let delta = step as f64 * std::f64::consts::FRAC_PI_8;
        let rot = Complex64::from_polar(1.0, -delta);
        let rotated: Vec<Complex64> = residual.iter().map(|&z| z * rot).collect();
        let state = match fit(&rotated, config) {
            Ok(s) => s,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let back = Complex64::from_polar(1.0, delta);
        let centroids = [
            state.components[0].mean * back,
            state.components[1].mean * back,
            state.components[2].mean * back,
            state.components[3].mean * back,
        ];
        let candidate = (|| -> Result<(StageFit, f64)> {
            let theta = estimate_phase_rotation(&centroids)?;
            let h_hat = estimate_channel(&centroids, theta)?;
            let score = rigid_center_scatter(residual, &centroids, theta, h_hat);
            Ok((
                StageFit {
                    state,
                    centroids,
                    theta,
                    h_hat,
                },
                score,
            ))
        })();
        match candidate {
            Ok((fitted, score)) => {
                if best.as_ref().map_or(true, |(_, b)| score < *b) {
                    best = Some((fitted, score));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((fitted, _)) => Ok(fitted),
        None => Err(last_err.unwrap_or_else(|| {
            Error::DegenerateCentroid("no usable stage fit".into())
        })),
    }
}

/// Blind successive interference cancellation over `k` users.
pub fn sic_detect(received: &ReceivedBlock, k: usize, em_config: &EmConfig) -> Result<SicResult> {
    let n = received.samples.len();
    if k < 1 {
        return Err(Error::InvalidParameter("user count must be >= 1".into()));
    }
    if n < QPSK_ORDER * k {
        return Err(Error::InsufficientData {
            got: n,
            need: QPSK_ORDER * k,
        });
    }
    let mut residual = received.samples.clone();
    let mut stages: Vec<StageEstimate> = Vec::with_capacity(k);
    let mut erased = false;
    for _stage in 0..k {
        if erased {
            stages.push(erasure_stage(&residual));
            continue;
        }
        let stage_result = (|| -> Result<StageEstimate> {
            let fitted = match fit_stage(&residual, em_config) {
                Ok(f) => f,
                Err(Error::InsufficientData { got, need }) => {
                    return Err(Error::InsufficientData { got, need })
                }
                Err(e) => return Err(e),
            };
            let StageFit {
                state: gmm,
                centroids,
                theta,
                h_hat,
            } = fitted;
            if h_hat.norm() < CHANNEL_FLOOR {
                return Err(Error::DegenerateCentroid("estimated channel below floor".into()));
            }
            // map each sample's mixture component to that component's
            // matched canonical symbol; the fitted covariances then act as
            // interference-aware decision regions. If the matching is not a
            // bijection (collapsed fit), fall back to boundary slicing.
            // assignments are rotation-invariant, so the rotated-frame state
            // and the back-rotated centroids can be used together.
            let matched = detect_symbols(&centroids, theta);
            let mut seen = [false; QPSK_ORDER];
            for &s in &matched {
                seen[s] = true;
            }
            let assignments: Vec<usize> = if seen.iter().all(|&s| s) {
                gmm.assignments.iter().map(|&j| matched[j]).collect()
            } else {
                detect_symbols(&residual, theta)
            };
            for (r, &idx) in residual.iter_mut().zip(assignments.iter()) {
                *r -= h_hat * qpsk_point(idx);
            }
            Ok(StageEstimate {
                centroids,
                phase_rotation: theta,
                channel_estimate: h_hat,
                assignments,
                residual: residual.clone(),
                erasure: false,
                gmm_iterations: gmm.iterations,
                gmm_converged: gmm.converged,
                gmm_fallback_init: gmm.flags.fallback_init,
            })
        })();
        if let Err(Error::InsufficientData { got, need }) = &stage_result {
            return Err(Error::InsufficientData {
                got: *got,
                need: *need,
            });
        }
        match stage_result {
            Ok(stage) => stages.push(stage),
            Err(_) => {
                erased = true;
                stages.push(erasure_stage(&residual));
            }
        }
    }
    let mut channel_estimates: Vec<Complex64> =
        stages.iter().map(|s| s.channel_estimate).collect();
    let mut detected_symbols: Vec<Vec<usize>> =
        stages.iter().map(|s| s.assignments.clone()).collect();
    // Joint refinement: the cascade of stage fits pins down the full
    // superposition lattice h^T s, so re-detecting each sample against all
    // 4^k lattice points recovers the joint decision the one-stage-at-a-time
    // slicing gives up (a weak-user offset can flip a strong-user decision).
    // Each candidate channel vector is polished by alternating lattice
    // re-detection with a decision-directed least-squares channel re-fit;
    // the fixed point with the smallest lattice scatter wins. Skip when any
    // stage was erased.
    if !erased && QPSK_ORDER.checked_pow(k as u32).is_some_and(|m| m <= 65536) {
        let mut candidates = vec![channel_estimates.clone()];
        if let Some(m) = moment_lattice_channels(&received.samples, k) {
            candidates.push(m);
        }
        // peeled variant: keep the leading stage estimates and re-derive the
        // last two channels from the moments of that stage's residual, which
        // are far better conditioned than the k-user moments
        if k >= 3 {
            if let Some(tail) = moment_lattice_channels(&stages[k - 3].residual, 2) {
                let mut peeled = channel_estimates[..k - 2].to_vec();
                peeled.extend(tail);
                candidates.push(peeled);
            }
            // pair-first variant for three users: the two largest fourth
            // powers dominate the pair moments even with a third user
            // present, so estimate and cancel them jointly, then read the
            // remaining channel off the residual's fourth moment
            if k == 3 {
                if let Some(pair) = moment_lattice_channels(&received.samples, 2) {
                    let (pair, rows) = polish_joint(&received.samples, pair);
                    let residual: Vec<Complex64> = received
                        .samples
                        .iter()
                        .enumerate()
                        .map(|(i, &y)| {
                            y - pair[0] * qpsk_point(rows[0][i]) - pair[1] * qpsk_point(rows[1][i])
                        })
                        .collect();
                    let n = residual.len() as f64;
                    let m4: Complex64 =
                        residual.iter().map(|&r| r * r * r * r).sum::<Complex64>() / n;
                    let u = -m4;
                    let tail = Complex64::from_polar(u.norm().powf(0.25), u.arg() / 4.0);
                    if tail.is_finite() && tail.norm() > CHANNEL_FLOOR {
                        candidates.push(vec![pair[0], pair[1], tail]);
                    }
                }
            }
        }
        let mut best: Option<(f64, Vec<Complex64>, Vec<Vec<usize>>)> = None;
        for start in candidates {
            let (h, rows) = polish_joint(&received.samples, start);
            let scatter = lattice_scatter(&received.samples, &h, &rows);
            if best.as_ref().is_none_or(|(b, _, _)| scatter < *b) {
                best = Some((scatter, h, rows));
            }
        }
        if let Some((mut scatter, mut h, mut rows)) = best {
            // a correct fit scatters about noise_power per sample; sitting
            // well above that means every candidate landed in a bad basin,
            // so hop: perturb the running best and re-polish (fixed internal
            // substream keeps the receiver deterministic)
            let energy: f64 = received.samples.iter().map(|y| y.norm_sqr()).sum();
            let target = 1.3 * received.noise_power * n as f64 + 1e-9 * energy;
            if scatter > target {
                let mut prng = substream(0x686f70, &[]);
                for r in 0..24 {
                    let sigma = if r % 2 == 0 { 0.2 } else { 0.4 };
                    let start: Vec<Complex64> = h
                        .iter()
                        .map(|&c| {
                            let z = Complex64::new(
                                prng.random::<f64>() - 0.5,
                                prng.random::<f64>() - 0.5,
                            ) * (2.0 * sigma);
                            c * (Complex64::new(1.0, 0.0) + z)
                        })
                        .collect();
                    let (ph, prows) = polish_joint(&received.samples, start);
                    let ps = lattice_scatter(&received.samples, &ph, &prows);
                    if ps < scatter {
                        scatter = ps;
                        h = ph;
                        rows = prows;
                    }
                    if scatter <= target {
                        break;
                    }
                }
            }
            channel_estimates = h;
            detected_symbols = rows;
        }
    }
    let mut detection_order: Vec<usize> = (0..k).collect();
    detection_order.sort_by(|&a, &b| {
        channel_estimates[b]
            .norm_sqr()
            .partial_cmp(&channel_estimates[a].norm_sqr())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(SicResult {
        stages,
        detected_symbols,
        channel_estimates,
        detection_order,
    })
}

/// Alternate lattice re-detection and decision-directed channel re-fits
/// until the decisions stop changing (or a small iteration cap).
fn polish_joint(
    samples: &[Complex64],
    start: Vec<Complex64>,
) -> (Vec<Complex64>, Vec<Vec<usize>>) {
    let mut h = start;
    let mut rows = joint_lattice_detect(samples, &h);
    for _round in 0..8 {
        match decision_directed_channels(samples, &rows) {
            Some(refined) => h = refined,
            None => break,
        }
        let next = joint_lattice_detect(samples, &h);
        if next == rows {
            break;
        }
        rows = next;
    }
    (h, rows)
}

/// Total squared distance of the samples to their detected lattice points.
fn lattice_scatter(samples: &[Complex64], h: &[Complex64], rows: &[Vec<usize>]) -> f64 {
    samples
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mean: Complex64 = h
                .iter()
                .zip(rows.iter())
                .map(|(&hj, row)| hj * qpsk_point(row[i]))
                .sum();
            (y - mean).norm_sqr()
        })
        .sum()
}

/// Roots of a monic complex polynomial t^d + c[0] t^{d-1} + ... + c[d-1]
/// by Durand-Kerner iteration.
fn polynomial_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let d = coeffs.len();
    let eval = |t: Complex64| {
        let mut p = Complex64::new(1.0, 0.0);
        for &c in coeffs {
            p = p * t + c;
        }
        p
    };
    // starting points on a circle scaled to the coefficient magnitudes,
    // at angles that avoid real-axis symmetry traps
    let radius = 1.0
        + coeffs
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max)
            .powf(1.0 / d as f64);
    let mut roots: Vec<Complex64> = (0..d)
        .map(|i| Complex64::from_polar(radius, 0.4 + std::f64::consts::TAU * i as f64 / d as f64))
        .collect();
    for _ in 0..200 {
        let mut shift = 0.0f64;
        for i in 0..d {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..d {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() < 1e-300 {
                continue;
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            shift = shift.max(step.norm());
        }
        if shift < 1e-12 * radius.powi(d as i32) {
            break;
        }
    }
    roots
}

/// Blind lattice estimate for two or three users from higher-order sample
/// moments.
///
/// With i.i.d. uniform QPSK symbols and circularly symmetric noise, all odd
/// and non-multiple-of-four symbol moments vanish and every noise moment
/// E[n^m], m >= 1, is zero. Writing u_i = h_i^4 and e_j for the elementary
/// symmetric polynomials of the u_i (s^4 = -1 for every QPSK point):
///   E[y^4]  = -e1
///   E[y^8]  = e1^2 + 68 e2
///   E[y^12] = -(e1^3 + 492 e1 e2 + 33168 e3)
/// so the u_i are the roots of t^k - e1 t^{k-1} + e2 t^{k-2} - ... . The
/// fourth roots carry the usual pi/2 label ambiguity; any branch works
/// because scoring is alignment-invariant. Returned strongest first.
fn moment_lattice_channels(samples: &[Complex64], k: usize) -> Option<Vec<Complex64>> {
    if !(2..=3).contains(&k) {
        return None;
    }
    let n = samples.len() as f64;
    let mut m4 = Complex64::new(0.0, 0.0);
    let mut m8 = Complex64::new(0.0, 0.0);
    let mut m12 = Complex64::new(0.0, 0.0);
    for &y in samples {
        let y2 = y * y;
        let y4 = y2 * y2;
        m4 += y4;
        m8 += y4 * y4;
        m12 += y4 * y4 * y4;
    }
    m4 /= n;
    m8 /= n;
    m12 /= n;
    let e1 = -m4;
    let e2 = (m8 - e1 * e1) / 68.0;
    let roots = if k == 2 {
        polynomial_roots(&[-e1, e2])
    } else {
        let e3 = (-m12 - e1 * e1 * e1 - 492.0 * e1 * e2) / 33168.0;
        polynomial_roots(&[-e1, e2, -e3])
    };
    let quarter = |w: Complex64| Complex64::from_polar(w.norm().powf(0.25), w.arg() / 4.0);
    let mut h: Vec<Complex64> = roots.into_iter().map(quarter).collect();
    if !h
        .iter()
        .all(|c| c.is_finite() && c.norm() > CHANNEL_FLOOR)
    {
        return None;
    }
    h.sort_by(|a, b| {
        b.norm_sqr()
            .partial_cmp(&a.norm_sqr())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Some(h)
}

/// Per-sample nearest point of the lattice `sum_j h[j] * s_j`, ties broken
/// toward the lexicographically smallest tuple (stage 0 most significant).
fn joint_lattice_detect(samples: &[Complex64], h: &[Complex64]) -> Vec<Vec<usize>> {
    let k = h.len();
    let hypotheses = QPSK_ORDER.pow(k as u32);
    let mut means = Vec::with_capacity(hypotheses);
    for code in 0..hypotheses {
        let mut mean = Complex64::new(0.0, 0.0);
        let mut c = code;
        for &hj in h.iter().rev() {
            mean += hj * qpsk_point(c % QPSK_ORDER);
            c /= QPSK_ORDER;
        }
        means.push(mean);
    }
    let mut rows = vec![vec![0usize; samples.len()]; k];
    for (i, &y) in samples.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (code, &m) in means.iter().enumerate() {
            let d = (y - m).norm_sqr();
            if d < best_d {
                best_d = d;
                best = code;
            }
        }
        let mut c = best;
        for row in rows.iter_mut().rev() {
            row[i] = c % QPSK_ORDER;
            c /= QPSK_ORDER;
        }
    }
    rows
}

/// Least-squares channel re-fit from detected symbols: solve the k x k
/// normal equations of `min_h sum_i |y_i - sum_j h_j s_{j,i}|^2` by Gaussian
/// elimination with partial pivoting. Returns None when the detected symbol
/// rows are too correlated to identify the channels.
fn decision_directed_channels(
    samples: &[Complex64],
    detected: &[Vec<usize>],
) -> Option<Vec<Complex64>> {
    let k = detected.len();
    let points: Vec<Vec<Complex64>> = detected
        .iter()
        .map(|row| row.iter().map(|&s| qpsk_point(s)).collect())
        .collect();
    // augmented system [G | b], G_uv = <x_u, x_v>, b_u = <x_u, y>
    let mut aug = vec![vec![Complex64::new(0.0, 0.0); k + 1]; k];
    for u in 0..k {
        for v in 0..k {
            aug[u][v] = points[u]
                .iter()
                .zip(points[v].iter())
                .map(|(&a, &b)| a.conj() * b)
                .sum();
        }
        aug[u][k] = points[u]
            .iter()
            .zip(samples.iter())
            .map(|(&a, &y)| a.conj() * y)
            .sum();
    }
    let scale = samples.len() as f64;
    for col in 0..k {
        let pivot = (col..k).max_by(|&a, &b| {
            aug[a][col]
                .norm_sqr()
                .partial_cmp(&aug[b][col].norm_sqr())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if aug[pivot][col].norm_sqr() <= (1e-9 * scale).powi(2) {
            return None;
        }
        aug.swap(col, pivot);
        for row in 0..k {
            if row == col {
                continue;
            }
            let f = aug[row][col] / aug[col][col];
            for c in col..=k {
                let sub = f * aug[col][c];
                aug[row][c] -= sub;
            }
        }
    }
    Some((0..k).map(|u| aug[u][k] / aug[u][u]).collect())
}

fn erasure_stage(residual: &[Complex64]) -> StageEstimate {
    StageEstimate {
        centroids: [Complex64::new(0.0, 0.0); QPSK_ORDER],
        phase_rotation: 0.0,
        channel_estimate: Complex64::new(0.0, 0.0),
        assignments: vec![0; residual.len()],
        residual: residual.to_vec(),
        erasure: true,
        gmm_iterations: 0,
        gmm_converged: false,
        gmm_fallback_init: false,
    }
}

/// Joint maximum-likelihood detection with known channels: per sample, the
/// hypothesis tuple minimizing `|y - h^T s|^2`, ties broken toward the
/// lexicographically smallest index tuple.
pub fn ml_detect_full_csi(
    received: &ReceivedBlock,
    channels: &[ChannelRealization],
) -> Result<Vec<Vec<usize>>> {
    let k = channels.len();
    if k < 1 {
        return Err(Error::InvalidParameter("need at least one channel".into()));
    }
    let hypotheses = QPSK_ORDER
        .checked_pow(k as u32)
        .filter(|&m| m <= 65536)
        .ok_or(Error::HypothesisSpace(usize::MAX))?;
    // hypothesis means in lexicographic tuple order (user 0 most significant)
    let mut means = Vec::with_capacity(hypotheses);
    for code in 0..hypotheses {
        let mut mean = Complex64::new(0.0, 0.0);
        let mut c = code;
        for ch in channels.iter().rev() {
            mean += ch.h * qpsk_point(c % QPSK_ORDER);
            c /= QPSK_ORDER;
        }
        means.push(mean);
    }
    let n = received.samples.len();
    let mut rows = vec![vec![0usize; n]; k];
    for (i, &y) in received.samples.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (code, &m) in means.iter().enumerate() {
            let d = (y - m).norm_sqr();
            if d < best_d {
                best_d = d;
                best = code;
            }
        }
        let mut c = best;
        for u in (0..k).rev() {
            rows[u][i] = c % QPSK_ORDER;
            c /= QPSK_ORDER;
        }
    }
    Ok(rows)
}

fn rotation_cost(h_hat: Complex64, h: Complex64, k: usize) -> f64 {
    (h_hat * Complex64::from_polar(1.0, k as f64 * std::f64::consts::FRAC_PI_2) - h).norm()
}

fn best_rotation(h_hat: Complex64, h: Complex64) -> (usize, f64) {
    (0..QPSK_ORDER)
        .map(|k| (k, rotation_cost(h_hat, h, k)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::new();
        for p in &out {
            for v in 0..k {
                if !p.contains(&v) {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
        }
        out = next;
    }
    out
}

/// Map blind stage labels onto true users for SER scoring (simulation only).
///
/// Users and stages are paired by power rank; each pair then gets the label
/// rotation `k*pi/2` whose rotated channel estimate is closest to the true
/// channel. When any two users' powers sit within 0.1 dB, all stage/user
/// permutations are searched instead of trusting the power ranking.
pub fn align_labels(
    detected: &[Vec<usize>],
    truth: &Frame,
    channels: &[ChannelRealization],
    estimates: &SicResult,
) -> Result<(Vec<Vec<usize>>, AlignmentReport)> {
    let k = channels.len();
    if detected.len() != k || truth.users() != k || estimates.stages.len() != k {
        return Err(Error::InvalidParameter(
            "detected rows, truth, channels, and stages must agree on K".into(),
        ));
    }
    // true users ranked by decreasing realized power |h|^2 (detection order
    // tracks the per-frame fade, not the average power)
    let mut user_rank: Vec<usize> = (0..k).collect();
    user_rank.sort_by(|&a, &b| {
        channels[b]
            .h
            .norm_sqr()
            .partial_cmp(&channels[a].h.norm_sqr())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let near_tie = user_rank.windows(2).any(|w| {
        let a = channels[w[0]].h.norm_sqr().max(1e-300);
        let b = channels[w[1]].h.norm_sqr().max(1e-300);
        (10.0 * (a / b).log10()).abs() < 0.1
    });

    let assignment: Vec<usize> = if near_tie && k > 1 {
        // stage index per user, minimizing total rotated-channel distance
        let mut best_cost = f64::INFINITY;
        let mut best = vec![0; k];
        for perm in permutations(k) {
            let cost: f64 = (0..k)
                .map(|user| {
                    let stage = estimates.detection_order[perm[user]];
                    best_rotation(estimates.channel_estimates[stage], channels[user].h).1
                })
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best = (0..k)
                    .map(|user| estimates.detection_order[perm[user]])
                    .collect();
            }
        }
        best
    } else {
        let mut stage_for_user = vec![0; k];
        for (rank, &user) in user_rank.iter().enumerate() {
            stage_for_user[user] = estimates.detection_order[rank];
        }
        stage_for_user
    };

    let n = truth.len();
    let mut aligned = vec![vec![0usize; n]; k];
    let mut rotations = vec![0usize; k];
    for user in 0..k {
        let stage = assignment[user];
        let (rot, _) = best_rotation(estimates.channel_estimates[stage], channels[user].h);
        rotations[user] = rot;
        for i in 0..n {
            // h ~ h_hat * e^{j rot pi/2} implies detected indices lead the
            // transmitted ones by rot
            aligned[user][i] = (detected[stage][i] + QPSK_ORDER - rot) % QPSK_ORDER;
        }
    }
    Ok((
        aligned,
        AlignmentReport {
            stage_for_user: assignment,
            rotation_for_user: rotations,
            permutation_searched: near_tie && k > 1,
        },
    ))
}
