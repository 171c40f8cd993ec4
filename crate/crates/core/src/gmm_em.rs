//! Bivariate Gaussian mixture fitting via expectation-maximization.
//!
//! The receiver fits a 4-component mixture to I/Q samples starting from a
//! quadrant partition, with fixed 0.25 weights and a hard-assignment
//! (classification) log-likelihood as the convergence monitor. The E/M steps
//! themselves are generic in the component count so they can be checked
//! against brute-force oracles on small inputs.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal_model::{qpsk_point, QPSK_ORDER};

const LN_2PI: f64 = 1.8378770664093453;

/// Symmetric 2x2 covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub fn identity_scaled(s: f64) -> Self {
        Self {
            xx: s,
            xy: 0.0,
            yy: s,
        }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let t = self.trace();
        let disc = ((self.xx - self.yy).powi(2) + 4.0 * self.xy * self.xy).sqrt();
        0.5 * (t - disc)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0
    }

    /// `(dx, dy) Sigma^{-1} (dx, dy)^T`; caller guarantees positive definite.
    fn quad_form(&self, dx: f64, dy: f64) -> f64 {
        (self.yy * dx * dx - 2.0 * self.xy * dx * dy + self.xx * dy * dy) / self.det()
    }

    fn add_identity(&mut self, c: f64) {
        self.xx += c;
        self.yy += c;
    }

    /// Raise the minimum eigenvalue to at least `floor` plus the extensive
    /// regularizer `c`.
    fn regularize(&mut self, c: f64, floor: f64) {
        self.add_identity(c);
        let min_eig = self.min_eigenvalue();
        if min_eig < floor {
            self.add_identity(floor - min_eig);
        }
    }
}

/// One mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    /// Mean as a complex number (re = I, im = Q).
    pub mean: Complex64,
    pub covariance: Cov2,
    pub weight: f64,
}

/// Status flags accumulated over a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitFlags {
    /// Quadrant initialization was replaced by the ring fallback.
    pub fallback_init: bool,
    /// Some component received negligible responsibility in an M-step and
    /// kept its previous parameters.
    pub stale_component: bool,
    /// A log-likelihood evaluation hit an assigned density of zero.
    pub degenerate_likelihood: bool,
}

/// Mixture state: components, soft responsibilities, hard assignments, and
/// the convergence monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmState {
    pub components: Vec<GaussianComponent>,
    /// Row-major N x M responsibility matrix.
    pub responsibilities: Vec<f64>,
    pub assignments: Vec<usize>,
    pub log_likelihood: f64,
    pub log_likelihood_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub flags: FitFlags,
}

impl GmmState {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn responsibility(&self, sample: usize, component: usize) -> f64 {
        self.responsibilities[sample * self.components.len() + component]
    }

    /// Component means as complex centroids.
    pub fn centroids(&self) -> Vec<Complex64> {
        self.components.iter().map(|c| c.mean).collect()
    }
}

/// EM configuration. `epsilon` is a per-sample threshold; a fit on `n`
/// samples stops once the log-likelihood gain drops below `epsilon * n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Keep weights pinned at 1/M (uniform symbols justify this); switching
    /// it off enables the weight update equation.
    pub weights_fixed: bool,
    pub covariance_floor: f64,
    /// Monitor the soft mixture log-likelihood instead of the hard
    /// classification form.
    pub soft_likelihood: bool,
    /// Constrain all components to one shared spherical covariance,
    /// giving a K-means-like comparator.
    pub shared_spherical_covariance: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iterations: 200,
            weights_fixed: true,
            covariance_floor: 1e-6,
            soft_likelihood: false,
            shared_spherical_covariance: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.covariance_floor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "covariance_floor must be > 0, got {}",
                self.covariance_floor
            )));
        }
        Ok(())
    }
}

/// Bivariate Gaussian density at `z`.
pub fn gaussian_pdf(z: Complex64, mean: Complex64, covariance: &Cov2) -> Result<f64> {
    if !covariance.is_positive_definite() {
        return Err(Error::DegenerateCovariance);
    }
    Ok(log_gaussian_pdf(z, mean, covariance).exp())
}

fn log_gaussian_pdf(z: Complex64, mean: Complex64, covariance: &Cov2) -> f64 {
    let q = covariance.quad_form(z.re - mean.re, z.im - mean.im);
    -0.5 * q - LN_2PI - 0.5 * covariance.det().ln()
}

fn quadrant_of(z: Complex64) -> usize {
    // quadrant order matches the constellation index order; boundary points
    // fall toward the lower index
    match (z.re >= 0.0, z.im >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

fn sample_moments(samples: &[Complex64]) -> (Complex64, Cov2) {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    let mut cov = Cov2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };
    for &z in samples {
        let dx = z.re - mean.re;
        let dy = z.im - mean.im;
        cov.xx += dx * dx;
        cov.xy += dx * dy;
        cov.yy += dy * dy;
    }
    cov.xx /= n;
    cov.xy /= n;
    cov.yy /= n;
    (mean, cov)
}

/// Extensive covariance regularizer: `floor * trace(global cov) / 2`, so the
/// floor tracks the data scale.
fn regularizer(samples: &[Complex64], floor: f64) -> f64 {
    let (_, global) = sample_moments(samples);
    floor * global.trace() / 2.0
}

/// Initialize a 4-component state from the four open quadrants. An empty
/// quadrant triggers the ring fallback (means on a circle of the mean sample
/// magnitude, shared covariance), reported via `flags.fallback_init`.
pub fn init_by_quadrants(samples: &[Complex64], config: &EmConfig) -> GmmState {
    let reg = regularizer(samples, config.covariance_floor);
    let mut buckets: [Vec<Complex64>; QPSK_ORDER] = Default::default();
    for &z in samples {
        buckets[quadrant_of(z)].push(z);
    }
    let fallback = buckets.iter().any(|b| b.is_empty());
    let components: Vec<GaussianComponent> = if fallback {
        let r = {
            let m = samples.iter().map(|z| z.norm()).sum::<f64>() / samples.len().max(1) as f64;
            if m > 0.0 {
                m
            } else {
                1.0
            }
        };
        let (_, global) = sample_moments(samples);
        let mut cov = Cov2 {
            xx: global.xx / 4.0,
            xy: global.xy / 4.0,
            yy: global.yy / 4.0,
        };
        cov.regularize(reg, config.covariance_floor);
        (0..QPSK_ORDER)
            .map(|j| GaussianComponent {
                mean: qpsk_point(j) * r,
                covariance: cov,
                weight: 0.25,
            })
            .collect()
    } else {
        buckets
            .iter()
            .map(|b| {
                let (mean, mut cov) = sample_moments(b);
                cov.regularize(reg, config.covariance_floor);
                GaussianComponent {
                    mean,
                    covariance: cov,
                    weight: 0.25,
                }
            })
            .collect()
    };
    let mut components = components;
    if config.shared_spherical_covariance {
        // pooled nearest-mean scatter keeps the init inside the constraint set
        let mut scatter = 0.0;
        for &z in samples {
            let d2 = components
                .iter()
                .map(|c| (z - c.mean).norm_sqr())
                .fold(f64::INFINITY, f64::min);
            scatter += d2;
        }
        let sigma2 = scatter / (2.0 * samples.len().max(1) as f64);
        for c in components.iter_mut() {
            c.covariance = Cov2::identity_scaled(sigma2);
            c.covariance.regularize(reg, config.covariance_floor);
        }
    }
    GmmState {
        components,
        responsibilities: Vec::new(),
        assignments: Vec::new(),
        log_likelihood: f64::NEG_INFINITY,
        log_likelihood_history: Vec::new(),
        iterations: 0,
        converged: false,
        flags: FitFlags {
            fallback_init: fallback,
            ..FitFlags::default()
        },
    }
}

/// E-step: recompute responsibilities and hard assignments in the log
/// domain. Ties in the argmax break toward the lowest component index.
pub fn e_step(state: &mut GmmState, samples: &[Complex64]) -> Result<()> {
    let m = state.components.len();
    for c in &state.components {
        if !c.covariance.is_positive_definite() {
            return Err(Error::DegenerateCovariance);
        }
    }
    state.responsibilities.resize(samples.len() * m, 0.0);
    state.assignments.resize(samples.len(), 0);
    let mut log_w: Vec<f64> = Vec::with_capacity(m);
    for c in &state.components {
        log_w.push(if c.weight > 0.0 {
            c.weight.ln()
        } else {
            f64::NEG_INFINITY
        });
    }
    let mut row = vec![0.0f64; m];
    for (i, &z) in samples.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for (j, c) in state.components.iter().enumerate() {
            row[j] = log_w[j] + log_gaussian_pdf(z, c.mean, &c.covariance);
            if row[j] > max {
                max = row[j];
            }
        }
        let mut norm = 0.0;
        if max.is_finite() {
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                norm += *v;
            }
        } else {
            // all components underflowed to zero weight; fall back to uniform
            row.iter_mut().for_each(|v| *v = 1.0);
            norm = m as f64;
        }
        let mut best = 0usize;
        for j in 0..m {
            let g = row[j] / norm;
            state.responsibilities[i * m + j] = g;
            if g > state.responsibilities[i * m + best] {
                best = j;
            }
        }
        state.assignments[i] = best;
    }
    Ok(())
}

/// Hard-assignment (classification) log-likelihood:
/// `sum_i ln(w_{m_i} g_{m_i}(z_i))`. Returns negative infinity if any
/// assigned density underflows to zero.
pub fn hard_log_likelihood(state: &GmmState, samples: &[Complex64]) -> f64 {
    let mut total = 0.0;
    for (i, &z) in samples.iter().enumerate() {
        let c = &state.components[state.assignments[i]];
        if c.weight <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += c.weight.ln() + log_gaussian_pdf(z, c.mean, &c.covariance);
    }
    total
}

/// Soft mixture log-likelihood: `sum_i ln sum_j w_j g_j(z_i)`.
pub fn soft_log_likelihood(state: &GmmState, samples: &[Complex64]) -> f64 {
    let mut total = 0.0;
    for &z in samples {
        let mut max = f64::NEG_INFINITY;
        let logs: Vec<f64> = state
            .components
            .iter()
            .map(|c| {
                let v = if c.weight > 0.0 {
                    c.weight.ln() + log_gaussian_pdf(z, c.mean, &c.covariance)
                } else {
                    f64::NEG_INFINITY
                };
                if v > max {
                    max = v;
                }
                v
            })
            .collect();
        if !max.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += max + logs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    }
    total
}

fn monitored_likelihood(state: &GmmState, samples: &[Complex64], config: &EmConfig) -> f64 {
    if config.soft_likelihood {
        soft_log_likelihood(state, samples)
    } else {
        hard_log_likelihood(state, samples)
    }
}

/// M-step: weighted-moment updates of weight, mean, and covariance, followed
/// by covariance regularization. A component whose total responsibility falls
/// below 1e-12 keeps its previous parameters and raises `stale_component`.
pub fn m_step(state: &mut GmmState, samples: &[Complex64], config: &EmConfig) {
    let m = state.components.len();
    let n = samples.len();
    let reg = regularizer(samples, config.covariance_floor);
    let mut resp_sums = vec![0.0f64; m];
    for i in 0..n {
        for j in 0..m {
            resp_sums[j] += state.responsibilities[i * m + j];
        }
    }
    for j in 0..m {
        if resp_sums[j] < 1e-12 {
            state.flags.stale_component = true;
            continue;
        }
        let mut mean = Complex64::new(0.0, 0.0);
        for (i, &z) in samples.iter().enumerate() {
            mean += z * state.responsibilities[i * m + j];
        }
        mean /= resp_sums[j];
        let mut cov = Cov2 {
            xx: 0.0,
            xy: 0.0,
            yy: 0.0,
        };
        for (i, &z) in samples.iter().enumerate() {
            let g = state.responsibilities[i * m + j];
            let dx = z.re - mean.re;
            let dy = z.im - mean.im;
            cov.xx += g * dx * dx;
            cov.xy += g * dx * dy;
            cov.yy += g * dy * dy;
        }
        cov.xx /= resp_sums[j];
        cov.xy /= resp_sums[j];
        cov.yy /= resp_sums[j];
        state.components[j].mean = mean;
        state.components[j].covariance = cov;
        if !config.weights_fixed {
            state.components[j].weight = resp_sums[j] / n as f64;
        }
    }
    if config.shared_spherical_covariance {
        let mut scatter = 0.0;
        let mut mass = 0.0;
        for (i, &z) in samples.iter().enumerate() {
            for (j, c) in state.components.iter().enumerate() {
                let g = state.responsibilities[i * m + j];
                scatter += g * (z - c.mean).norm_sqr();
                mass += g;
            }
        }
        let sigma2 = scatter / (2.0 * mass.max(1e-300));
        for c in state.components.iter_mut() {
            c.covariance = Cov2::identity_scaled(sigma2);
        }
    }
    for c in state.components.iter_mut() {
        c.covariance.regularize(reg, config.covariance_floor);
    }
}

/// Run the EM loop from an initialized state until the monitored
/// log-likelihood gain drops below `epsilon * n` or `max_iterations`.
///
/// An iteration that decreases the monitor is rejected: the previous state is
/// returned and the fit counts as converged, so the recorded likelihood
/// history is nondecreasing.
pub fn fit_from(mut state: GmmState, samples: &[Complex64], config: &EmConfig) -> Result<GmmState> {
    config.validate()?;
    let n = samples.len();
    if n < state.components.len() {
        return Err(Error::InsufficientData {
            got: n,
            need: state.components.len(),
        });
    }
    let threshold = config.epsilon * n as f64;
    e_step(&mut state, samples)?;
    let mut level = monitored_likelihood(&state, samples, config);
    if level == f64::NEG_INFINITY {
        state.flags.degenerate_likelihood = true;
    }
    state.log_likelihood = level;
    state.log_likelihood_history = vec![level];
    state.iterations = 0;
    state.converged = false;
    for t in 1..=config.max_iterations {
        let snapshot = state.clone();
        m_step(&mut state, samples, config);
        e_step(&mut state, samples)?;
        let mut next = monitored_likelihood(&state, samples, config);
        if !(next >= level) {
            // A soft update can lower the classification likelihood. Redo the
            // iteration from hard assignments (one-hot responsibilities);
            // that step cannot decrease the monitor, keeping the history
            // nondecreasing without stalling the fit.
            state = snapshot.clone();
            let m = state.components.len();
            for (i, &a) in snapshot.assignments.iter().enumerate() {
                for j in 0..m {
                    state.responsibilities[i * m + j] = if j == a { 1.0 } else { 0.0 };
                }
            }
            m_step(&mut state, samples, config);
            e_step(&mut state, samples)?;
            next = monitored_likelihood(&state, samples, config);
            if !(next >= level) {
                // still no improvement (e.g. covariance floor binding): stop
                state = snapshot;
                state.converged = true;
                break;
            }
        }
        if next == f64::NEG_INFINITY {
            state.flags.degenerate_likelihood = true;
        }
        state.log_likelihood = next;
        state.log_likelihood_history.push(next);
        state.iterations = t;
        if next - level < threshold {
            state.converged = true;
            break;
        }
        level = next;
    }
    Ok(state)
}

/// Fit a 4-component mixture from quadrant initialization (Algorithm entry
/// point used by the receiver).
pub fn fit(samples: &[Complex64], config: &EmConfig) -> Result<GmmState> {
    config.validate()?;
    if samples.len() < QPSK_ORDER {
        return Err(Error::InsufficientData {
            got: samples.len(),
            need: QPSK_ORDER,
        });
    }
    fit_from(init_by_quadrants(samples, config), samples, config)
}
