//! Transmit frames, block-fading channels, and noisy superimposed reception.
//!
//! `K` frame-synchronized users each send `N` QPSK symbols through a complex
//! block-fading coefficient `h_u ~ CN(0, beta_u)`; the base station observes
//! `y_i = sum_u h_u x_{u,i} + n_i` with `n_i ~ CN(0, nu)`. Per-user SNR is
//! `gamma_u = beta_u / nu`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// QPSK constellation order.
pub const QPSK_ORDER: usize = 4;

/// QPSK point for a constellation index, in fixed quadrant order:
/// index 0 = (+,+), 1 = (-,+), 2 = (-,-), 3 = (+,-).
/// Equivalently `exp(j(pi/4 + k*pi/2))` for `k = index`.
pub fn qpsk_point(index: usize) -> Complex64 {
    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
    match index {
        0 => Complex64::new(S, S),
        1 => Complex64::new(-S, S),
        2 => Complex64::new(-S, -S),
        3 => Complex64::new(S, -S),
        _ => panic!("QPSK index out of range: {index}"),
    }
}

/// All four QPSK points in index order.
pub fn qpsk_points() -> [Complex64; QPSK_ORDER] {
    [qpsk_point(0), qpsk_point(1), qpsk_point(2), qpsk_point(3)]
}

/// A unit-energy constellation point together with its index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstellationSymbol {
    pub index: usize,
    pub point: Complex64,
}

impl ConstellationSymbol {
    pub fn qpsk(index: usize) -> Self {
        Self {
            index,
            point: qpsk_point(index),
        }
    }
}

/// A received sample in rectangular form; interchangeable with `Complex64`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqSample {
    pub i: f64,
    pub q: f64,
}

impl From<Complex64> for IqSample {
    fn from(z: Complex64) -> Self {
        Self { i: z.re, q: z.im }
    }
}

impl From<IqSample> for Complex64 {
    fn from(s: IqSample) -> Self {
        Complex64::new(s.i, s.q)
    }
}

/// One user's block-fading channel realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub user: usize,
    /// Complex fading coefficient, constant over one frame.
    pub h: Complex64,
    /// Large-scale power (path loss and shadowing), `E|h|^2 = beta`.
    pub beta: f64,
}

/// K x N matrix of constellation indices, row per user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    users: usize,
    len: usize,
    symbols: Vec<u8>,
}

impl Frame {
    /// Build a frame from per-user index rows. All rows must share one length
    /// and hold valid QPSK indices.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("frame needs at least 1 user".into()));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::InvalidParameter("frame needs at least 1 symbol".into()));
        }
        let mut symbols = Vec::with_capacity(rows.len() * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::InvalidParameter("ragged frame rows".into()));
            }
            for &s in row {
                if usize::from(s) >= QPSK_ORDER {
                    return Err(Error::InvalidParameter(format!("invalid symbol index {s}")));
                }
            }
            symbols.extend_from_slice(row);
        }
        Ok(Self {
            users: rows.len(),
            len: n,
            symbols,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    /// Frame length N in symbols.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Constellation index transmitted by `user` at symbol slot `i`.
    pub fn symbol(&self, user: usize, i: usize) -> usize {
        usize::from(self.symbols[user * self.len + i])
    }

    pub fn user_row(&self, user: usize) -> &[u8] {
        &self.symbols[user * self.len..(user + 1) * self.len]
    }
}

/// Noisy superimposed received block.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    pub samples: Vec<Complex64>,
    pub noise_power: f64,
}

impl ReceivedBlock {
    pub fn iq_samples(&self) -> Vec<IqSample> {
        self.samples.iter().map(|&z| z.into()).collect()
    }
}

/// Draw a circular symmetric complex Gaussian channel with power `beta`.
pub fn sample_channel<R: Rng>(user: usize, beta: f64, rng: &mut R) -> Result<ChannelRealization> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    let h = if beta == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        let s = (beta / 2.0).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    };
    Ok(ChannelRealization { user, h, beta })
}

/// Draw a K x N frame of i.i.d. uniform QPSK indices.
pub fn generate_frame<R: Rng>(users: usize, len: usize, rng: &mut R) -> Result<Frame> {
    if users < 1 || len < 1 {
        return Err(Error::InvalidParameter(format!(
            "frame shape must be at least 1x1, got {users}x{len}"
        )));
    }
    let symbols = (0..users * len)
        .map(|_| rng.random_range(0..QPSK_ORDER as u8))
        .collect();
    Ok(Frame {
        users,
        len,
        symbols,
    })
}

/// Superimpose all users through their channels and add complex AWGN of
/// variance `noise_power`.
pub fn transmit<R: Rng>(
    frame: &Frame,
    channels: &[ChannelRealization],
    noise_power: f64,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    if channels.len() != frame.users() {
        return Err(Error::InvalidParameter(format!(
            "{} channels for {} users",
            channels.len(),
            frame.users()
        )));
    }
    if !(noise_power >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise power must be >= 0, got {noise_power}"
        )));
    }
    let n = frame.len();
    let mut samples = Vec::with_capacity(n);
    let noise_scale = (noise_power / 2.0).sqrt();
    for i in 0..n {
        let mut y = Complex64::new(0.0, 0.0);
        for (u, ch) in channels.iter().enumerate() {
            y += ch.h * qpsk_point(frame.symbol(u, i));
        }
        if noise_power > 0.0 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            y += Complex64::new(noise_scale * re, noise_scale * im);
        }
        samples.push(y);
    }
    Ok(ReceivedBlock {
        samples,
        noise_power,
    })
}

/// Linear SNR `gamma = beta / nu`.
pub fn snr_linear(beta: f64, noise_power: f64) -> Result<f64> {
    if !(noise_power > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise power must be > 0, got {noise_power}"
        )));
    }
    Ok(beta / noise_power)
}

/// SNR in dB, `10 log10(beta / nu)`.
pub fn snr_db(beta: f64, noise_power: f64) -> Result<f64> {
    Ok(10.0 * snr_linear(beta, noise_power)?.log10())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Density of the exact received-sample mixture: an equal-weight average of
/// `4^K` circular complex Gaussians centered on every symbol superposition.
/// Diagnostic only; the blind receiver never sees the channels.
pub fn mixture_pdf(y: Complex64, channels: &[ChannelRealization], noise_power: f64) -> Result<f64> {
    if !(noise_power > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise power must be > 0, got {noise_power}"
        )));
    }
    let k = channels.len();
    let hypotheses = QPSK_ORDER
        .checked_pow(k as u32)
        .filter(|&m| m <= 65536)
        .ok_or(Error::HypothesisSpace(usize::MAX))?;
    let mut total = 0.0;
    for code in 0..hypotheses {
        let mut mean = Complex64::new(0.0, 0.0);
        let mut c = code;
        for ch in channels.iter().rev() {
            mean += ch.h * qpsk_point(c % QPSK_ORDER);
            c /= QPSK_ORDER;
        }
        total += (-(y - mean).norm_sqr() / noise_power).exp();
    }
    Ok(total / (std::f64::consts::PI * noise_power * hypotheses as f64))
}
