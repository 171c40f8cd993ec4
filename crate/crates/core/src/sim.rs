//! Monte Carlo SER experiment engine.
//!
//! A sweep maps `run_point` over a grid of per-user SNR tuples. Every frame
//! draws fresh block-fading channels, transmits once, and feeds the identical
//! received block to every enabled detector, so detector curves are paired.
//! Each grid point owns its random substreams, which makes the output
//! independent of worker count.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm_em::EmConfig;
use crate::receiver::{align_labels, ml_detect_full_csi, sic_detect};
use crate::rng::{substream, TAG_CHANNEL, TAG_NOISE, TAG_SYMBOLS};
use crate::signal_model::{db_to_linear, generate_frame, sample_channel, transmit, ChannelRealization};

pub const CSV_HEADER: &str = "detector,K,N,user,snr_user_db,snr_tuple_db,frames,symbols,errors,ser,ci95,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    GmmSic,
    MlCsi,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::GmmSic => "gmm-sic",
            DetectorKind::MlCsi => "ml-csi",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "gmm-sic" => Ok(DetectorKind::GmmSic),
            "ml-csi" => Ok(DetectorKind::MlCsi),
            other => Err(format!("unknown detector '{other}' (expected gmm-sic or ml-csi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Resolve the blind pi/2 label ambiguity against the true channels.
    Genie,
    /// Score raw stage labels mapped to users by power rank only.
    Strict,
}

impl FromStr for Alignment {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "genie" => Ok(Alignment::Genie),
            "strict" => Ok(Alignment::Strict),
            other => Err(format!("unknown alignment '{other}' (expected genie or strict)")),
        }
    }
}

/// Full experiment description; `(config, seed)` determines every output byte.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub k: usize,
    pub n: usize,
    /// Per-user SNR tuples (gamma_1..gamma_K in dB), one per grid point.
    pub snr_grid_db: Vec<Vec<f64>>,
    pub frames_per_point: usize,
    /// Early-stop target: a point finishes once every record holds at least
    /// this many symbol errors.
    pub min_errors: u64,
    pub noise_power: f64,
    pub seed: u64,
    pub detectors: Vec<DetectorKind>,
    pub em: EmConfig,
    pub alignment: Alignment,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.n < 1 {
            return Err(Error::InvalidParameter(format!(
                "K and N must be >= 1, got K={} N={}",
                self.k, self.n
            )));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::InvalidParameter("empty SNR grid".into()));
        }
        for (i, tuple) in self.snr_grid_db.iter().enumerate() {
            if tuple.len() != self.k {
                return Err(Error::InvalidParameter(format!(
                    "SNR tuple {i} has {} entries for K={}",
                    tuple.len(),
                    self.k
                )));
            }
        }
        if self.frames_per_point < 1 {
            return Err(Error::InvalidParameter("frames_per_point must be >= 1".into()));
        }
        if !(self.noise_power > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_power must be > 0, got {}",
                self.noise_power
            )));
        }
        if self.detectors.is_empty() {
            return Err(Error::InvalidParameter("no detectors enabled".into()));
        }
        self.em.validate()
    }
}

/// One (SNR point, user, detector) SER accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SerRecord {
    pub detector: DetectorKind,
    pub k: usize,
    pub n: usize,
    /// 1-based user index.
    pub user: usize,
    pub snr_tuple_db: Vec<f64>,
    pub symbol_errors: u64,
    pub symbols_total: u64,
    pub frames: u64,
    pub seed: u64,
}

impl SerRecord {
    pub fn ser(&self) -> f64 {
        if self.symbols_total == 0 {
            0.0
        } else {
            self.symbol_errors as f64 / self.symbols_total as f64
        }
    }

    /// 95% Wilson interval half-width.
    pub fn ci95(&self) -> f64 {
        wilson_half_width(self.symbol_errors, self.symbols_total)
    }

    pub fn snr_user_db(&self) -> f64 {
        self.snr_tuple_db[self.user - 1]
    }
}

pub fn wilson_half_width(errors: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let z = 1.959963984540054_f64;
    let n = total as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n)
}

fn block_hash(samples: &[Complex64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for z in samples {
        for bits in [z.re.to_bits(), z.im.to_bits()] {
            h ^= bits;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    }
    h
}

/// Simulate one SNR grid point. `point_index` selects the rng substreams.
pub fn run_point(
    config: &ExperimentConfig,
    point_index: usize,
    snr_tuple_db: &[f64],
) -> Result<Vec<SerRecord>> {
    config.validate()?;
    if snr_tuple_db.len() != config.k {
        return Err(Error::InvalidParameter("SNR tuple length != K".into()));
    }
    let betas: Vec<f64> = snr_tuple_db
        .iter()
        .map(|&db| db_to_linear(db) * config.noise_power)
        .collect();
    let mut records: Vec<SerRecord> = Vec::new();
    for &det in &config.detectors {
        for user in 1..=config.k {
            records.push(SerRecord {
                detector: det,
                k: config.k,
                n: config.n,
                user,
                snr_tuple_db: snr_tuple_db.to_vec(),
                symbol_errors: 0,
                symbols_total: 0,
                frames: 0,
                seed: config.seed,
            });
        }
    }
    let per_user = config.k;
    for frame_index in 0..config.frames_per_point {
        if records.iter().all(|r| r.symbol_errors >= config.min_errors) {
            break;
        }
        let path = [point_index as u64, frame_index as u64];
        let mut ch_rng = substream(config.seed, &[path[0], path[1], TAG_CHANNEL]);
        let channels: Vec<ChannelRealization> = betas
            .iter()
            .enumerate()
            .map(|(u, &b)| sample_channel(u, b, &mut ch_rng))
            .collect::<Result<_>>()?;
        let frame = generate_frame(
            config.k,
            config.n,
            &mut substream(config.seed, &[path[0], path[1], TAG_SYMBOLS]),
        )?;
        let received = transmit(
            &frame,
            &channels,
            config.noise_power,
            &mut substream(config.seed, &[path[0], path[1], TAG_NOISE]),
        )?;
        let fairness_hash = block_hash(&received.samples);
        for (d, &det) in config.detectors.iter().enumerate() {
            // both detectors must consume the identical received block
            debug_assert_eq!(block_hash(&received.samples), fairness_hash);
            let per_user_errors: Vec<u64> = match det {
                DetectorKind::MlCsi => match ml_detect_full_csi(&received, &channels) {
                    Ok(rows) => (0..config.k)
                        .map(|u| {
                            (0..config.n)
                                .filter(|&i| rows[u][i] != frame.symbol(u, i))
                                .count() as u64
                        })
                        .collect(),
                    Err(_) => vec![config.n as u64; config.k],
                },
                DetectorKind::GmmSic => match sic_detect(&received, config.k, &config.em) {
                    Ok(sic) => {
                        let rows = match config.alignment {
                            Alignment::Genie => {
                                align_labels(&sic.detected_symbols, &frame, &channels, &sic)?.0
                            }
                            Alignment::Strict => {
                                // stage ranked r holds the labels for the
                                // user with the r-th largest power
                                let mut user_rank: Vec<usize> = (0..config.k).collect();
                                user_rank.sort_by(|&a, &b| {
                                    channels[b]
                                        .h
                                        .norm_sqr()
                                        .partial_cmp(&channels[a].h.norm_sqr())
                                        .unwrap_or(std::cmp::Ordering::Equal)
                                });
                                let mut rows = vec![Vec::new(); config.k];
                                for (rank, &user) in user_rank.iter().enumerate() {
                                    rows[user] = sic.detected_symbols
                                        [sic.detection_order[rank]]
                                    .clone();
                                }
                                rows
                            }
                        };
                        (0..config.k)
                            .map(|u| {
                                let stage = &sic.stages[u.min(sic.stages.len() - 1)];
                                if stage.erasure {
                                    // conservative: a failed stage wipes the user
                                    config.n as u64
                                } else {
                                    (0..config.n)
                                        .filter(|&i| rows[u][i] != frame.symbol(u, i))
                                        .count() as u64
                                }
                            })
                            .collect()
                    }
                    Err(_) => vec![config.n as u64; config.k],
                },
            };
            for u in 0..config.k {
                let rec = &mut records[d * per_user + u];
                rec.symbol_errors += per_user_errors[u];
                rec.symbols_total += config.n as u64;
                rec.frames += 1;
            }
        }
    }
    Ok(records)
}

/// Map `run_point` over the grid. Points run in parallel; output order and
/// content match a sequential run.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SerRecord>> {
    config.validate()?;
    let per_point: Vec<Result<Vec<SerRecord>>> = config
        .snr_grid_db
        .par_iter()
        .enumerate()
        .map(|(idx, tuple)| run_point(config, idx, tuple))
        .collect();
    let mut out = Vec::new();
    for chunk in per_point {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Like `run_sweep`, invoking `progress` as each point completes (any order).
pub fn run_sweep_with_progress<F>(config: &ExperimentConfig, progress: F) -> Result<Vec<SerRecord>>
where
    F: Fn(usize, &[SerRecord]) + Sync,
{
    config.validate()?;
    let per_point: Vec<Result<Vec<SerRecord>>> = config
        .snr_grid_db
        .par_iter()
        .enumerate()
        .map(|(idx, tuple)| {
            let r = run_point(config, idx, tuple);
            if let Ok(records) = &r {
                progress(idx, records);
            }
            r
        })
        .collect();
    let mut out = Vec::new();
    for chunk in per_point {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Format a float with 17 significant digits, round-trip exact.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn tuple_field(tuple: &[f64]) -> String {
    tuple.iter().map(|&v| fmt17(v)).collect::<Vec<_>>().join("|")
}

/// Render the result table as CSV text.
pub fn results_to_csv(records: &[SerRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.detector,
            r.k,
            r.n,
            r.user,
            fmt17(r.snr_user_db()),
            tuple_field(&r.snr_tuple_db),
            r.frames,
            r.symbols_total,
            r.symbol_errors,
            fmt17(r.ser()),
            fmt17(r.ci95()),
            r.seed,
        ));
    }
    out
}

/// Write the result table as CSV.
pub fn write_results(records: &[SerRecord], path: &Path) -> Result<()> {
    fs::write(path, results_to_csv(records)).map_err(|e| Error::io(path, e))
}

/// Parse a CSV produced by `write_results` back into records.
pub fn read_results(path: &Path) -> Result<Vec<SerRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => {
            return Err(Error::Config {
                line: 1,
                message: "missing or wrong CSV header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Config {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(err(format!("expected 12 fields, got {}", fields.len())));
        }
        let detector = fields[0].parse().map_err(err)?;
        let parse_u = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{e}: '{s}'")));
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{e}: '{s}'")));
        let snr_tuple_db = fields[5]
            .split('|')
            .map(parse_f)
            .collect::<Result<Vec<f64>>>()?;
        out.push(SerRecord {
            detector,
            k: parse_u(fields[1])? as usize,
            n: parse_u(fields[2])? as usize,
            user: parse_u(fields[3])? as usize,
            snr_tuple_db,
            frames: parse_u(fields[6])?,
            symbols_total: parse_u(fields[7])?,
            symbol_errors: parse_u(fields[8])?,
            seed: parse_u(fields[11])?,
        });
    }
    Ok(out)
}

/// Write one whitespace-separated data file per (K, N) pair, columns
/// `snr_db` then one SER column per (detector, user), plus a README that
/// maps each file to its scenario. Returns the data file paths.
pub fn emit_plot_data(records: &[SerRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("empty result table".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // group by (K, N) preserving first appearance
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for r in records {
        if !groups.contains(&(r.k, r.n)) {
            groups.push((r.k, r.n));
        }
    }
    let mut paths = Vec::new();
    let mut readme = String::from(
        "SER curve data files. Each row is one SNR grid point; the x column\n\
         is the first user's SNR in dB and every other column is a symbol\n\
         error rate for one (detector, user) pair.\n\n",
    );
    for (k, n) in groups {
        let in_group: Vec<&SerRecord> = records.iter().filter(|r| r.k == k && r.n == n).collect();
        let mut tuples: Vec<Vec<f64>> = Vec::new();
        for r in &in_group {
            if !tuples.contains(&r.snr_tuple_db) {
                tuples.push(r.snr_tuple_db.clone());
            }
        }
        let mut columns: Vec<(DetectorKind, usize)> = Vec::new();
        for r in &in_group {
            if !columns.contains(&(r.detector, r.user)) {
                columns.push((r.detector, r.user));
            }
        }
        let name = format!("ser_k{k}_n{n}.dat");
        let path = dir.join(&name);
        let mut body = String::from("# snr_db");
        for (det, user) in &columns {
            body.push_str(&format!(" ser_{det}_u{user}"));
        }
        body.push('\n');
        for tuple in &tuples {
            body.push_str(&fmt17(tuple[0]));
            for (det, user) in &columns {
                let cell = in_group
                    .iter()
                    .find(|r| r.detector == *det && r.user == *user && &r.snr_tuple_db == tuple)
                    .map(|r| fmt17(r.ser()))
                    .unwrap_or_else(|| "nan".into());
                body.push(' ');
                body.push_str(&cell);
            }
            body.push('\n');
        }
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        let gaps: String = if k > 1 {
            let t = &tuples[0];
            let diffs: Vec<String> = t
                .windows(2)
                .map(|w| format!("{:.1} dB", w[0] - w[1]))
                .collect();
            format!(", power gaps {}", diffs.join(" / "))
        } else {
            String::new()
        };
        readme.push_str(&format!(
            "{name}: {k} user(s), frame length N={n}{gaps}; columns: snr_db then {}\n",
            columns
                .iter()
                .map(|(d, u)| format!("{d} user {u}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
        paths.push(path);
    }
    let readme_path = dir.join("README.txt");
    let mut f = fs::File::create(&readme_path).map_err(|e| Error::io(&readme_path, e))?;
    f.write_all(readme.as_bytes())
        .map_err(|e| Error::io(&readme_path, e))?;
    Ok(paths)
}
