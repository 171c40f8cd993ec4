//! Flat `key = value` experiment config files.
//!
//! `#` starts a comment, blank lines are skipped. The SNR grid is a
//! comma-separated list of per-user tuples whose entries are separated by
//! `|`, e.g. `snr_grid_db = 20|17, 22|19, 24|21`. Unknown keys are errors.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gmm_em::EmConfig;
use crate::sim::{Alignment, DetectorKind, ExperimentConfig};

/// Parse config text. `seed_override` (CLI flag or env) wins over the file.
pub fn parse_config(text: &str, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        k: 0,
        n: 0,
        snr_grid_db: Vec::new(),
        frames_per_point: 0,
        min_errors: 400,
        noise_power: 1.0,
        seed: 0,
        detectors: vec![DetectorKind::GmmSic, DetectorKind::MlCsi],
        em: EmConfig::default(),
        alignment: Alignment::Genie,
    };
    let mut saw = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::Config {
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
        let key = key.trim();
        let value = value.trim();
        if !saw.insert(key.to_string()) {
            return Err(err(format!("duplicate key '{key}'")));
        }
        let parse_u64 = |v: &str| v.parse::<u64>().map_err(|e| err(format!("{key}: {e}")));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
        let parse_bool = |v: &str| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(err(format!("{key}: expected true/false, got '{other}'"))),
        };
        match key {
            "k" => cfg.k = parse_usize(value)?,
            "n" => cfg.n = parse_usize(value)?,
            "snr_grid_db" => {
                for tuple in value.split(',') {
                    let entries = tuple
                        .split('|')
                        .map(|v| parse_f64(v.trim()))
                        .collect::<Result<Vec<f64>>>()?;
                    cfg.snr_grid_db.push(entries);
                }
            }
            "frames_per_point" => cfg.frames_per_point = parse_usize(value)?,
            "min_errors" => cfg.min_errors = parse_u64(value)?,
            "noise_power" => cfg.noise_power = parse_f64(value)?,
            "seed" => cfg.seed = parse_u64(value)?,
            "detectors" => {
                cfg.detectors = value
                    .split(',')
                    .map(|v| v.trim().parse::<DetectorKind>().map_err(err))
                    .collect::<Result<Vec<_>>>()?;
            }
            "alignment" => cfg.alignment = value.parse().map_err(err)?,
            "em_epsilon" => cfg.em.epsilon = parse_f64(value)?,
            "em_max_iterations" => cfg.em.max_iterations = parse_usize(value)?,
            "em_weights_fixed" => cfg.em.weights_fixed = parse_bool(value)?,
            "em_covariance_floor" => cfg.em.covariance_floor = parse_f64(value)?,
            "em_soft_likelihood" => cfg.em.soft_likelihood = parse_bool(value)?,
            "em_shared_spherical_covariance" => {
                cfg.em.shared_spherical_covariance = parse_bool(value)?
            }
            other => return Err(err(format!("unknown key '{other}'"))),
        }
    }
    for (key, present) in [
        ("k", cfg.k > 0),
        ("n", cfg.n > 0),
        ("snr_grid_db", !cfg.snr_grid_db.is_empty()),
        ("frames_per_point", cfg.frames_per_point > 0),
    ] {
        if !present {
            return Err(Error::Config {
                line: 0,
                message: format!("missing required key '{key}'"),
            });
        }
    }
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, seed_override)
}
