use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64;

use noma_cluster::config::load_config;
use noma_cluster::error::Error;
use noma_cluster::figures::figure_suite;
use noma_cluster::gmm_em::EmConfig;
use noma_cluster::receiver::{align_labels, sic_detect};
use noma_cluster::rng::{substream, TAG_CHANNEL, TAG_NOISE, TAG_SYMBOLS};
use noma_cluster::signal_model::{db_to_linear, generate_frame, sample_channel, transmit};
use noma_cluster::sim::{
    emit_plot_data, run_sweep_with_progress, write_results, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "noma-cluster", version, about = "Blind clustering receiver simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an SER sweep described by a config file and write CSV + plot data
    Sweep {
        /// Path to a key = value experiment config
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Seed override (falls back to NOMA_CLUSTER_SEED, then the config)
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: available cores)
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Simulate a single frame and dump a constellation report
    Frame {
        /// Number of users
        #[arg(long)]
        k: usize,
        /// Frame length in symbols
        #[arg(long)]
        n: usize,
        /// Per-user SNR in dB, comma separated
        #[arg(long, value_delimiter = ',')]
        snr_db: Vec<f64>,
        /// Seed (falls back to NOMA_CLUSTER_SEED, then 0)
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the bundled SER curve suite
    Figures {
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Fraction of the full per-point frame budget
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Seed override (falls back to NOMA_CLUSTER_SEED, then 0)
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: available cores)
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn env_seed() -> Option<u64> {
    std::env::var("NOMA_CLUSTER_SEED").ok()?.parse().ok()
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidParameter(_) => 2,
        Error::Io { .. } => 3,
        _ => 4,
    }
}

fn install_workers(workers: Option<usize>) -> Result<(), Error> {
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::InvalidParameter("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn sweep_to_dir(name: &str, config: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let records = run_sweep_with_progress(config, |idx, recs| {
        let errs: u64 = recs.iter().map(|r| r.symbol_errors).sum();
        let frames = recs.iter().map(|r| r.frames).max().unwrap_or(0);
        eprintln!(
            "[{name}] point {idx} done: snr {:?} dB, {frames} frames, {errs} errors",
            config.snr_grid_db[idx]
        );
    })?;
    let csv = out.join(format!("{name}.csv"));
    write_results(&records, &csv)?;
    emit_plot_data(&records, &out.join(format!("{name}_plots")))?;
    eprintln!("[{name}] wrote {}", csv.display());
    Ok(())
}

fn cmd_sweep(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
) -> Result<(), Error> {
    install_workers(workers)?;
    let config = load_config(config_path, seed.or_else(env_seed))?;
    ensure_dir(out)?;
    sweep_to_dir("sweep", &config, out)
}

fn cmd_frame(k: usize, n: usize, snr_db: &[f64], seed: u64, out: &Path) -> Result<(), Error> {
    if k < 1 || n < 1 {
        return Err(Error::InvalidParameter(format!(
            "K and N must be >= 1, got K={k} N={n}"
        )));
    }
    if snr_db.len() != k {
        return Err(Error::InvalidParameter(format!(
            "--snr-db needs {k} entries, got {}",
            snr_db.len()
        )));
    }
    ensure_dir(out)?;
    let noise_power = 1.0;
    let mut ch_rng = substream(seed, &[0, 0, TAG_CHANNEL]);
    let channels = snr_db
        .iter()
        .enumerate()
        .map(|(u, &db)| sample_channel(u, db_to_linear(db) * noise_power, &mut ch_rng))
        .collect::<Result<Vec<_>, _>>()?;
    let frame = generate_frame(k, n, &mut substream(seed, &[0, 0, TAG_SYMBOLS]))?;
    let received = transmit(
        &frame,
        &channels,
        noise_power,
        &mut substream(seed, &[0, 0, TAG_NOISE]),
    )?;

    let iq_path = out.join("frame_iq.dat");
    let mut iq = String::from("# re im\n");
    for z in &received.samples {
        iq.push_str(&format!("{:.16e} {:.16e}\n", z.re, z.im));
    }
    fs::write(&iq_path, iq).map_err(|e| Error::io(&iq_path, e))?;

    let sic = sic_detect(&received, k, &EmConfig::default())?;
    let (aligned, report) = align_labels(&sic.detected_symbols, &frame, &channels, &sic)?;

    let mut rpt = String::new();
    rpt.push_str(&format!("frame report: K={k} N={n} seed={seed}\n"));
    rpt.push_str(&format!("snr_db = {snr_db:?}\nnoise_power = {noise_power}\n\n"));
    for (u, ch) in channels.iter().enumerate() {
        rpt.push_str(&format!(
            "user {}: beta={:.6} true h = {:+.6}{:+.6}j (|h|={:.6})\n",
            u + 1,
            ch.beta,
            ch.h.re,
            ch.h.im,
            ch.h.norm()
        ));
    }
    rpt.push('\n');
    for (s, stage) in sic.stages.iter().enumerate() {
        rpt.push_str(&format!(
            "stage {s}: theta={:+.6} rad, h_hat = {:+.6}{:+.6}j (|h_hat|={:.6}), erasure={}, em iters={}\n",
            stage.phase_rotation,
            stage.channel_estimate.re,
            stage.channel_estimate.im,
            stage.channel_estimate.norm(),
            stage.erasure,
            stage.gmm_iterations
        ));
        for (c, centroid) in stage.centroids.iter().enumerate() {
            rpt.push_str(&format!(
                "  centroid {c}: {:+.6}{:+.6}j\n",
                centroid.re, centroid.im
            ));
        }
    }
    rpt.push('\n');
    for u in 0..k {
        let stage = report.stage_for_user[u];
        let errors = (0..n).filter(|&i| aligned[u][i] != frame.symbol(u, i)).count();
        let h_hat: Complex64 = sic.channel_estimates[stage];
        rpt.push_str(&format!(
            "user {}: stage {stage}, label rotation k={}, estimated |h|={:.6}, symbol errors {errors}/{n}\n",
            u + 1,
            report.rotation_for_user[u],
            h_hat.norm()
        ));
        let show = n.min(32);
        let truth: Vec<usize> = (0..show).map(|i| frame.symbol(u, i)).collect();
        let det: Vec<usize> = aligned[u][..show].to_vec();
        rpt.push_str(&format!("  true[..{show}]    = {truth:?}\n"));
        rpt.push_str(&format!("  detected[..{show}] = {det:?}\n"));
    }
    let rpt_path = out.join("frame_report.txt");
    fs::write(&rpt_path, &rpt).map_err(|e| Error::io(&rpt_path, e))?;
    print!("{rpt}");
    Ok(())
}

fn cmd_figures(out: &Path, scale: f64, seed: u64, workers: Option<usize>) -> Result<(), Error> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "--scale must be > 0, got {scale}"
        )));
    }
    install_workers(workers)?;
    ensure_dir(out)?;
    for (name, config) in figure_suite(seed, scale) {
        sweep_to_dir(&name, &config, out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep {
            config,
            out,
            seed,
            workers,
        } => cmd_sweep(&config, &out, seed, workers),
        Command::Frame {
            k,
            n,
            snr_db,
            seed,
            out,
        } => cmd_frame(k, n, &snr_db, seed.or_else(env_seed).unwrap_or(0), &out),
        Command::Figures {
            out,
            scale,
            seed,
            workers,
        } => cmd_figures(&out, scale, seed.or_else(env_seed).unwrap_or(0), workers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
