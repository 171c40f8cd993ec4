//! Blind clustering receiver for grant-free non-orthogonal uplink access.
//!
//! Building blocks: a QPSK superposition signal model (`signal_model`),
//! a four-component complex Gaussian mixture fitted by EM (`gmm_em`), a
//! successive interference cancellation receiver that estimates channels
//! from the cluster geometry (`receiver`), and a Monte Carlo SER harness
//! with CSV output (`sim`, `config`, `figures`).

pub mod config;
pub mod error;
pub mod figures;
pub mod gmm_em;
pub mod receiver;
pub mod rng;
pub mod signal_model;
pub mod sim;

pub use error::{Error, Result};
pub use gmm_em::{EmConfig, GaussianComponent, GmmState};
pub use receiver::{align_labels, ml_detect_full_csi, sic_detect, SicResult, StageEstimate};
pub use signal_model::{
    db_to_linear, generate_frame, linear_to_db, qpsk_point, sample_channel, transmit,
    ChannelRealization, Frame, ReceivedBlock,
};
pub use sim::{
    run_point, run_sweep, write_results, Alignment, DetectorKind, ExperimentConfig, SerRecord,
};
