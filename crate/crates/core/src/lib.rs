//! Multi-agent MAC protocol learning.
//!
//! UEs contending for a slotted uplink learn when to transmit, request and
//! drop PDUs with episodic policy gradients. In the main mode each UE also
//! learns its own intrinsic reward (an LSTM over its lifetime history),
//! updated once per lifetime by a meta-gradient on the lifetime extrinsic
//! return.
//!
//! Modules, bottom-up: [`env`] (the contention game), [`numcore`] (network
//! kernels, generic over the scalar type), [`agent`], [`trainer`] (the
//! two-timescale learning loop and baselines) and [`harness`] (campaigns,
//! evaluation and curve export).

pub mod agent;
pub mod config;
pub mod env;
mod error;
pub mod harness;
pub mod numcore;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};

/// Policy network parameters at the precision used for training.
pub type MlpParams = numcore::MlpParams<f64>;
/// Intrinsic-reward network parameters at training precision.
pub type LstmParams = numcore::LstmParams<f64>;
pub type LstmState = numcore::LstmState<f64>;
pub type LstmCache = numcore::LstmCache<f64>;
pub type GradBuffer = numcore::GradBuffer<f64>;
