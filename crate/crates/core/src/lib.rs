//! Feature-space diffusion densities for OOD detection.
//!
//! Per encoder and normalization fork, a VP-SDE score network is trained on
//! ID features; log-likelihoods from the probability-flow ODE are mapped to
//! p-values through validation ECDFs and combined by a two-level min-gate.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for common use.

pub mod calibration;
pub mod diagnostics;
pub mod error;
pub mod feature_store;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod real;
pub mod score_net;
pub mod scores;
pub mod train;
pub mod vpsde;

pub use calibration::{calibrate, CalibrationBundle, DetectionReport, EcdfTable, EncoderScores};
pub use error::{Error, Result};
pub use feature_store::{FeatureSet, Fork};
pub use likelihood::{log_likelihood, DivergenceMode, LikelihoodConfig};
pub use model::ScoreModel;
pub use real::Real;
pub use score_net::{NetDims, ScoreField, ScoreNet};
pub use train::{train, TrainConfig};
pub use vpsde::VpSchedule;

pub type ScoreNet32 = ScoreNet<f32>;
pub type ScoreNet64 = ScoreNet<f64>;
pub type ScoreModel32 = ScoreModel<f32>;
pub type ScoreModel64 = ScoreModel<f64>;
pub type VpSchedule64 = VpSchedule<f64>;
pub type CalibrationBundle64 = CalibrationBundle<f64>;
