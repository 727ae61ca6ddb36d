//! Yingram pitch features and the tooling around them.
//!
//! The pipeline is: [`signal`] loads and frames audio, [`yin`] turns each
//! frame into a cumulative mean normalized difference curve, [`grid`] samples
//! that curve on a 24-TET note grid to form the Yingram and crops 50-channel
//! scopes from it. [`loss`] holds the Yingram objectives, [`autodiff`] their
//! analytic waveform gradients and [`eval`] the pitch-shift evaluation
//! harness.
//!
//! Everything numeric is generic over [`Sample`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod grid;
pub mod loss;
pub mod matrix;
pub mod scalar;
pub mod signal;
pub mod yin;

pub use error::{Error, Result};
pub use scalar::Sample;

/// Default analysis sample rate in Hz.
pub const ANALYSIS_SAMPLE_RATE: u32 = 22050;

pub type Waveform = signal::Waveform<f64>;
pub type Waveform32 = signal::Waveform<f32>;
pub type Frame = signal::Frame<f64>;
pub type Yingram = grid::YingramMatrix<f64>;
pub type Yingram32 = grid::YingramMatrix<f32>;
pub type CmndCurve = yin::CmndCurve<f64>;
pub type DifferenceCurve = yin::DifferenceCurve<f64>;
pub type Matrix = matrix::Matrix<f64>;
pub type PitchContour = eval::PitchContour;
