//! Differentiable glottal-flow LPC vocoder.
//!
//! The signal path is a harmonic-plus-noise source-filter model:
//!
//! ```text
//! audio = LPC(wavetable(phase, tau) * gamma; a_k) + LPC(noise * beta; b_k)
//! ```
//!
//! * [`glottal`] builds transformed-LF glottal flow derivative wavetables.
//! * [`oscillator`] turns an instantaneous frequency track into a source
//!   signal by phase accumulation and bilinear table lookup.
//! * [`iir`] runs all-pole recursions and their closed-form adjoints.
//! * [`filters`] maps unconstrained values to stable biquad cascades and
//!   applies time-varying LPC frame by frame with overlap-add.
//! * [`synth`] ties the pieces into a renderer with a full backward pass.
//! * [`opt`] provides losses, Adam, and the fitting loops.
//!
//! Everything is computed in `f64`. Data-parallel loops go through
//! [`Exec`]; with the `parallel` feature disabled every loop runs
//! sequentially and results are bit-identical either way.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filters;
pub mod glottal;
pub mod iir;
pub mod io;
pub mod opt;
pub mod oscillator;
mod par;
pub mod roots;
pub mod synth;

pub use error::{Error, Result};
pub use par::Exec;

/// Default sample rate in Hz.
pub const SAMPLE_RATE: u32 = 24_000;
/// Default hop size in samples (200 Hz frame rate at 24 kHz).
pub const HOP: usize = 120;
/// Default overlap-add window length in samples.
pub const WINDOW: usize = 480;
/// Default LPC order for both the harmonic and the noise filter.
pub const LPC_ORDER: usize = 22;
/// Number of frames averaged into one Rd fractional index value.
pub const TAU_STRIDE: usize = 10;
