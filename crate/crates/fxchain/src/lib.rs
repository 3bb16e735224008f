//! Differentiable mastering-effect chain.
//!
//! fxchain synthesizes mastered audio through a known chain
//! (equalizer → compressor → clipper) and estimates the chain's parameters:
//! either from paired dry/wet audio by gradient descent, or blindly from wet
//! audio alone with a trained analysis network, optimizing an audio
//! reconstruction loss rather than a parameter loss.
//!
//! The guide under `book/` walks through each layer; start with
//! [`signal`] for buffers, [`tape`] for the gradient engine, and
//! [`estimate`] for the two estimators.

pub mod chain;
pub mod checkpoint;
pub mod clipper;
pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod eq;
pub mod error;
pub mod estimate;
pub mod fft;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod params;
pub mod proxy;
pub mod report;
pub mod rng;
pub mod signal;
pub mod tape;

pub use chain::{Effect, EffectChain};
pub use error::{Error, Result};
pub use estimate::{
    evaluate, fit_paired, train_blind, AnalysisNetwork, Dataset, FitConfig, Objective, TrainConfig,
};
pub use loss::{loss_mel_l1, mel_spectrogram, mse_audio, mse_params, MelConfig, MelFilterbank};
pub use params::{denormalize, normalize, ParamKind, ParamSpec, ParamVector, Scale};
pub use signal::{
    gen_test_signal, mono_downmix, peak_normalize, rms, rms_normalize, AudioBuffer, TestSignal,
};
pub use tape::{gradient_of, Gradients, Tape, Var};
