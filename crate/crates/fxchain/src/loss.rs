//! Audio losses and metrics: log-Mel L1, audio-domain MSE, parameter MSE.
//!
//! Callers RMS-normalize both signals before the audio losses so a static
//! gain never registers as an error (it cannot interfere with the
//! compressor's dynamic gain).

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamVector};
use crate::signal::AudioBuffer;
use crate::tape::{Tape, Var};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// STFT/Mel settings. The defaults (2048/512, 128 bands, Hann, ε = 1e-5)
/// follow common practice and are config-overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bands: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl MelConfig {
    pub fn default_for(sample_rate: u32) -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
            mel_bands: 128,
            sample_rate,
            log_floor: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::OutOfRange(format!(
                "hop {} must be in 1..={}",
                self.hop, self.fft_size
            )));
        }
        if self.mel_bands == 0 {
            return Err(Error::OutOfRange("mel_bands must be ≥ 1".into()));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::OutOfRange("fft_size must be a power of two".into()));
        }
        Ok(())
    }

    pub fn frames_for(&self, len: usize) -> Result<usize> {
        if len < self.fft_size {
            return Err(Error::TooShort {
                need: self.fft_size,
                got: len,
            });
        }
        Ok(1 + (len - self.fft_size) / self.hop)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Precomputed triangular filterbank and analysis window for one MelConfig.
#[derive(Clone)]
pub struct MelFilterbank {
    cfg: MelConfig,
    /// bands × bins, row-major; bins = fft_size/2 + 1
    weights: Arc<Vec<f64>>,
    window: Arc<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.fft_size / 2 + 1;
        let fs = cfg.sample_rate as f64;
        let mel_max = hz_to_mel(fs / 2.0);
        // band edges: mel_bands + 2 points from 0 to Nyquist
        let edges: Vec<f64> = (0..cfg.mel_bands + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.mel_bands + 1) as f64))
            .collect();
        let mut weights = vec![0.0; cfg.mel_bands * bins];
        for b in 0..cfg.mel_bands {
            let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            for k in 0..bins {
                let f = fs * k as f64 / cfg.fft_size as f64;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= center {
                    (f - lo) / (center - lo)
                } else {
                    (hi - f) / (hi - center)
                };
                weights[b * bins + k] = w;
            }
            // a band too narrow to cover any bin keeps its apex bin
            if weights[b * bins..(b + 1) * bins].iter().all(|&w| w == 0.0) {
                let apex = ((center / fs * cfg.fft_size as f64).round() as usize).min(bins - 1);
                weights[b * bins + apex] = 1.0;
            }
        }
        let n = cfg.fft_size;
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            weights: Arc::new(weights),
            window: Arc::new(window),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn bins(&self) -> usize {
        self.cfg.fft_size / 2 + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Magnitude Mel spectrogram, bands × frames row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelMatrix {
    pub data: Vec<f64>,
    pub bands: usize,
    pub frames: usize,
}

impl MelMatrix {
    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.data[band * self.frames + frame]
    }
}

/// Magnitude STFT (Hann window) projected onto the triangular filterbank.
pub fn mel_spectrogram(x: &AudioBuffer, fb: &MelFilterbank) -> Result<MelMatrix> {
    let cfg = &fb.cfg;
    let frames = cfg.frames_for(x.len())?;
    let bins = fb.bins();
    let mut data = vec![0.0; cfg.mel_bands * frames];
    let mut frame_buf = vec![0.0; 2 * cfg.fft_size];
    for t in 0..frames {
        let start = t * cfg.hop;
        for i in 0..cfg.fft_size {
            frame_buf[2 * i] = x.samples()[start + i] * fb.window[i];
            frame_buf[2 * i + 1] = 0.0;
        }
        crate::fft::transform_interleaved(&mut frame_buf, false);
        for b in 0..cfg.mel_bands {
            let row = &fb.weights[b * bins..(b + 1) * bins];
            let mut acc = 0.0;
            for (k, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    let mag =
                        (frame_buf[2 * k].powi(2) + frame_buf[2 * k + 1].powi(2)).sqrt();
                    acc += w * mag;
                }
            }
            data[b * frames + t] = acc;
        }
    }
    Ok(MelMatrix {
        data,
        bands: cfg.mel_bands,
        frames,
    })
}

/// Entrywise log(Mel + ε) of a spectrogram.
pub fn log_mel(m: &MelMatrix, log_floor: f64) -> MelMatrix {
    MelMatrix {
        data: m.data.iter().map(|&v| (v + log_floor).ln()).collect(),
        bands: m.bands,
        frames: m.frames,
    }
}

/// Mean absolute difference of the log-magnitude Mel spectrograms. The mean
/// (not sum) reduction keeps the loss comparable across clip durations.
pub fn loss_mel_l1(y_hat: &AudioBuffer, y: &AudioBuffer, fb: &MelFilterbank) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    let a = mel_spectrogram(y_hat, fb)?;
    let b = mel_spectrogram(y, fb)?;
    let eps = fb.cfg.log_floor;
    let total: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&p, &q)| ((p + eps).ln() - (q + eps).ln()).abs())
        .sum();
    Ok(total / a.data.len() as f64)
}

/// Mean squared sample difference.
pub fn mse_audio(y_hat: &AudioBuffer, y: &AudioBuffer) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    let total: f64 = y_hat
        .samples()
        .iter()
        .zip(y.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / y.len() as f64)
}

/// Normalized-parameter MSE: (1/C)·Σ (q̂_c − q_c)².
pub fn mse_params(q_hat: &ParamVector, q: &ParamVector) -> Result<f64> {
    if q_hat.kind() != ParamKind::Normalized || q.kind() != ParamKind::Normalized {
        return Err(Error::OutOfRange("mse_params expects normalized vectors".into()));
    }
    if q_hat.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            got: q_hat.len(),
        });
    }
    let total: f64 = q_hat
        .values()
        .iter()
        .zip(q.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / q.len() as f64)
}

/// Tape RMS normalization: x / sqrt(mean(x²) + tiny). The epsilon keeps
/// silent renders finite; the public strict op lives in `signal`.
pub fn rms_normalize_diff<'t>(x: Var<'t>) -> Var<'t> {
    let level = (x.square().mean() + 1e-18).sqrt();
    x / level
}

/// Tape log-Mel spectrogram of `x`, returned as per-frame band vectors.
pub fn log_mel_frames_diff<'t>(tape: &'t Tape, x: Var<'t>, fb: &MelFilterbank) -> Vec<Var<'t>> {
    let cfg = &fb.cfg;
    let frames = cfg
        .frames_for(x.len())
        .expect("signal shorter than one analysis frame");
    let bins = fb.bins();
    let window = tape.constant(fb.window.as_ref().clone());
    let zeros = tape.constant(vec![0.0; cfg.fft_size]);
    (0..frames)
        .map(|t| {
            let frame = x.slice(t * cfg.hop, cfg.fft_size) * window;
            let spec = frame.interleave(zeros).fft();
            let half = spec.slice(0, 2 * bins);
            let mags = half.complex_abs();
            let mel = mags.mat_const(Arc::clone(&fb.weights), cfg.mel_bands);
            (mel + cfg.log_floor).ln()
        })
        .collect()
}

/// Tape twin of [`loss_mel_l1`] against a fixed target spectrogram
/// (the target side carries no gradient, so it is computed once outside).
pub fn loss_mel_l1_diff<'t>(tape: &'t Tape, y_hat: Var<'t>, target_log_mel: &MelMatrix, fb: &MelFilterbank) -> Var<'t> {
    let frames_vars = log_mel_frames_diff(tape, y_hat, fb);
    assert_eq!(frames_vars.len(), target_log_mel.frames);
    let bands = target_log_mel.bands;
    let mut acc: Option<Var<'t>> = None;
    for (t, frame) in frames_vars.into_iter().enumerate() {
        let target: Vec<f64> = (0..bands).map(|b| target_log_mel.at(b, t)).collect();
        let tv = tape.constant(target);
        let term = (frame - tv).abs().sum();
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    let total = acc.expect("no frames");
    total.scale(1.0 / (bands * target_log_mel.frames) as f64)
}
