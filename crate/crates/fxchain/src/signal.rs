//! Audio buffers, level normalization, downmixing, and test-signal generation.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::Rng;

/// Threshold below which a signal counts as silent (full scale = 1.0).
pub const SILENCE_EPS: f64 = 1e-9;

/// A mono sample sequence at a fixed sample rate. Samples are full-scale
/// (±1.0 = 0 dBFS) and must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Builds a buffer, rejecting empty or non-finite input.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::TooShort { need: 1, got: 0 });
        }
        if sample_rate == 0 {
            return Err(Error::OutOfRange("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::OutOfRange(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Scales the buffer so its peak is exactly 1.0 (0 dBFS). Near-silent input
/// (peak < 1e-9) is returned unchanged.
pub fn peak_normalize(x: &AudioBuffer) -> AudioBuffer {
    let peak = x.peak();
    if peak < SILENCE_EPS {
        return x.clone();
    }
    let inv = 1.0 / peak;
    AudioBuffer {
        samples: x.samples.iter().map(|s| s * inv).collect(),
        sample_rate: x.sample_rate,
    }
}

/// Root-mean-square level of the buffer.
pub fn rms(x: &AudioBuffer) -> f64 {
    let sum_sq: f64 = x.samples.iter().map(|s| s * s).sum();
    (sum_sq / x.len() as f64).sqrt()
}

/// Scales the buffer to unit RMS. Errors on silent input: RMS appears only in
/// metric denominators, where silence indicates a broken pipeline.
pub fn rms_normalize(x: &AudioBuffer) -> Result<AudioBuffer> {
    let level = rms(x);
    if level <= SILENCE_EPS {
        return Err(Error::SilentSignal);
    }
    let inv = 1.0 / level;
    Ok(AudioBuffer {
        samples: x.samples.iter().map(|s| s * inv).collect(),
        sample_rate: x.sample_rate,
    })
}

/// Per-sample arithmetic mean of equally long, equally sampled channels.
pub fn mono_downmix(channels: &[AudioBuffer]) -> Result<AudioBuffer> {
    let first = channels
        .first()
        .ok_or_else(|| Error::MismatchedLength("no channels".into()))?;
    for ch in channels.iter().skip(1) {
        if ch.len() != first.len() || ch.sample_rate != first.sample_rate {
            return Err(Error::MismatchedLength(format!(
                "channel of {} samples @ {} Hz vs {} samples @ {} Hz",
                ch.len(),
                ch.sample_rate,
                first.len(),
                first.sample_rate
            )));
        }
    }
    let scale = 1.0 / channels.len() as f64;
    let samples = (0..first.len())
        .map(|i| channels.iter().map(|c| c.samples[i]).sum::<f64>() * scale)
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate: first.sample_rate,
    })
}

/// Deterministic test-signal family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSignal {
    /// Fixed-frequency sine; the frequency is derived from the seed
    /// (220–880 Hz) so different seeds give different tones.
    Sine,
    /// Logarithmic sweep from 20 Hz to min(16 kHz, 0.45·fs).
    Sweep,
    /// Uniform white noise in ±0.9.
    WhiteNoise,
    /// Unit impulse at sample 0.
    Impulse,
}

/// Generates a deterministic test signal of `duration` seconds.
/// Identical `(kind, seed, duration, sample_rate)` always yields identical
/// buffers; peak never exceeds 1.
pub fn gen_test_signal(kind: TestSignal, duration: f64, seed: u64, sample_rate: u32) -> AudioBuffer {
    assert!(duration > 0.0, "duration must be positive");
    let n = ((duration * sample_rate as f64).round() as usize).max(1);
    let fs = sample_rate as f64;
    let samples = match kind {
        TestSignal::Impulse => {
            let mut s = vec![0.0; n];
            s[0] = 1.0;
            s
        }
        TestSignal::Sine => {
            let mut rng = stream_rng(seed, 0x51);
            let freq = 220.0 * 2f64.powf(rng.gen::<f64>() * 2.0);
            (0..n)
                .map(|i| 0.9 * (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
                .collect()
        }
        TestSignal::Sweep => {
            let f0 = 20.0;
            let f1 = (0.45 * fs).min(16_000.0);
            let k = (f1 / f0).ln();
            let dur = n as f64 / fs;
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    // instantaneous phase of an exponential sweep
                    let phase = 2.0 * std::f64::consts::PI * f0 * dur / k * ((k * t / dur).exp() - 1.0);
                    0.9 * phase.sin()
                })
                .collect()
        }
        TestSignal::WhiteNoise => {
            let mut rng = stream_rng(seed, 0x57);
            (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect()
        }
    };
    AudioBuffer {
        samples,
        sample_rate,
    }
}
