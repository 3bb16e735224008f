//! Feed-forward dynamic range compression.
//!
//! The full form detects the instantaneous level in dB, applies a soft-knee
//! static gain curve, and smooths the gain reduction with a branching one-pole
//! (attack coefficient while reduction grows, release while it decays). The
//! simplified form links attack and release into one time constant, which
//! removes the branch and makes the whole path differentiable.

use crate::error::{Error, Result};
use crate::params::{ParamSpec, Scale};
use crate::signal::AudioBuffer;
use crate::tape::{Tape, Var};

/// Linear floor for level detection: −120 dB.
pub const LEVEL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorParams {
    pub threshold_db: f64,
    pub ratio: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub knee_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplifiedCompressorParams {
    pub threshold_db: f64,
    pub ratio: f64,
    pub time_ms: f64,
    pub knee_db: f64,
}

impl CompressorParams {
    pub fn validate(&self) -> Result<()> {
        if self.ratio < 1.0 {
            return Err(Error::OutOfRange(format!("ratio {} < 1", self.ratio)));
        }
        if self.attack_ms <= 0.0 || self.release_ms <= 0.0 {
            return Err(Error::OutOfRange("time constants must be positive".into()));
        }
        if self.knee_db < 0.0 {
            return Err(Error::OutOfRange(format!("knee {} < 0", self.knee_db)));
        }
        Ok(())
    }
}

/// Parameter table for the full compressor (5 parameters).
pub fn compressor_specs() -> Vec<ParamSpec> {
    vec![
        ParamSpec::new("comp.threshold", -50.0, 0.0, Scale::Linear, "dB"),
        ParamSpec::new("comp.ratio", 1.0, 20.0, Scale::Logarithmic, ""),
        ParamSpec::new("comp.attack", 0.1, 100.0, Scale::Logarithmic, "ms"),
        ParamSpec::new("comp.release", 10.0, 1000.0, Scale::Logarithmic, "ms"),
        ParamSpec::new("comp.knee", 0.0, 18.0, Scale::Linear, "dB"),
    ]
}

/// Parameter table for the simplified compressor (4 parameters, linked time).
pub fn simplified_specs() -> Vec<ParamSpec> {
    vec![
        ParamSpec::new("scomp.threshold", -50.0, 0.0, Scale::Linear, "dB"),
        ParamSpec::new("scomp.ratio", 1.0, 20.0, Scale::Logarithmic, ""),
        ParamSpec::new("scomp.time", 0.1, 1000.0, Scale::Logarithmic, "ms"),
        ParamSpec::new("scomp.knee", 0.0, 18.0, Scale::Linear, "dB"),
    ]
}

/// Soft-knee gain computer. Returns the gain to add in dB (always ≤ 0):
/// zero below the knee, (1/R − 1)(level − T) above it, and a quadratic
/// interpolation inside.
pub fn static_gain_db(level_db: f64, threshold_db: f64, ratio: f64, knee_db: f64) -> f64 {
    let over = level_db - threshold_db;
    if 2.0 * over < -knee_db {
        0.0
    } else if 2.0 * over.abs() <= knee_db {
        let t = over + knee_db / 2.0;
        (1.0 / ratio - 1.0) * t * t / (2.0 * knee_db)
    } else {
        (1.0 / ratio - 1.0) * over
    }
}

/// One-pole coefficient for a time constant in milliseconds.
pub fn smoothing_coeff(tau_ms: f64, fs: f64) -> f64 {
    (-1.0 / (tau_ms * fs / 1000.0)).exp()
}

fn level_db(sample: f64) -> f64 {
    20.0 * sample.abs().max(LEVEL_FLOOR).log10()
}

/// Full feed-forward compressor: per-sample level detection, static gain,
/// branching one-pole smoothing of the gain reduction in dB.
pub fn compress(x: &AudioBuffer, p: &CompressorParams, fs: f64) -> Result<AudioBuffer> {
    p.validate()?;
    let alpha_attack = smoothing_coeff(p.attack_ms, fs);
    let alpha_release = smoothing_coeff(p.release_ms, fs);
    let mut reduction_state = 0.0; // smoothed gain reduction, dB ≥ 0
    let samples = x
        .samples()
        .iter()
        .map(|&s| {
            let reduction = -static_gain_db(level_db(s), p.threshold_db, p.ratio, p.knee_db);
            let alpha = if reduction > reduction_state {
                alpha_attack
            } else {
                alpha_release
            };
            reduction_state = alpha * reduction_state + (1.0 - alpha) * reduction;
            s * 10f64.powf(-reduction_state / 20.0)
        })
        .collect();
    AudioBuffer::new(samples, x.sample_rate())
}

/// Linked-time compressor; identical to [`compress`] with attack = release.
pub fn compress_simplified(
    x: &AudioBuffer,
    p: &SimplifiedCompressorParams,
    fs: f64,
) -> Result<AudioBuffer> {
    compress(
        x,
        &CompressorParams {
            threshold_db: p.threshold_db,
            ratio: p.ratio,
            attack_ms: p.time_ms,
            release_ms: p.time_ms,
            knee_db: p.knee_db,
        },
        fs,
    )
}

/// Tape twin of [`compress_simplified`]. Parameters arrive as denormalized
/// scalar nodes [threshold, ratio, time, knee]; gradients flow through all
/// four, including the smoothing coefficient.
pub fn compress_simplified_diff<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    threshold_db: Var<'t>,
    ratio: Var<'t>,
    time_ms: Var<'t>,
    knee_db: Var<'t>,
    fs: f64,
) -> Var<'t> {
    let ln10 = std::f64::consts::LN_10;
    // Level in dB with the detector floor; the clamp is constant in gradients.
    let level = x.abs().clamp_min(LEVEL_FLOOR).ln().scale(20.0 / ln10);

    let over = level - threshold_db;
    let inv_ratio_m1 = ratio.recip() - 1.0; // (1/R − 1) ≤ 0
    let half_knee = knee_db.scale(0.5);

    // Region masks from current forward values; the static curve is C¹ so the
    // masked assembly has the correct one-sided derivatives at the edges.
    let over_v = over.value();
    let knee_v = knee_db.scalar();
    let n = over_v.len();
    let mut in_knee = vec![0.0; n];
    let mut above = vec![0.0; n];
    for i in 0..n {
        let two_over = 2.0 * over_v[i];
        if two_over.abs() <= knee_v {
            in_knee[i] = 1.0;
        } else if two_over > knee_v {
            above[i] = 1.0;
        }
    }
    let in_knee = tape.constant(in_knee);
    let above = tape.constant(above);

    // Quadratic knee segment; knee is clamped away from zero only inside the
    // division so knee = 0 stays finite (its mask is empty in that case).
    let t = over + half_knee;
    let knee_gain = inv_ratio_m1 * t.square() / knee_db.clamp_min(1e-9).scale(2.0);
    let above_gain = inv_ratio_m1 * over;
    let gain_db = in_knee * knee_gain + above * above_gain; // ≤ 0

    let alpha = (time_ms.scale(fs / 1000.0)).recip().scale(-1.0).exp();
    let reduction = -gain_db;
    let smoothed = reduction.one_pole(alpha);
    let gain_lin = smoothed.scale(-ln10 / 20.0).exp();
    x * gain_lin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::signal::{gen_test_signal, rms, TestSignal};
    use rand::Rng;

    const FS: f64 = 44_100.0;

    #[test]
    fn hard_knee_gain_above_threshold() {
        // oracle: (T + (x−T)/R) − x = −20 + 10/4 − (−10) = −7.5
        let got = static_gain_db(-10.0, -20.0, 4.0, 0.0);
        assert_eq!(got, -7.5);
    }

    #[test]
    fn unity_ratio_never_reduces() {
        for level in [-60.0, -20.0, -5.0, 0.0, 6.0] {
            assert_eq!(static_gain_db(level, -20.0, 1.0, 6.0), 0.0);
        }
    }

    #[test]
    fn far_below_knee_is_untouched() {
        assert_eq!(static_gain_db(-40.0, -20.0, 4.0, 6.0), 0.0);
    }

    #[test]
    fn static_curve_is_monotone_and_c1_at_knee_edges() {
        let (t, r, w) = (-20.0, 4.0, 6.0);
        let out = |x: f64| x + static_gain_db(x, t, r, w);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..2000 {
            let x = -60.0 + k as f64 * 0.05;
            let y = out(x);
            assert!(y >= prev - 1e-12, "static curve not monotone at {x}");
            prev = y;
        }
        // slope continuity at both knee edges
        let h = 1e-6;
        for edge in [t - w / 2.0, t + w / 2.0] {
            let left = (out(edge) - out(edge - h)) / h;
            let right = (out(edge + h) - out(edge)) / h;
            assert!((left - right).abs() < 1e-4, "slope jump {} at {edge}", left - right);
        }
        // exact value continuity
        for edge in [t - w / 2.0, t + w / 2.0] {
            let below = static_gain_db(edge - 1e-12, t, r, w);
            let above = static_gain_db(edge + 1e-12, t, r, w);
            assert!((below - above).abs() < 1e-9);
        }
    }

    #[test]
    fn ratio_one_compressor_is_identity() {
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.05, 3, 44_100);
        let p = CompressorParams {
            threshold_db: -20.0,
            ratio: 1.0,
            attack_ms: 5.0,
            release_ms: 50.0,
            knee_db: 0.0,
        };
        let y = compress(&x, &p, FS).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn quiet_constant_signal_passes_untouched() {
        let x = AudioBuffer::new(vec![0.1; 512], 44_100).unwrap();
        let p = CompressorParams {
            threshold_db: 0.0,
            ratio: 8.0,
            attack_ms: 1.0,
            release_ms: 20.0,
            knee_db: 0.0,
        };
        let y = compress(&x, &p, FS).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attack_envelope_reaches_one_over_e_at_the_time_constant() {
        // amplitude step 0 → 1; gain reduction rises toward the static value
        // with the attack time constant.
        let mut samples = vec![0.0; 1000];
        samples.extend(vec![1.0; 44_100 / 10]);
        let x = AudioBuffer::new(samples, 44_100).unwrap();
        let p = CompressorParams {
            threshold_db: -20.0,
            ratio: 20.0,
            attack_ms: 10.0,
            release_ms: 200.0,
            knee_db: 0.0,
        };
        let y = compress(&x, &p, FS).unwrap();
        let static_reduction = -static_gain_db(0.0, -20.0, 20.0, 0.0); // 19 dB
        // find where the remaining distance to the static gain is 1/e
        let start = 1000;
        let mut crossing = None;
        for (i, &s) in y.samples().iter().enumerate().skip(start) {
            let reduction = -20.0 * s.abs().max(1e-12).log10();
            if (static_reduction - reduction) / static_reduction < (-1.0f64).exp() {
                crossing = Some(i - start);
                break;
            }
        }
        let n = crossing.expect("never crossed 1/e") as f64;
        let tau_samples = 10.0 * FS / 1000.0; // 441
        assert!(
            (n - tau_samples).abs() / tau_samples < 0.2,
            "1/e crossing at {n} samples, expected ≈ {tau_samples}"
        );
    }

    #[test]
    fn simplified_equals_full_with_linked_times() {
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.1, 7, 44_100);
        let sp = SimplifiedCompressorParams {
            threshold_db: -18.0,
            ratio: 6.0,
            time_ms: 12.0,
            knee_db: 4.0,
        };
        let fp = CompressorParams {
            threshold_db: -18.0,
            ratio: 6.0,
            attack_ms: 12.0,
            release_ms: 12.0,
            knee_db: 4.0,
        };
        let a = compress_simplified(&x, &sp, FS).unwrap();
        let b = compress(&x, &fp, FS).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn diff_path_matches_plain_simplified() {
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.05, 11, 44_100);
        let sp = SimplifiedCompressorParams {
            threshold_db: -24.0,
            ratio: 5.0,
            time_ms: 8.0,
            knee_db: 6.0,
        };
        let want = compress_simplified(&x, &sp, FS).unwrap();

        let tape = Tape::new();
        let xv = tape.constant(x.samples().to_vec());
        let y = compress_simplified_diff(
            &tape,
            xv,
            tape.scalar_leaf(sp.threshold_db),
            tape.scalar_leaf(sp.ratio),
            tape.scalar_leaf(sp.time_ms),
            tape.scalar_leaf(sp.knee_db),
            FS,
        );
        for (a, b) in want.samples().iter().zip(y.value().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn simplified_gain_never_exceeds_unity() {
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.2, 13, 44_100);
        let mut rng = stream_rng(55, 0);
        let specs = simplified_specs();
        for _ in 0..50 {
            let p = SimplifiedCompressorParams {
                threshold_db: specs[0].denorm(rng.gen()),
                ratio: specs[1].denorm(rng.gen()),
                time_ms: specs[2].denorm(rng.gen()),
                knee_db: specs[3].denorm(rng.gen()),
            };
            let y = compress_simplified(&x, &p, FS).unwrap();
            for (a, b) in x.samples().iter().zip(y.samples()) {
                assert!(b.abs() <= a.abs() + 1e-12, "amplified {a} -> {b}");
            }
            assert!(y.peak() <= x.peak() + 1e-12);
        }
    }

    #[test]
    fn diff_gradients_match_finite_differences() {
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.03, 17, 44_100);
        let target = compress_simplified(
            &x,
            &SimplifiedCompressorParams {
                threshold_db: -20.0,
                ratio: 4.0,
                time_ms: 10.0,
                knee_db: 3.0,
            },
            FS,
        )
        .unwrap();
        let specs = simplified_specs();

        let loss_at = |q: &[f64]| -> f64 {
            let tape = Tape::new();
            let xv = tape.constant(x.samples().to_vec());
            let qv = tape.leaf(q.to_vec());
            let p: Vec<_> = (0..4).map(|i| specs[i].denorm_var(qv.slice(i, 1))).collect();
            let y = compress_simplified_diff(&tape, xv, p[0], p[1], p[2], p[3], FS);
            let t = tape.constant(target.samples().to_vec());
            (y - t).square().mean().scalar()
        };

        let mut rng = stream_rng(77, 0);
        for draw in 0..5 {
            let q: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..0.9)).collect();
            let (_, grad) = crate::tape::gradient_of(
                |tape, qv| {
                    let xv = tape.constant(x.samples().to_vec());
                    let p: Vec<_> = (0..4).map(|i| specs[i].denorm_var(qv.slice(i, 1))).collect();
                    let y = compress_simplified_diff(&tape, xv, p[0], p[1], p[2], p[3], FS);
                    let t = tape.constant(target.samples().to_vec());
                    (y - t).square().mean()
                },
                &q,
            )
            .unwrap();
            for c in 0..4 {
                let eps = 1e-5;
                let mut hi = q.clone();
                let mut lo = q.clone();
                hi[c] += eps;
                lo[c] -= eps;
                let fd = (loss_at(&hi) - loss_at(&lo)) / (2.0 * eps);
                let denom = grad[c].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[c] - fd).abs() / denom < 1e-3,
                    "draw {draw} coord {c}: analytic {} vs fd {fd}",
                    grad[c]
                );
            }
        }
    }

    #[test]
    fn compression_reduces_dynamic_range_of_bursts() {
        // loud/quiet alternation should come out with a smaller level spread
        let mut samples = Vec::new();
        for block in 0..8 {
            let amp = if block % 2 == 0 { 1.0 } else { 0.05 };
            samples.extend((0..4410).map(|i| amp * (0.3 * i as f64).sin()));
        }
        let x = AudioBuffer::new(samples, 44_100).unwrap();
        let p = CompressorParams {
            threshold_db: -25.0,
            ratio: 8.0,
            attack_ms: 2.0,
            release_ms: 50.0,
            knee_db: 2.0,
        };
        let y = compress(&x, &p, FS).unwrap();
        let spread = |b: &AudioBuffer| {
            let loud = rms(&AudioBuffer::new(b.samples()[0..4410].to_vec(), 44_100).unwrap());
            let quiet = rms(&AudioBuffer::new(b.samples()[4410..8820].to_vec(), 44_100).unwrap());
            20.0 * (loud / quiet).log10()
        };
        assert!(spread(&y) < spread(&x) - 3.0, "no audible range reduction");
    }
}
