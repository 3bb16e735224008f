//! Parametric and graphic equalizers.
//!
//! Synthesis filters run as cascaded direct-form-II-transposed biquads in the
//! time domain. Analysis filters are applied in the frequency domain by
//! sampling the cascade's complex response on the FFT grid of the zero-padded
//! signal; both paths share the cookbook coefficient formulas.

use crate::error::{Error, Result};
use crate::fft::{next_pow2, transform_interleaved};
use crate::params::{ParamSpec, Scale};
use crate::signal::AudioBuffer;
use crate::tape::{Tape, Var};

/// Quality factor of one graphic-equalizer band: a 2-octave bandwidth gives
/// Q = 1 / (2·sinh(ln 2)) = 2/3.
pub const GRAPHIC_Q: f64 = 2.0 / 3.0;

/// Fixed center frequencies of the 10-band graphic equalizer: 31.25·2^k Hz.
pub fn graphic_centers() -> Vec<f64> {
    (0..10).map(|k| 31.25 * f64::powi(2.0, k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    LowShelf,
    Peak,
    HighShelf,
}

/// Normalized biquad coefficients (a0 = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// One band of an equalizer definition. Parametric bands draw center
/// frequency, gain, and Q from the parameter vector; graphic bands fix the
/// center and Q and expose only the gain.
#[derive(Debug, Clone, PartialEq)]
pub struct EqBandDef {
    pub kind: BandKind,
    pub fixed_center: Option<f64>,
}

/// An equalizer topology plus its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EqDefinition {
    bands: Vec<EqBandDef>,
    specs: Vec<ParamSpec>,
    name: &'static str,
}

impl EqDefinition {
    /// 5-band parametric equalizer: 1 low-shelf, 3 peak, 1 high-shelf,
    /// 3 parameters per band (15 total).
    pub fn parametric5() -> Self {
        let layout = [
            (BandKind::LowShelf, 20.0, 500.0),
            (BandKind::Peak, 100.0, 10_000.0),
            (BandKind::Peak, 100.0, 10_000.0),
            (BandKind::Peak, 100.0, 10_000.0),
            (BandKind::HighShelf, 1_000.0, 16_000.0),
        ];
        let mut bands = Vec::new();
        let mut specs = Vec::new();
        for (i, (kind, fmin, fmax)) in layout.into_iter().enumerate() {
            bands.push(EqBandDef {
                kind,
                fixed_center: None,
            });
            specs.push(ParamSpec::new(
                format!("eq.b{i}.freq"),
                fmin,
                fmax,
                Scale::Logarithmic,
                "Hz",
            ));
            specs.push(ParamSpec::new(
                format!("eq.b{i}.gain"),
                -12.0,
                12.0,
                Scale::Linear,
                "dB",
            ));
            specs.push(ParamSpec::new(
                format!("eq.b{i}.q"),
                0.3,
                4.0,
                Scale::Linear,
                "",
            ));
        }
        Self {
            bands,
            specs,
            name: "eq-parametric",
        }
    }

    /// [`EqDefinition::parametric5`] with every frequency range capped below
    /// the Nyquist limit of `fs`: same 15-parameter layout at any rate.
    pub fn parametric5_capped(fs: f64) -> Self {
        let cap = 0.42 * fs;
        let mut eq = Self::parametric5();
        for spec in eq.specs.iter_mut() {
            if spec.unit == "Hz" && spec.max > cap {
                spec.max = cap;
                if spec.min >= spec.max {
                    spec.min = spec.max / 25.0;
                }
            }
        }
        eq
    }

    /// Errors when any band can reach the Nyquist frequency of `fs`.
    pub fn validate_for_rate(&self, fs: f64) -> Result<()> {
        let mut idx = 0;
        for band in &self.bands {
            match band.fixed_center {
                Some(fc) => {
                    if fc >= fs / 2.0 {
                        return Err(Error::FrequencyOutOfRange { fc, fs });
                    }
                    idx += 1;
                }
                None => {
                    let fmax = self.specs[idx].max;
                    if fmax >= fs / 2.0 {
                        return Err(Error::FrequencyOutOfRange { fc: fmax, fs });
                    }
                    idx += 3;
                }
            }
        }
        Ok(())
    }

    /// 10-band graphic equalizer with fixed 2-octave peak bands; one gain
    /// parameter per band.
    pub fn graphic10() -> Self {
        let mut bands = Vec::new();
        let mut specs = Vec::new();
        for (i, fc) in graphic_centers().into_iter().enumerate() {
            bands.push(EqBandDef {
                kind: BandKind::Peak,
                fixed_center: Some(fc),
            });
            specs.push(ParamSpec::new(
                format!("geq.b{i}.gain"),
                -12.0,
                12.0,
                Scale::Linear,
                "dB",
            ));
        }
        Self {
            bands,
            specs,
            name: "eq-graphic",
        }
    }

    pub fn bands(&self) -> &[EqBandDef] {
        &self.bands
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.len()
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Cookbook coefficients for every band given denormalized parameters.
    pub fn coeffs(&self, p: &[f64], fs: f64) -> Result<Vec<BiquadCoeffs>> {
        if p.len() != self.specs.len() {
            return Err(Error::LengthMismatch {
                expected: self.specs.len(),
                got: p.len(),
            });
        }
        let mut out = Vec::with_capacity(self.bands.len());
        let mut idx = 0;
        for band in &self.bands {
            let c = match band.fixed_center {
                Some(fc) => {
                    let gain = p[idx];
                    idx += 1;
                    design_band(band.kind, fc, gain, GRAPHIC_Q, fs)?
                }
                None => {
                    let (fc, gain, q) = (p[idx], p[idx + 1], p[idx + 2]);
                    idx += 3;
                    design_band(band.kind, fc, gain, q, fs)?
                }
            };
            out.push(c);
        }
        Ok(out)
    }
}

/// RBJ cookbook coefficients for a shelf or peaking band.
pub fn design_band(kind: BandKind, fc: f64, gain_db: f64, q: f64, fs: f64) -> Result<BiquadCoeffs> {
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::FrequencyOutOfRange { fc, fs });
    }
    if q <= 0.0 {
        return Err(Error::OutOfRange(format!("Q must be positive, got {q}")));
    }
    let a = 10f64.powf(gain_db / 40.0);
    let w0 = 2.0 * std::f64::consts::PI * fc / fs;
    let (sin_w0, cos_w0) = w0.sin_cos();
    let alpha = sin_w0 / (2.0 * q);

    let (b0, b1, b2, a0, a1, a2) = match kind {
        BandKind::Peak => (
            1.0 + alpha * a,
            -2.0 * cos_w0,
            1.0 - alpha * a,
            1.0 + alpha / a,
            -2.0 * cos_w0,
            1.0 - alpha / a,
        ),
        BandKind::LowShelf => {
            let ap1 = a + 1.0;
            let am1 = a - 1.0;
            let tra = 2.0 * a.sqrt() * alpha;
            (
                a * (ap1 - am1 * cos_w0 + tra),
                2.0 * a * (am1 - ap1 * cos_w0),
                a * (ap1 - am1 * cos_w0 - tra),
                ap1 + am1 * cos_w0 + tra,
                -2.0 * (am1 + ap1 * cos_w0),
                ap1 + am1 * cos_w0 - tra,
            )
        }
        BandKind::HighShelf => {
            let ap1 = a + 1.0;
            let am1 = a - 1.0;
            let tra = 2.0 * a.sqrt() * alpha;
            (
                a * (ap1 + am1 * cos_w0 + tra),
                -2.0 * a * (am1 + ap1 * cos_w0),
                a * (ap1 + am1 * cos_w0 - tra),
                ap1 - am1 * cos_w0 + tra,
                2.0 * (am1 - ap1 * cos_w0),
                ap1 - am1 * cos_w0 - tra,
            )
        }
    };
    Ok(BiquadCoeffs {
        b0: b0 / a0,
        b1: b1 / a0,
        b2: b2 / a0,
        a1: a1 / a0,
        a2: a2 / a0,
    })
}

/// Complex response of one biquad at angular frequency ω (radians/sample).
pub fn biquad_response_at(c: &BiquadCoeffs, w: f64) -> (f64, f64) {
    let (s1, c1) = w.sin_cos();
    let (s2, c2) = (2.0 * w).sin_cos();
    let num_re = c.b0 + c.b1 * c1 + c.b2 * c2;
    let num_im = -(c.b1 * s1 + c.b2 * s2);
    let den_re = 1.0 + c.a1 * c1 + c.a2 * c2;
    let den_im = -(c.a1 * s1 + c.a2 * s2);
    let mag2 = den_re * den_re + den_im * den_im;
    (
        (num_re * den_re + num_im * den_im) / mag2,
        (num_im * den_re - num_re * den_im) / mag2,
    )
}

/// Cascade response sampled at ω_k = πk/(n_bins − 1), k = 0..n_bins−1
/// (DC to Nyquist inclusive). Returned as (re, im) pairs.
pub fn freq_response(coeffs: &[BiquadCoeffs], n_bins: usize, _fs: f64) -> Vec<(f64, f64)> {
    assert!(n_bins >= 2 && n_bins.is_power_of_two(), "n_bins must be a power of two ≥ 2");
    (0..n_bins)
        .map(|k| {
            let w = std::f64::consts::PI * k as f64 / (n_bins - 1) as f64;
            coeffs.iter().fold((1.0, 0.0), |(ar, ai), c| {
                let (hr, hi) = biquad_response_at(c, w);
                (ar * hr - ai * hi, ar * hi + ai * hr)
            })
        })
        .collect()
}

/// Cascaded biquad filtering, direct form II transposed, zero initial state.
pub fn apply_time_domain(x: &AudioBuffer, eq: &EqDefinition, p: &[f64]) -> Result<AudioBuffer> {
    let coeffs = eq.coeffs(p, x.sample_rate() as f64)?;
    let mut samples = x.samples().to_vec();
    for c in &coeffs {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in samples.iter_mut() {
            let input = *v;
            let y = c.b0 * input + s1;
            s1 = c.b1 * input - c.a1 * y + s2;
            s2 = c.b2 * input - c.a2 * y;
            *v = y;
        }
    }
    AudioBuffer::new(samples, x.sample_rate())
}

/// FFT size used by the frequency-sampled path: next power of two at or above
/// twice the signal length, which keeps time-aliasing of the filter tails
/// below the agreement tolerance with the time-domain cascade.
pub fn sampled_fft_size(len: usize) -> usize {
    next_pow2(2 * len.max(1))
}

/// Frequency-domain application: multiply the padded signal's spectrum by the
/// sampled cascade response (magnitude and phase), then invert.
pub fn apply_frequency_sampled(x: &AudioBuffer, eq: &EqDefinition, p: &[f64]) -> Result<AudioBuffer> {
    let fs = x.sample_rate() as f64;
    let coeffs = eq.coeffs(p, fs)?;
    let len = x.len();
    let n = sampled_fft_size(len);
    let m = n / 2 + 1;

    let mut spec = vec![0.0; 2 * n];
    for (i, &s) in x.samples().iter().enumerate() {
        spec[2 * i] = s;
    }
    transform_interleaved(&mut spec, false);

    // Half-spectrum response on the FFT grid, mirrored conjugate above Nyquist.
    let mut h = vec![(0.0, 0.0); m];
    for (k, slot) in h.iter_mut().enumerate() {
        let w = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        *slot = coeffs.iter().fold((1.0, 0.0), |(ar, ai), c| {
            let (hr, hi) = biquad_response_at(c, w);
            (ar * hr - ai * hi, ar * hi + ai * hr)
        });
    }
    for k in 0..n {
        let (hr, hi) = if k < m { h[k] } else { (h[n - k].0, -h[n - k].1) };
        let (xr, xi) = (spec[2 * k], spec[2 * k + 1]);
        spec[2 * k] = xr * hr - xi * hi;
        spec[2 * k + 1] = xr * hi + xi * hr;
    }
    transform_interleaved(&mut spec, true);
    let inv_n = 1.0 / n as f64;
    let samples = (0..len).map(|i| spec[2 * i] * inv_n).collect();
    AudioBuffer::new(samples, x.sample_rate())
}

/// Tape twin of [`apply_frequency_sampled`]. `params` are denormalized scalar
/// nodes in the definition's layout order.
pub fn apply_frequency_sampled_diff<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    eq: &EqDefinition,
    params: &[Var<'t>],
    fs: f64,
) -> Var<'t> {
    assert_eq!(params.len(), eq.param_count());
    let len = x.len();
    let n = sampled_fft_size(len);
    let m = n / 2 + 1;

    // Constant trigonometric grids for the half spectrum.
    let grid = |f: fn(f64) -> f64, mult: f64| -> Vec<f64> {
        (0..m)
            .map(|k| f(mult * 2.0 * std::f64::consts::PI * k as f64 / n as f64))
            .collect()
    };
    let cos1 = tape.constant(grid(f64::cos, 1.0));
    let sin1 = tape.constant(grid(f64::sin, 1.0));
    let cos2 = tape.constant(grid(f64::cos, 2.0));
    let sin2 = tape.constant(grid(f64::sin, 2.0));

    let mut acc: Option<(Var<'t>, Var<'t>)> = None;
    let mut idx = 0;
    for band in eq.bands() {
        let (fc, gain, q): (Var<'t>, Var<'t>, Var<'t>) = match band.fixed_center {
            Some(f) => {
                let gain = params[idx];
                idx += 1;
                (tape.scalar_const(f), gain, tape.scalar_const(GRAPHIC_Q))
            }
            None => {
                let out = (params[idx], params[idx + 1], params[idx + 2]);
                idx += 3;
                out
            }
        };
        let (b, a) = band_coeffs_diff(band.kind, fc, gain, q, fs);
        // Response of this band over the grid.
        let num_re = cos1 * b[1] + cos2 * b[2] + b[0];
        let num_im = -(sin1 * b[1] + sin2 * b[2]);
        let den_re = cos1 * a[0] + cos2 * a[1] + 1.0;
        let den_im = -(sin1 * a[0] + sin2 * a[1]);
        let mag2 = den_re.square() + den_im.square();
        let h_re = (num_re * den_re + num_im * den_im) / mag2;
        let h_im = (num_im * den_re - num_re * den_im) / mag2;
        acc = Some(match acc {
            None => (h_re, h_im),
            Some((ar, ai)) => (ar * h_re - ai * h_im, ar * h_im + ai * h_re),
        });
    }
    let (h_re, h_im) = acc.expect("equalizer with no bands");

    let h_full = h_re.hermitian_extend(h_im, n);
    let zeros = tape.constant(vec![0.0; n]);
    let spec = x.pad(0, n).interleave(zeros).fft();
    let filtered = spec.cmul(h_full).ifft().scale(1.0 / n as f64);
    filtered.re_part().slice(0, len)
}

/// Cookbook coefficients as tape scalars: returns ([b0, b1, b2], [a1, a2]).
fn band_coeffs_diff<'t>(
    kind: BandKind,
    fc: Var<'t>,
    gain_db: Var<'t>,
    q: Var<'t>,
    fs: f64,
) -> ([Var<'t>; 3], [Var<'t>; 2]) {
    let ln10 = std::f64::consts::LN_10;
    let a = gain_db.scale(ln10 / 40.0).exp();
    let w0 = fc.scale(2.0 * std::f64::consts::PI / fs);
    let cos_w0 = w0.cos();
    let sin_w0 = w0.sin();
    let alpha = sin_w0 / (q * 2.0);

    let (b0, b1, b2, a0, a1, a2) = match kind {
        BandKind::Peak => (
            alpha * a + 1.0,
            cos_w0 * -2.0,
            1.0 - alpha * a,
            alpha / a + 1.0,
            cos_w0 * -2.0,
            1.0 - alpha / a,
        ),
        BandKind::LowShelf => {
            let ap1 = a + 1.0;
            let am1 = a - 1.0;
            let tra = a.sqrt() * alpha * 2.0;
            (
                a * (ap1 - am1 * cos_w0 + tra),
                a * (am1 - ap1 * cos_w0) * 2.0,
                a * (ap1 - am1 * cos_w0 - tra),
                ap1 + am1 * cos_w0 + tra,
                (am1 + ap1 * cos_w0) * -2.0,
                ap1 + am1 * cos_w0 - tra,
            )
        }
        BandKind::HighShelf => {
            let ap1 = a + 1.0;
            let am1 = a - 1.0;
            let tra = a.sqrt() * alpha * 2.0;
            (
                a * (ap1 + am1 * cos_w0 + tra),
                a * (am1 + ap1 * cos_w0) * -2.0,
                a * (ap1 + am1 * cos_w0 - tra),
                ap1 - am1 * cos_w0 + tra,
                (am1 - ap1 * cos_w0) * 2.0,
                ap1 - am1 * cos_w0 - tra,
            )
        }
    };
    ([b0 / a0, b1 / a0, b2 / a0], [a1 / a0, a2 / a0])
}
