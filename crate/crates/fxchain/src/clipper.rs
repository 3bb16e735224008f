//! Memoryless waveshapers: the parametric blend clipper and the Taylor and
//! Chebyshev polynomial clippers.
//!
//! The parametric clipper blends between tanh, a cubic soft clipper, and hard
//! clipping under a single hardness parameter h ∈ [0, 2]. The polynomial
//! clippers weight monomials x^h (Horner) or Chebyshev polynomials T_h(x)
//! (Clenshaw) with 24 coefficients each.

use crate::error::{Error, Result};
use crate::params::{ParamSpec, Scale};
use crate::signal::AudioBuffer;
use crate::tape::Var;

/// Number of polynomial coefficients.
pub const POLY_ORDER: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametricClipperParams {
    pub gain_db: f64,
    pub offset: f64,
    pub hardness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialClipperParams {
    pub coefficients: Vec<f64>,
}

/// Parameter table for the parametric clipper.
pub fn parametric_specs() -> Vec<ParamSpec> {
    vec![
        ParamSpec::new("clip.gain", 0.0, 24.0, Scale::Linear, "dB"),
        ParamSpec::new("clip.offset", -0.5, 0.5, Scale::Linear, ""),
        ParamSpec::new("clip.hardness", 0.0, 2.0, Scale::Linear, ""),
    ]
}

/// Parameter table for a polynomial clipper with `order` coefficients.
pub fn polynomial_specs(prefix: &str, order: usize) -> Vec<ParamSpec> {
    (0..order)
        .map(|h| ParamSpec::new(format!("{prefix}.g{h}"), -1.0, 1.0, Scale::Linear, ""))
        .collect()
}

/// Hard clipper: max(−1, min(1, x)).
pub fn f_hard(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Cubic soft clipper x − 4x³/27 on [−3/2, 3/2], sign(x) outside. Continuous
/// and C¹ at the boundary, saturating at ±1, slope 1 at the origin.
pub fn f_cubic(x: f64) -> f64 {
    let c = x.clamp(-1.5, 1.5);
    c - 4.0 * c * c * c / 27.0
}

/// Hardness blend: tanh → cubic over h ∈ [0, 1], cubic → hard over h ∈ (1, 2].
pub fn blend(x: f64, h: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&h) {
        return Err(Error::HardnessOutOfRange(h));
    }
    Ok(if h <= 1.0 {
        (1.0 - h) * x.tanh() + h * f_cubic(x)
    } else {
        (2.0 - h) * f_cubic(x) + (h - 1.0) * f_hard(x)
    })
}

/// Parametric clipper: y = (f(g·x + o, h) − f(o, h)) / g with the gain taken
/// in dB. The f(o, h)/g term keeps zero input at zero output.
pub fn clip_parametric(x: &AudioBuffer, p: &ParametricClipperParams) -> Result<AudioBuffer> {
    if !(0.0..=2.0).contains(&p.hardness) {
        return Err(Error::HardnessOutOfRange(p.hardness));
    }
    let g = 10f64.powf(p.gain_db / 20.0);
    let dc = blend(p.offset, p.hardness)?;
    let samples = x
        .samples()
        .iter()
        .map(|&s| (blend(g * s + p.offset, p.hardness).unwrap() - dc) / g)
        .collect();
    AudioBuffer::new(samples, x.sample_rate())
}

/// Taylor clipper: y[n] = Σ g_h · x[n]^h, evaluated by Horner's scheme.
pub fn clip_taylor(x: &AudioBuffer, p: &PolynomialClipperParams) -> Result<AudioBuffer> {
    let g = &p.coefficients;
    let samples = x
        .samples()
        .iter()
        .map(|&s| g.iter().rev().fold(0.0, |acc, &c| acc * s + c))
        .collect();
    AudioBuffer::new(samples, x.sample_rate())
}

/// Chebyshev clipper: y[n] = Σ g_h · T_h(x[n]), evaluated by Clenshaw
/// recurrence.
pub fn clip_chebyshev(x: &AudioBuffer, p: &PolynomialClipperParams) -> Result<AudioBuffer> {
    let g = &p.coefficients;
    let samples = x
        .samples()
        .iter()
        .map(|&s| {
            let (mut b1, mut b2) = (0.0, 0.0);
            for &c in g.iter().skip(1).rev() {
                let b0 = 2.0 * s * b1 - b2 + c;
                b2 = b1;
                b1 = b0;
            }
            s * b1 - b2 + g[0]
        })
        .collect();
    AudioBuffer::new(samples, x.sample_rate())
}

/// Chebyshev values T_2 .. T_n at a point, via the recurrence
/// T_n = 2x·T_{n−1} − T_{n−2}.
pub fn chebyshev_t(n: usize, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut t0, mut t1) = (1.0, x);
            for _ in 2..=n {
                let t2 = 2.0 * x * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
            t1
        }
    }
}

fn cubic_var<'t>(x: Var<'t>) -> Var<'t> {
    let c = x.clamp(-1.5, 1.5);
    c - c.square() * c * (4.0 / 27.0)
}

fn hard_var<'t>(x: Var<'t>) -> Var<'t> {
    x.clamp(-1.0, 1.0)
}

/// Tape blend. The branch is selected by the hardness value at trace time;
/// gradients w.r.t. h flow through the blend weights (one-sided at h = 1).
fn blend_var<'t>(x: Var<'t>, h: Var<'t>) -> Var<'t> {
    if h.scalar() <= 1.0 {
        (1.0 - h) * x.tanh() + h * cubic_var(x)
    } else {
        (2.0 - h) * cubic_var(x) + (h - 1.0) * hard_var(x)
    }
}

/// Tape twin of [`clip_parametric`]; `gain_db`, `offset`, `hardness` are
/// denormalized scalar nodes.
pub fn clip_parametric_diff<'t>(
    x: Var<'t>,
    gain_db: Var<'t>,
    offset: Var<'t>,
    hardness: Var<'t>,
) -> Var<'t> {
    let g = gain_db.scale(std::f64::consts::LN_10 / 20.0).exp();
    let dc = blend_var(offset, hardness);
    (blend_var(x * g + offset, hardness) - dc) / g
}

/// Tape twin of [`clip_taylor`]; `coeffs` are scalar nodes g_0 .. g_{H−1}.
pub fn clip_taylor_diff<'t>(x: Var<'t>, coeffs: &[Var<'t>]) -> Var<'t> {
    let mut iter = coeffs.iter().rev();
    let mut acc: Var<'t> = *iter.next().expect("at least one coefficient");
    for &c in iter {
        acc = acc * x + c;
    }
    // A zeroth-order-only evaluation never touches x; broadcast to length.
    if acc.len() == 1 && x.len() > 1 {
        acc = acc + x.scale(0.0);
    }
    acc
}

/// Tape twin of [`clip_chebyshev`] (Clenshaw).
pub fn clip_chebyshev_diff<'t>(x: Var<'t>, coeffs: &[Var<'t>]) -> Var<'t> {
    let two_x = x.scale(2.0);
    let mut b1: Option<Var<'t>> = None;
    let mut b2: Option<Var<'t>> = None;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = match (b1, b2) {
            (None, _) => c + x.scale(0.0), // broadcast to buffer length
            (Some(b1v), None) => two_x * b1v + c,
            (Some(b1v), Some(b2v)) => two_x * b1v - b2v + c,
        };
        b2 = b1;
        b1 = Some(b0);
    }
    match (b1, b2) {
        (Some(b1v), Some(b2v)) => x * b1v - b2v + coeffs[0],
        (Some(b1v), None) => x * b1v + coeffs[0],
        (None, _) => coeffs[0] + x.scale(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::signal::{gen_test_signal, TestSignal};
    use crate::tape::Tape;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn zero_hardness_is_tanh() {
        assert!((blend(0.5, 0.0).unwrap() - 0.5f64.tanh()).abs() < 1e-15);
        assert!((0.5f64.tanh() - 0.46211715726000974).abs() < 1e-12);
    }

    #[test]
    fn both_branch_formulas_agree_at_h_one() {
        for x in [-2.0, -0.7, 0.0, 0.3, 1.4, 2.5] {
            let from_low = (1.0 - 1.0) * f64::tanh(x) + 1.0 * f_cubic(x);
            let from_high = (2.0 - 1.0) * f_cubic(x) + (1.0 - 1.0) * f_hard(x);
            assert!((from_low - from_high).abs() < 1e-15);
            assert!((blend(x, 1.0).unwrap() - f_cubic(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn full_hardness_is_hard_clip() {
        assert_eq!(blend(1.5, 2.0).unwrap(), 1.0);
        assert_eq!(blend(-3.0, 2.0).unwrap(), -1.0);
        assert_eq!(blend(0.25, 2.0).unwrap(), 0.25);
    }

    #[test]
    fn blend_rejects_out_of_range_hardness() {
        assert!(matches!(blend(0.0, 2.5), Err(Error::HardnessOutOfRange(_))));
        assert!(matches!(blend(0.0, -0.1), Err(Error::HardnessOutOfRange(_))));
    }

    #[test]
    fn cubic_is_odd_and_saturates() {
        assert_eq!(f_cubic(0.0), 0.0);
        // boundary algebra: 1.5 − 4·1.5³/27 = 1.0 exactly
        assert_eq!(f_cubic(1.5), 1.0);
        assert_eq!(f_cubic(-2.0), -1.0);
        for x in [0.1, 0.5, 1.0, 1.4, 3.0] {
            assert!((f_cubic(x) + f_cubic(-x)).abs() < 1e-15);
        }
    }

    #[test]
    fn cubic_is_c1_at_the_boundary() {
        let h = 1e-7;
        let left = (f_cubic(1.5) - f_cubic(1.5 - h)) / h;
        let right = (f_cubic(1.5 + h) - f_cubic(1.5)) / h;
        assert!(left.abs() < 1e-6, "inner slope {left}");
        assert!(right.abs() < 1e-15, "outer slope {right}");
    }

    #[test]
    fn all_shapes_have_unit_slope_at_origin() {
        let h = 1e-7;
        for f in [f64::tanh as fn(f64) -> f64, f_cubic, f_hard] {
            let slope = (f(h) - f(-h)) / (2.0 * h);
            assert!((slope - 1.0).abs() < 1e-9, "slope {slope}");
        }
    }

    #[test]
    fn blend_is_continuous_in_hardness() {
        // max jump across h = 1 over a sampled x grid
        let eps = 1e-13;
        for k in 0..100 {
            let x = -3.0 + k as f64 * 0.06;
            let below = blend(x, 1.0 - eps).unwrap();
            let above = blend(x, 1.0 + eps).unwrap();
            assert!((below - above).abs() < 1e-12, "jump at x = {x}");
        }
    }

    fn buf(samples: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(samples, 44_100).unwrap()
    }

    #[test]
    fn parametric_zero_input_gives_zero_output() {
        let x = buf(vec![0.0; 16]);
        for (g, o, h) in [(0.0, 0.3, 0.5), (12.0, -0.4, 1.7), (24.0, 0.5, 0.0)] {
            let y = clip_parametric(
                &x,
                &ParametricClipperParams {
                    gain_db: g,
                    offset: o,
                    hardness: h,
                },
            )
            .unwrap();
            assert!(y.samples().iter().all(|&s| s.abs() < 1e-15));
        }
    }

    #[test]
    fn parametric_hard_clips_at_unity_gain() {
        let y = clip_parametric(
            &buf(vec![2.0]),
            &ParametricClipperParams {
                gain_db: 0.0,
                offset: 0.0,
                hardness: 2.0,
            },
        )
        .unwrap();
        assert_eq!(y.samples()[0], 1.0);
    }

    #[test]
    fn parametric_is_linear_for_small_signals_at_zero_hardness() {
        let y = clip_parametric(
            &buf(vec![0.01]),
            &ParametricClipperParams {
                gain_db: 0.0,
                offset: 0.0,
                hardness: 0.0,
            },
        )
        .unwrap();
        assert!((y.samples()[0] - 0.01).abs() < 1e-5);
    }

    #[test]
    fn taylor_with_unit_linear_coefficient_is_identity() {
        let mut g = vec![0.0; POLY_ORDER];
        g[1] = 1.0;
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.01, 2, 44_100);
        let y = clip_taylor(&x, &PolynomialClipperParams { coefficients: g }).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn taylor_constant_term_gives_constant_output() {
        let mut g = vec![0.0; POLY_ORDER];
        g[0] = 0.5;
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.01, 3, 44_100);
        let y = clip_taylor(&x, &PolynomialClipperParams { coefficients: g }).unwrap();
        assert!(y.samples().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn horner_matches_naive_power_sum() {
        let mut rng = stream_rng(5, 0);
        let g: Vec<f64> = (0..POLY_ORDER).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = 0.3f64;
        let naive: f64 = g.iter().enumerate().map(|(h, &c)| c * x.powi(h as i32)).sum();
        let y = clip_taylor(&buf(vec![x]), &PolynomialClipperParams { coefficients: g }).unwrap();
        assert!((y.samples()[0] - naive).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_recurrence_values() {
        // T_2(0.5) = 2·0.25 − 1 = −0.5; T_3(0.5) = 2·0.5·(−0.5) − 0.5 = −1.0
        assert_eq!(chebyshev_t(2, 0.5), -0.5);
        assert_eq!(chebyshev_t(3, 0.5), -1.0);
        let mut g = vec![0.0; 4];
        g[2] = 1.0;
        let y2 = clip_chebyshev(&buf(vec![0.5]), &PolynomialClipperParams { coefficients: g.clone() })
            .unwrap();
        assert!((y2.samples()[0] + 0.5).abs() < 1e-15);
        g[2] = 0.0;
        g[3] = 1.0;
        let y3 =
            clip_chebyshev(&buf(vec![0.5]), &PolynomialClipperParams { coefficients: g }).unwrap();
        assert!((y3.samples()[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn chebyshev_with_unit_linear_coefficient_is_identity() {
        let mut g = vec![0.0; POLY_ORDER];
        g[1] = 1.0;
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.01, 4, 44_100);
        let y = clip_chebyshev(&x, &PolynomialClipperParams { coefficients: g }).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chebyshev_matches_taylor_on_converted_coefficients() {
        // build monomial rows of T_0..T_5 and convert a small Chebyshev
        // expansion into monomial form
        let order = 6;
        let mut rows: Vec<Vec<f64>> = vec![vec![1.0], vec![0.0, 1.0]];
        for n in 2..order {
            let mut row = vec![0.0; n + 1];
            for (i, &c) in rows[n - 1].iter().enumerate() {
                row[i + 1] += 2.0 * c;
            }
            for (i, &c) in rows[n - 2].iter().enumerate() {
                row[i] -= c;
            }
            rows.push(row);
        }
        let mut rng = stream_rng(6, 0);
        let g: Vec<f64> = (0..order).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut mono = vec![0.0; order];
        for (h, &c) in g.iter().enumerate() {
            for (i, &m) in rows[h].iter().enumerate() {
                mono[i] += c * m;
            }
        }
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.005, 7, 44_100);
        let a = clip_chebyshev(&x, &PolynomialClipperParams { coefficients: g }).unwrap();
        let b = clip_taylor(&x, &PolynomialClipperParams { coefficients: mono }).unwrap();
        for (p, q) in a.samples().iter().zip(b.samples()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn chebyshev_third_order_isolates_the_third_harmonic() {
        // drive T_3 with a pure tone; the output spectrum concentrates at 3f
        let fs = 44_100u32;
        let n = 4096;
        let cycles = 32.0;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * cycles * i as f64 / n as f64).sin())
            .collect();
        let mut g = vec![0.0; POLY_ORDER];
        g[3] = 1.0;
        let y = clip_chebyshev(&buf(x), &PolynomialClipperParams { coefficients: g }).unwrap();
        let _ = fs;
        let spec = crate::fft::fft_real(y.samples(), n);
        let mags = crate::fft::magnitudes(&spec, n / 2 + 1);
        let total: f64 = mags.iter().map(|m| m * m).sum();
        let at_3f = mags[(3.0 * cycles) as usize].powi(2);
        assert!(at_3f / total > 0.45, "energy share at 3f: {}", at_3f / total);
    }

    #[test]
    fn clippers_are_memoryless_under_permutation() {
        let mut rng = stream_rng(8, 0);
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.005, 9, 44_100);
        let mut perm: Vec<usize> = (0..x.len()).collect();
        perm.shuffle(&mut rng);
        let permuted = buf(perm.iter().map(|&i| x.samples()[i]).collect());

        let p = ParametricClipperParams {
            gain_db: 9.0,
            offset: 0.2,
            hardness: 1.3,
        };
        let y = clip_parametric(&x, &p).unwrap();
        let yp = clip_parametric(&permuted, &p).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(yp.samples()[k], y.samples()[i]);
        }
    }

    #[test]
    fn diff_paths_match_plain_evaluation() {
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.01, 10, 44_100);
        let tape = Tape::new();
        let xv = tape.constant(x.samples().to_vec());

        let p = ParametricClipperParams {
            gain_db: 15.0,
            offset: -0.3,
            hardness: 1.6,
        };
        let want = clip_parametric(&x, &p).unwrap();
        let y = clip_parametric_diff(
            xv,
            tape.scalar_leaf(p.gain_db),
            tape.scalar_leaf(p.offset),
            tape.scalar_leaf(p.hardness),
        );
        for (a, b) in want.samples().iter().zip(y.value().iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut rng = stream_rng(11, 0);
        let g: Vec<f64> = (0..POLY_ORDER).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coeffs: Vec<_> = g.iter().map(|&c| tape.scalar_leaf(c)).collect();
        let want_t = clip_taylor(&x, &PolynomialClipperParams { coefficients: g.clone() }).unwrap();
        let yt = clip_taylor_diff(xv, &coeffs);
        for (a, b) in want_t.samples().iter().zip(yt.value().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let want_c = clip_chebyshev(&x, &PolynomialClipperParams { coefficients: g }).unwrap();
        let yc = clip_chebyshev_diff(xv, &coeffs);
        for (a, b) in want_c.samples().iter().zip(yc.value().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn parametric_gradients_match_finite_differences() {
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.01, 12, 44_100);
        let target = clip_parametric(
            &x,
            &ParametricClipperParams {
                gain_db: 6.0,
                offset: 0.1,
                hardness: 0.7,
            },
        )
        .unwrap();
        let specs = parametric_specs();
        let loss_at = |q: &[f64]| -> f64 {
            let tape = Tape::new();
            let xv = tape.constant(x.samples().to_vec());
            let qv = tape.leaf(q.to_vec());
            let p: Vec<_> = (0..3).map(|i| specs[i].denorm_var(qv.slice(i, 1))).collect();
            let y = clip_parametric_diff(xv, p[0], p[1], p[2]);
            let t = tape.constant(target.samples().to_vec());
            (y - t).square().mean().scalar()
        };
        let mut rng = stream_rng(13, 0);
        for _ in 0..5 {
            // stay away from the h = 1 branch point, a documented kink
            let q = vec![
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                if rng.gen::<bool>() {
                    rng.gen_range(0.05..0.45)
                } else {
                    rng.gen_range(0.55..0.95)
                },
            ];
            let (_, grad) = crate::tape::gradient_of(
                |tape, qv| {
                    let xv = tape.constant(x.samples().to_vec());
                    let p: Vec<_> = (0..3).map(|i| specs[i].denorm_var(qv.slice(i, 1))).collect();
                    let y = clip_parametric_diff(xv, p[0], p[1], p[2]);
                    let t = tape.constant(target.samples().to_vec());
                    (y - t).square().mean()
                },
                &q,
            )
            .unwrap();
            for c in 0..3 {
                let eps = 1e-5;
                let mut hi = q.clone();
                let mut lo = q.clone();
                hi[c] += eps;
                lo[c] -= eps;
                let fd = (loss_at(&hi) - loss_at(&lo)) / (2.0 * eps);
                let denom = grad[c].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[c] - fd).abs() / denom < 1e-3,
                    "coord {c}: {} vs {fd}",
                    grad[c]
                );
            }
        }
    }
}
