//! Effect chains: ordered effects with 0 dBFS peak pre-normalization before
//! each stage.
//!
//! Three rendering routes share one parameter layout:
//! - [`EffectChain::render`] — reference (synthesis) implementations:
//!   time-domain equalizer, full DSP compressor, parametric clipper.
//! - [`EffectChain::render_analysis`] — the analysis implementations in plain
//!   f64 (frequency-sampled equalizers, linked-time compressor, polynomial
//!   clippers); a hybrid proxy renders through the reference compressor.
//! - [`EffectChain::render_diff`] — same math as the analysis route on the
//!   gradient tape, starting from normalized parameters.

use crate::clipper::{
    clip_chebyshev, clip_chebyshev_diff, clip_parametric, clip_parametric_diff, clip_taylor,
    clip_taylor_diff, parametric_specs, polynomial_specs, ParametricClipperParams,
    PolynomialClipperParams, POLY_ORDER,
};
use crate::dynamics::{
    compress, compress_simplified, compress_simplified_diff, compressor_specs, simplified_specs,
    CompressorParams, SimplifiedCompressorParams,
};
use crate::eq::{
    apply_frequency_sampled, apply_frequency_sampled_diff, apply_time_domain, EqDefinition,
};
use crate::error::{Error, Result};
use crate::params::{denormalize, ParamSpec, ParamVector};
use crate::proxy::ProxyModel;
use crate::signal::{peak_normalize, AudioBuffer};
use crate::tape::{Tape, Var};
use std::sync::Arc;

#[derive(Debug, Clone)]
pub enum Effect {
    ParametricEq(EqDefinition),
    GraphicEq(EqDefinition),
    /// Full DSP compressor; synthesis only (not differentiable).
    DspCompressor,
    SimplifiedCompressor,
    /// Neural-proxy compressor. With `hybrid` set, evaluation renders through
    /// the reference DSP compressor while gradients still flow through the
    /// proxy.
    ProxyCompressor { model: Arc<ProxyModel>, hybrid: bool },
    ParametricClipper,
    TaylorClipper,
    ChebyshevClipper,
}

impl Effect {
    pub fn parametric_eq() -> Self {
        Effect::ParametricEq(EqDefinition::parametric5())
    }

    /// Parametric equalizer with frequency ranges capped for a low sample
    /// rate; same 15-parameter layout.
    pub fn parametric_eq_for_rate(fs: f64) -> Self {
        Effect::ParametricEq(EqDefinition::parametric5_capped(fs))
    }

    pub fn graphic_eq() -> Self {
        Effect::GraphicEq(EqDefinition::graphic10())
    }

    pub fn id(&self) -> &'static str {
        match self {
            Effect::ParametricEq(_) => "eq-parametric",
            Effect::GraphicEq(_) => "eq-graphic",
            Effect::DspCompressor => "comp-dsp",
            Effect::SimplifiedCompressor => "comp-simplified",
            Effect::ProxyCompressor { hybrid: false, .. } => "comp-proxy",
            Effect::ProxyCompressor { hybrid: true, .. } => "comp-proxy-hybrid",
            Effect::ParametricClipper => "clip-parametric",
            Effect::TaylorClipper => "clip-taylor",
            Effect::ChebyshevClipper => "clip-chebyshev",
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            Effect::ParametricEq(eq) | Effect::GraphicEq(eq) => eq.param_specs().to_vec(),
            Effect::DspCompressor | Effect::ProxyCompressor { .. } => compressor_specs(),
            Effect::SimplifiedCompressor => simplified_specs(),
            Effect::ParametricClipper => parametric_specs(),
            Effect::TaylorClipper => polynomial_specs("tclip", POLY_ORDER),
            Effect::ChebyshevClipper => polynomial_specs("cclip", POLY_ORDER),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().len()
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, Effect::DspCompressor)
    }

    /// Reference (synthesis-side) rendering from denormalized parameters.
    pub fn render(&self, x: &AudioBuffer, p: &[f64]) -> Result<AudioBuffer> {
        let fs = x.sample_rate() as f64;
        match self {
            Effect::ParametricEq(eq) => apply_time_domain(x, eq, p),
            Effect::GraphicEq(eq) => apply_frequency_sampled(x, eq, p),
            Effect::DspCompressor => compress(x, &full_comp_params(p)?, fs),
            Effect::SimplifiedCompressor => compress_simplified(x, &simplified_params(p)?, fs),
            Effect::ProxyCompressor { model, hybrid } => {
                if *hybrid {
                    compress(x, &full_comp_params(p)?, fs)
                } else {
                    model.forward(x, &self.normalize_slice(p)?)
                }
            }
            Effect::ParametricClipper => clip_parametric(x, &parametric_clip_params(p)?),
            Effect::TaylorClipper => clip_taylor(
                x,
                &PolynomialClipperParams {
                    coefficients: p.to_vec(),
                },
            ),
            Effect::ChebyshevClipper => clip_chebyshev(
                x,
                &PolynomialClipperParams {
                    coefficients: p.to_vec(),
                },
            ),
        }
    }

    /// Analysis-side rendering: the same implementations the gradient path
    /// uses, in plain f64. A hybrid proxy swaps in the reference compressor.
    pub fn render_analysis(&self, x: &AudioBuffer, p: &[f64]) -> Result<AudioBuffer> {
        let fs = x.sample_rate() as f64;
        match self {
            Effect::ParametricEq(eq) | Effect::GraphicEq(eq) => apply_frequency_sampled(x, eq, p),
            Effect::DspCompressor => compress(x, &full_comp_params(p)?, fs),
            Effect::SimplifiedCompressor => compress_simplified(x, &simplified_params(p)?, fs),
            Effect::ProxyCompressor { model, hybrid } => {
                if *hybrid {
                    compress(x, &full_comp_params(p)?, fs)
                } else {
                    model.forward(x, &self.normalize_slice(p)?)
                }
            }
            _ => self.render(x, p),
        }
    }

    fn normalize_slice(&self, p: &[f64]) -> Result<Vec<f64>> {
        let specs = self.param_specs();
        let q = crate::params::normalize(&ParamVector::denormalized(p.to_vec()), &specs)?;
        Ok(q.values().to_vec())
    }

    /// Tape rendering from this effect's normalized parameter nodes. `specs`
    /// carries the chain's (possibly overridden) ranges for this effect.
    pub fn apply_diff<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        q: &[Var<'t>],
        specs: &[ParamSpec],
        fs: f64,
    ) -> Result<Var<'t>> {
        if q.len() != specs.len() {
            return Err(Error::LengthMismatch {
                expected: specs.len(),
                got: q.len(),
            });
        }
        let denorm =
            |idx: usize| -> Var<'t> { specs[idx].denorm_var(q[idx]) };
        Ok(match self {
            Effect::ParametricEq(eq) | Effect::GraphicEq(eq) => {
                eq.validate_for_rate(fs)?;
                let params: Vec<Var<'t>> = (0..q.len()).map(denorm).collect();
                apply_frequency_sampled_diff(tape, x, eq, &params, fs)
            }
            Effect::DspCompressor => {
                return Err(Error::UnregisteredPrimitive(
                    "comp-dsp has no differentiable form; use comp-simplified or a proxy".into(),
                ))
            }
            Effect::SimplifiedCompressor => {
                compress_simplified_diff(tape, x, denorm(0), denorm(1), denorm(2), denorm(3), fs)
            }
            Effect::ProxyCompressor { model, .. } => {
                // the proxy is conditioned on normalized parameters directly
                let theta = tape.constant(model.params.clone());
                let cond = concat_scalars(tape, q);
                model.forward_diff(tape, theta, x, cond)
            }
            Effect::ParametricClipper => clip_parametric_diff(x, denorm(0), denorm(1), denorm(2)),
            Effect::TaylorClipper => {
                let coeffs: Vec<Var<'t>> = (0..q.len()).map(denorm).collect();
                clip_taylor_diff(x, &coeffs)
            }
            Effect::ChebyshevClipper => {
                let coeffs: Vec<Var<'t>> = (0..q.len()).map(denorm).collect();
                clip_chebyshev_diff(x, &coeffs)
            }
        })
    }
}

/// Packs scalar nodes into one vector node.
fn concat_scalars<'t>(tape: &'t Tape, parts: &[Var<'t>]) -> Var<'t> {
    let n = parts.len();
    let mut acc: Option<Var<'t>> = None;
    for (i, &p) in parts.iter().enumerate() {
        let placed = p.pad(i, n);
        acc = Some(match acc {
            None => placed,
            Some(a) => a + placed,
        });
    }
    let _ = tape;
    acc.expect("no parts")
}

fn full_comp_params(p: &[f64]) -> Result<CompressorParams> {
    if p.len() != 5 {
        return Err(Error::LengthMismatch {
            expected: 5,
            got: p.len(),
        });
    }
    Ok(CompressorParams {
        threshold_db: p[0],
        ratio: p[1],
        attack_ms: p[2],
        release_ms: p[3],
        knee_db: p[4],
    })
}

fn simplified_params(p: &[f64]) -> Result<SimplifiedCompressorParams> {
    if p.len() != 4 {
        return Err(Error::LengthMismatch {
            expected: 4,
            got: p.len(),
        });
    }
    Ok(SimplifiedCompressorParams {
        threshold_db: p[0],
        ratio: p[1],
        time_ms: p[2],
        knee_db: p[3],
    })
}

fn parametric_clip_params(p: &[f64]) -> Result<ParametricClipperParams> {
    if p.len() != 3 {
        return Err(Error::LengthMismatch {
            expected: 3,
            got: p.len(),
        });
    }
    Ok(ParametricClipperParams {
        gain_db: p[0],
        offset: p[1],
        hardness: p[2],
    })
}

/// An ordered list of effects sharing one concatenated parameter vector.
/// The chain owns the parameter-range table, so ranges can be overridden
/// (from the config file) without touching the effects.
#[derive(Debug, Clone)]
pub struct EffectChain {
    effects: Vec<Effect>,
    id: String,
    specs: Vec<ParamSpec>,
}

impl EffectChain {
    pub fn new(effects: Vec<Effect>) -> Self {
        let id = effects.iter().map(Effect::id).collect::<Vec<_>>().join("+");
        let specs = effects.iter().flat_map(|e| e.param_specs()).collect();
        Self { effects, id, specs }
    }

    /// Replaces named parameter ranges. Unknown names and invalid ranges are
    /// rejected.
    pub fn with_range_overrides(
        mut self,
        overrides: &std::collections::BTreeMap<String, (f64, f64)>,
    ) -> Result<Self> {
        for (name, &(min, max)) in overrides {
            let spec = self
                .specs
                .iter_mut()
                .find(|s| &s.name == name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            spec.min = min;
            spec.max = max;
            spec.validate()?;
        }
        Ok(self)
    }

    /// The paper's mastering chain on the synthesis side:
    /// equalizer → compressor → clipper with reference implementations.
    pub fn synthesis_default() -> Self {
        Self::new(vec![
            Effect::parametric_eq(),
            Effect::DspCompressor,
            Effect::ParametricClipper,
        ])
    }

    /// Differentiable analysis counterpart of [`EffectChain::synthesis_default`].
    pub fn analysis_default() -> Self {
        Self::new(vec![
            Effect::parametric_eq(),
            Effect::SimplifiedCompressor,
            Effect::ParametricClipper,
        ])
    }

    pub fn effects(&self) -> &[Effect] {
        &self.effects
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.len()
    }

    pub fn is_differentiable(&self) -> bool {
        self.effects.iter().all(Effect::is_differentiable)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        let expected = self.param_count();
        if got != expected {
            return Err(Error::LengthMismatch { expected, got });
        }
        Ok(())
    }

    fn render_with(
        &self,
        x: &AudioBuffer,
        p: &[f64],
        f: impl Fn(&Effect, &AudioBuffer, &[f64]) -> Result<AudioBuffer>,
    ) -> Result<AudioBuffer> {
        self.check_len(p.len())?;
        let mut signal = x.clone();
        let mut offset = 0;
        for effect in &self.effects {
            let count = effect.param_count();
            signal = peak_normalize(&signal);
            signal = f(effect, &signal, &p[offset..offset + count])?;
            offset += count;
        }
        Ok(signal)
    }

    /// Reference rendering from denormalized parameters, normalizing to
    /// 0 dBFS before each effect.
    pub fn render(&self, x: &AudioBuffer, p: &[f64]) -> Result<AudioBuffer> {
        self.render_with(x, p, |e, s, pp| e.render(s, pp))
    }

    /// Analysis-implementation rendering (see [`Effect::render_analysis`]).
    pub fn render_analysis(&self, x: &AudioBuffer, p: &[f64]) -> Result<AudioBuffer> {
        self.render_with(x, p, |e, s, pp| e.render_analysis(s, pp))
    }

    /// Reference rendering from a normalized vector.
    pub fn render_normalized(&self, x: &AudioBuffer, q: &[f64]) -> Result<AudioBuffer> {
        let specs = self.param_specs();
        let p = denormalize(&ParamVector::normalized(q.to_vec())?, &specs)?;
        self.render(x, p.values())
    }

    /// Tape rendering: slices the normalized parameter node per effect,
    /// peak-normalizes before each stage (gradient flows through the peak),
    /// and applies each analysis implementation.
    pub fn render_diff<'t>(&self, tape: &'t Tape, x: Var<'t>, q: Var<'t>, fs: f64) -> Result<Var<'t>> {
        self.check_len(q.len())?;
        let mut signal = x;
        let mut offset = 0;
        for effect in &self.effects {
            let count = effect.param_count();
            let peak = signal.max_abs().clamp_min(1e-9);
            signal = signal / peak;
            let q_slice: Vec<Var<'t>> = (0..count).map(|i| q.slice(offset + i, 1)).collect();
            let specs = &self.specs[offset..offset + count];
            signal = effect.apply_diff(tape, signal, &q_slice, specs, fs)?;
            offset += count;
        }
        Ok(signal)
    }

    /// Normalized parameter vector that renders this chain as close to the
    /// identity as its effects allow (unity gains, ratio 1, hard clip).
    pub fn neutral_q(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.param_count());
        for effect in &self.effects {
            for spec in effect.param_specs() {
                let v = match spec.name.as_str() {
                    name if name.ends_with(".gain") && name.starts_with("clip") => 0.0,
                    name if name.ends_with(".gain") => spec.norm(0.0), // 0 dB
                    name if name.ends_with(".ratio") => 0.0,           // ratio 1
                    name if name.ends_with(".offset") => spec.norm(0.0),
                    name if name.ends_with(".hardness") => 1.0, // hard clip = identity below 1
                    name if name.ends_with(".g1") => spec.norm(1.0), // linear term 1
                    name if name.starts_with("tclip") || name.starts_with("cclip") => spec.norm(0.0),
                    _ => 0.5,
                };
                q.push(v);
            }
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::signal::{gen_test_signal, TestSignal};
    use rand::Rng;

    #[test]
    fn chain_ids_and_param_counts() {
        let synth = EffectChain::synthesis_default();
        assert_eq!(synth.id(), "eq-parametric+comp-dsp+clip-parametric");
        assert_eq!(synth.param_count(), 15 + 5 + 3);
        let analysis = EffectChain::analysis_default();
        assert_eq!(analysis.param_count(), 15 + 4 + 3);
        assert!(analysis.is_differentiable());
        assert!(!synth.is_differentiable());
    }

    #[test]
    fn neutral_parameters_render_the_identity() {
        let chain = EffectChain::synthesis_default();
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.05, 1, 44_100);
        let y = chain.render_normalized(&x, &chain.neutral_q()).unwrap();
        let x_norm = peak_normalize(&x);
        for (a, b) in x_norm.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn each_effect_sees_a_peak_normalized_input() {
        // a quiet input into a hard clipper with +24 dB of gain must clip:
        // without pre-normalization a 0.01-peak signal would stay linear
        let chain = EffectChain::new(vec![Effect::ParametricClipper]);
        let x = AudioBuffer::new(
            (0..64).map(|i| 0.01 * ((i as f64 * 0.7).sin())).collect(),
            44_100,
        )
        .unwrap();
        let p = vec![24.0, 0.0, 2.0];
        let y = chain.render(&x, &p).unwrap();
        // the output saturates at 1/g (the definition divides by the gain)
        let g = 10f64.powf(24.0 / 20.0);
        assert!(y.peak() <= 1.0 / g + 1e-12);
        let saturated = y
            .samples()
            .iter()
            .filter(|s| s.abs() > 0.99 / g)
            .count();
        assert!(saturated > 0, "clipper never engaged");
    }

    #[test]
    fn render_rejects_wrong_parameter_count() {
        let chain = EffectChain::analysis_default();
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.01, 2, 44_100);
        assert!(matches!(
            chain.render(&x, &[0.0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn dsp_compressor_has_no_diff_path() {
        let chain = EffectChain::synthesis_default();
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.01, 3, 44_100);
        let tape = Tape::new();
        let xv = tape.constant(x.samples().to_vec());
        let q = tape.leaf(vec![0.5; chain.param_count()]);
        assert!(matches!(
            chain.render_diff(&tape, xv, q, 44_100.0),
            Err(Error::UnregisteredPrimitive(_))
        ));
    }

    #[test]
    fn diff_path_matches_analysis_render() {
        let chain = EffectChain::analysis_default();
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.05, 4, 44_100);
        let mut rng = stream_rng(42, 0);
        let q: Vec<f64> = (0..chain.param_count()).map(|_| rng.gen()).collect();

        let specs = chain.param_specs();
        let p = denormalize(&ParamVector::normalized(q.clone()).unwrap(), &specs).unwrap();
        let want = chain.render_analysis(&x, p.values()).unwrap();

        let tape = Tape::new();
        let xv = tape.constant(x.samples().to_vec());
        let qv = tape.leaf(q);
        let y = chain.render_diff(&tape, xv, qv, 44_100.0).unwrap();
        for (a, b) in want.samples().iter().zip(y.value().iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn proxy_chain_diff_path_runs_and_hybrid_renders_with_dsp() {
        let cfg = crate::proxy::ProxyConfig {
            channels: 2,
            layers: 2,
            kernel: 3,
            dilation_growth: 2,
            cond_width: 4,
        };
        let model = Arc::new(ProxyModel::new(&cfg, 7));
        let chain = EffectChain::new(vec![Effect::ProxyCompressor {
            model: Arc::clone(&model),
            hybrid: true,
        }]);
        let x = gen_test_signal(TestSignal::WhiteNoise, 0.02, 5, 16_000);
        let q = vec![0.5, 0.6, 0.4, 0.5, 0.1];

        // evaluation path is the reference compressor
        let specs = chain.param_specs();
        let p = denormalize(&ParamVector::normalized(q.clone()).unwrap(), &specs).unwrap();
        let want = crate::proxy::hybrid_render(&peak_normalize(&x), &q, 16_000.0).unwrap();
        let got = chain.render_analysis(&x, p.values()).unwrap();
        assert_eq!(want.samples(), got.samples());

        // gradient path goes through the proxy
        let tape = Tape::new();
        let xv = tape.constant(x.samples().to_vec());
        let qv = tape.leaf(q);
        let y = chain.render_diff(&tape, xv, qv, 16_000.0).unwrap();
        let loss = y.square().mean();
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(qv);
        assert!(g.iter().any(|&v| v != 0.0), "no gradient through the proxy");
    }
}
