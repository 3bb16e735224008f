//! Neural proxy of the DSP compressor.
//!
//! A causal temporal convolutional network, conditioned on the five
//! normalized compressor parameters through per-layer feature-wise affine
//! (scale and shift) projections, predicts a per-sample gain in (0, 1):
//! ŷ[n] = g[n]·x[n]. Because the proxy is differentiable it can stand in for
//! the reference compressor during gradient-based estimation; the hybrid path
//! keeps the proxy for gradients but renders with the reference DSP
//! compressor at evaluation time.

use crate::dynamics::{compress, compressor_specs, CompressorParams};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::params::{denormalize, ParamVector};
use crate::rng::stream_rng;
use crate::signal::AudioBuffer;
use crate::tape::{Tape, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// TCN hyperparameters. The toy defaults (8 channels, 6 layers, kernel 5,
/// dilation growth 4) give a receptive field of 5461 samples — at least
/// 0.25 s for sample rates up to ~21 kHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub channels: usize,
    pub layers: usize,
    pub kernel: usize,
    pub dilation_growth: usize,
    pub cond_width: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            layers: 6,
            kernel: 5,
            dilation_growth: 4,
            cond_width: 16,
        }
    }
}

impl ProxyConfig {
    /// Number of input samples that can influence one output sample.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1usize;
        let mut dilation = 1usize;
        for _ in 0..self.layers {
            rf += (self.kernel - 1) * dilation;
            dilation *= self.dilation_growth;
        }
        rf
    }

    pub fn dilation_of_layer(&self, layer: usize) -> usize {
        self.dilation_growth.pow(layer as u32)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Slot {
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerSlots {
    /// kernels[out][in], each of length `kernel`
    kernels: Vec<Vec<Slot>>,
    bias: Slot,
    /// 1×1 residual projection kernels[out][in], length 1
    residual: Vec<Vec<Slot>>,
    prelu: Slot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CondSlots {
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
}

/// The proxy model: convolution stack plus conditioning projections, all
/// parameters in one flat vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyModel {
    pub config: ProxyConfig,
    pub params: Vec<f64>,
    layers: Vec<LayerSlots>,
    head: Vec<Slot>,
    head_bias: Slot,
    cond: CondSlots,
}

pub const COND_PARAMS: usize = 5;

fn alloc(
    params: &mut Vec<f64>,
    len: usize,
    bound: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Slot {
    let offset = params.len();
    params.extend((0..len).map(|_| rng.gen_range(-bound..bound)));
    Slot { offset, len }
}

impl ProxyModel {
    pub fn new(config: &ProxyConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x7C4);
        let mut params: Vec<f64> = Vec::new();

        let ch = config.channels;
        let k = config.kernel;
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let in_ch = if l == 0 { 1 } else { ch };
            let bound = 1.0 / ((in_ch * k) as f64).sqrt();
            let kernels = (0..ch)
                .map(|_| {
                    (0..in_ch)
                        .map(|_| alloc(&mut params, k, bound, &mut rng))
                        .collect()
                })
                .collect();
            let bias = alloc(&mut params, ch, bound, &mut rng);
            let rbound = 1.0 / (in_ch as f64).sqrt();
            let residual = (0..ch)
                .map(|_| {
                    (0..in_ch)
                        .map(|_| alloc(&mut params, 1, rbound, &mut rng))
                        .collect()
                })
                .collect();
            let prelu_offset = params.len();
            params.push(0.25);
            layers.push(LayerSlots {
                kernels,
                bias,
                residual,
                prelu: Slot {
                    offset: prelu_offset,
                    len: 1,
                },
            });
        }
        // 1×1 head collapsing channels to the gain signal
        let hbound = 1.0 / (ch as f64).sqrt();
        let head = (0..ch)
            .map(|_| alloc(&mut params, 1, hbound, &mut rng))
            .collect();
        let head_bias = alloc(&mut params, 1, hbound, &mut rng);

        // conditioning: 5 params → cond_width → per-layer (scale, shift) per channel
        let cw = config.cond_width;
        let film_out = config.layers * 2 * ch;
        let c1 = 1.0 / (COND_PARAMS as f64).sqrt();
        let w1 = alloc(&mut params, cw * COND_PARAMS, c1, &mut rng);
        let b1 = alloc(&mut params, cw, c1, &mut rng);
        let c2 = 1.0 / (cw as f64).sqrt();
        let w2 = alloc(&mut params, film_out * cw, c2, &mut rng);
        let b2 = alloc(&mut params, film_out, c2, &mut rng);

        Self {
            config: config.clone(),
            params,
            layers,
            head,
            head_bias,
            cond: CondSlots { w1, b1, w2, b2 },
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Tape forward: per-sample gain in (0, 1) times the input.
    /// `theta` is the flat parameter leaf, `cond` the 5 normalized compressor
    /// parameters (any tape node of length 5).
    pub fn forward_diff<'t>(
        &self,
        tape: &'t Tape,
        theta: Var<'t>,
        x: Var<'t>,
        cond: Var<'t>,
    ) -> Var<'t> {
        assert_eq!(cond.len(), COND_PARAMS);
        let cfg = &self.config;
        let ch = cfg.channels;

        // conditioning MLP → per-layer FiLM scales and shifts
        let w1 = theta.slice(self.cond.w1.offset, self.cond.w1.len);
        let b1 = theta.slice(self.cond.b1.offset, self.cond.b1.len);
        let hidden = cond.dense(w1, b1, cfg.cond_width, COND_PARAMS).tanh();
        let w2 = theta.slice(self.cond.w2.offset, self.cond.w2.len);
        let b2 = theta.slice(self.cond.b2.offset, self.cond.b2.len);
        let film = hidden.dense(w2, b2, cfg.layers * 2 * ch, cfg.cond_width);

        let mut acts: Vec<Var<'t>> = vec![x];
        for (l, layer) in self.layers.iter().enumerate() {
            let dilation = cfg.dilation_of_layer(l);
            let slope = theta.slice(layer.prelu.offset, 1);
            let mut next = Vec::with_capacity(ch);
            for (out_c, kernel_row) in layer.kernels.iter().enumerate() {
                let mut acc: Option<Var<'t>> = None;
                for (in_c, slot) in kernel_row.iter().enumerate() {
                    let w = theta.slice(slot.offset, slot.len);
                    let conv = acts[in_c].conv1d_causal(w, dilation);
                    acc = Some(match acc {
                        None => conv,
                        Some(a) => a + conv,
                    });
                }
                let bias = theta.slice(layer.bias.offset + out_c, 1);
                let z = acc.unwrap() + bias;
                // feature-wise affine conditioning: scale centered at 1
                let scale = film.slice((l * 2) * ch + out_c, 1) + 1.0;
                let shift = film.slice((l * 2 + 1) * ch + out_c, 1);
                let modulated = z * scale + shift;
                let activated = crate::nn::prelu(modulated, slope);
                // 1×1 residual path keeps gradients healthy through depth
                let mut res: Option<Var<'t>> = None;
                for (in_c, slot) in layer.residual[out_c].iter().enumerate() {
                    let w = theta.slice(slot.offset, 1);
                    let term = acts[in_c] * w;
                    res = Some(match res {
                        None => term,
                        Some(a) => a + term,
                    });
                }
                next.push(activated + res.unwrap());
            }
            acts = next;
        }

        let mut gain_pre: Option<Var<'t>> = None;
        for (c, slot) in self.head.iter().enumerate() {
            let w = theta.slice(slot.offset, 1);
            let term = acts[c] * w;
            gain_pre = Some(match gain_pre {
                None => term,
                Some(a) => a + term,
            });
        }
        let bias = theta.slice(self.head_bias.offset, 1);
        let gain = (gain_pre.unwrap() + bias).sigmoid();
        let _ = tape;
        gain * x
    }

    /// Inference on frozen weights (a tape forward without backward).
    pub fn forward(&self, x: &AudioBuffer, cond_q: &[f64]) -> Result<AudioBuffer> {
        if cond_q.len() != COND_PARAMS {
            return Err(Error::LengthMismatch {
                expected: COND_PARAMS,
                got: cond_q.len(),
            });
        }
        let tape = Tape::new();
        let theta = tape.constant(self.params.clone());
        let xv = tape.constant(x.samples().to_vec());
        let cond = tape.constant(cond_q.to_vec());
        let y = self.forward_diff(&tape, theta, xv, cond);
        AudioBuffer::new(y.value().as_ref().clone(), x.sample_rate())
    }
}

/// Renders with the reference DSP compressor from normalized parameters:
/// the hybrid evaluation path shared by proxy-based analysis chains.
pub fn hybrid_render(x: &AudioBuffer, q: &[f64], fs: f64) -> Result<AudioBuffer> {
    let specs = compressor_specs();
    let qv = ParamVector::normalized(q.to_vec())?;
    let p = denormalize(&qv, &specs)?;
    let v = p.values();
    compress(
        x,
        &CompressorParams {
            threshold_db: v[0],
            ratio: v[1],
            attack_ms: v[2],
            release_ms: v[3],
            knee_db: v[4],
        },
        fs,
    )
}

/// Settings for proxy training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Narrow normalized sampling box for the toy task, per parameter
    /// [threshold, ratio, attack, release, knee].
    pub q_min: [f64; COND_PARAMS],
    pub q_max: [f64; COND_PARAMS],
}

impl Default for ProxyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 260,
            batch_size: 8,
            learning_rate: 5e-3,
            seed: 0,
            q_min: [0.3, 0.0, 0.2, 0.2, 0.0],
            q_max: [0.9, 0.8, 0.6, 0.6, 0.4],
        }
    }
}

/// Draws normalized compressor parameters inside the training box.
pub fn sample_cond_q(cfg: &ProxyTrainConfig, rng: &mut impl Rng) -> Vec<f64> {
    (0..COND_PARAMS)
        .map(|c| rng.gen_range(cfg.q_min[c]..=cfg.q_max[c]))
        .collect()
}

/// Mean absolute error between proxy output and the reference compressor,
/// averaged over (clip, parameter draw) pairs.
pub fn proxy_mae(
    model: &ProxyModel,
    corpus: &[AudioBuffer],
    draws: &[Vec<f64>],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (clip, q) in corpus.iter().zip(draws) {
        let fs = clip.sample_rate() as f64;
        let reference = hybrid_render(clip, q, fs)?;
        let predicted = model.forward(clip, q)?;
        total += predicted
            .samples()
            .iter()
            .zip(reference.samples())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        count += clip.len();
    }
    Ok(total / count as f64)
}

/// Trains the proxy against the reference compressor on a synthetic corpus.
/// Each step samples clips and parameter draws from seeded streams, renders
/// ground truth with the DSP compressor, and minimizes mean absolute error.
pub fn proxy_train(
    config: &ProxyConfig,
    corpus: &[AudioBuffer],
    train_cfg: &ProxyTrainConfig,
) -> Result<ProxyModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = ProxyModel::new(config, train_cfg.seed);
    let mut opt = Adam::new(model.param_count(), train_cfg.learning_rate);
    let mut rng = stream_rng(train_cfg.seed, 0x7247);

    for step in 0..train_cfg.steps {
        let mut grad_acc = vec![0.0; model.param_count()];
        let mut batch_loss = 0.0;
        for _ in 0..train_cfg.batch_size {
            let clip = corpus.choose(&mut rng).unwrap();
            let q = sample_cond_q(train_cfg, &mut rng);
            let fs = clip.sample_rate() as f64;
            let reference = hybrid_render(clip, &q, fs)?;

            let tape = Tape::new();
            let theta = tape.leaf(model.params.clone());
            let xv = tape.constant(clip.samples().to_vec());
            let cond = tape.constant(q.clone());
            let y = model.forward_diff(&tape, theta, xv, cond);
            let target = tape.constant(reference.samples().to_vec());
            let loss = (y - target).abs().mean();
            let value = loss.scalar();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            batch_loss += value;
            let grads = tape.backward(loss)?;
            let g = grads.wrt(theta);
            for (acc, gi) in grad_acc.iter_mut().zip(&g) {
                *acc += gi / train_cfg.batch_size as f64;
            }
        }
        opt.step(&mut model.params, &grad_acc);
        if step % 50 == 0 {
            log::debug!(
                "proxy step {step}: batch MAE {:.5}",
                batch_loss / train_cfg.batch_size as f64
            );
        }
    }
    Ok(model)
}

/// Builds the synthetic proxy training corpus: noise bursts and
/// amplitude-modulated tones with varied levels, so the compressor's gain
/// actually moves.
pub fn proxy_corpus(n_clips: usize, samples_per_clip: usize, sample_rate: u32, seed: u64) -> Vec<AudioBuffer> {
    (0..n_clips)
        .map(|i| {
            let mut rng = stream_rng(seed, 0xC0 + i as u64);
            let fs = sample_rate as f64;
            let kind = i % 3;
            let samples: Vec<f64> = match kind {
                0 => {
                    // noise bursts with a quiet gap
                    let burst = samples_per_clip / 4;
                    (0..samples_per_clip)
                        .map(|t| {
                            let on = (t / burst) % 2 == 0;
                            let amp = if on { rng.gen_range(0.5..1.0) } else { 0.05 };
                            amp * rng.gen_range(-1.0..1.0)
                        })
                        .collect()
                }
                1 => {
                    // AM tone
                    let carrier = rng.gen_range(80.0..1200.0);
                    let mod_rate = rng.gen_range(0.5..4.0);
                    (0..samples_per_clip)
                        .map(|t| {
                            let tt = t as f64 / fs;
                            let env = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * mod_rate * tt).sin();
                            env * (2.0 * std::f64::consts::PI * carrier * tt).sin()
                        })
                        .collect()
                }
                _ => {
                    // decaying noise attack
                    (0..samples_per_clip)
                        .map(|t| {
                            let env = (-3.0 * t as f64 / samples_per_clip as f64).exp();
                            (0.2 + 0.8 * env) * rng.gen_range(-1.0..1.0)
                        })
                        .collect()
                }
            };
            crate::signal::peak_normalize(
                &AudioBuffer::new(samples, sample_rate).expect("corpus clip"),
            )
        })
        .collect()
}
