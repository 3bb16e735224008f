//! Parameter estimation: paired gradient-descent fitting and blind training
//! of an analysis network.
//!
//! The analysis network is an encoder that maps wet audio to a fixed-length
//! embedding (per-band mean and standard deviation of the log-Mel
//! spectrogram) followed by an MLP head with batch normalization and PReLU
//! after each hidden layer and a sigmoid over the normalized parameters. The
//! blind trainer minimizes either the audio reconstruction loss through the
//! differentiable analysis chain or the normalized-parameter MSE.

use crate::chain::EffectChain;
use crate::checkpoint::{mlp_from_weights, mlp_to_weights, Checkpoint, CHECKPOINT_VERSION};
use crate::dataset::{synthesize_dataset, DatasetRecord};
use crate::error::{Error, Result};
use crate::loss::{
    log_mel, loss_mel_l1, loss_mel_l1_diff, mel_spectrogram, mse_audio, mse_params,
    rms_normalize_diff, MelConfig, MelFilterbank, MelMatrix,
};
use crate::nn::{Adam, Mlp};
use crate::params::{denormalize, ParamSpec, ParamVector};
use crate::rng::{derive_seed, stream_rng};
use crate::signal::{peak_normalize, rms_normalize, AudioBuffer};
use crate::tape::{Tape, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use std::path::Path;

/// Training objective for the blind estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Audio reconstruction: Mel-L1 between the re-rendered and target audio.
    AudioMelL1,
    /// Parameter reconstruction: MSE between q̂ and q.
    ParamMse,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Examples per epoch; 0 means the whole training set.
    pub epoch_size: usize,
    /// Epochs without validation improvement before the learning rate
    /// drops by 10×.
    pub patience_lr: usize,
    /// Epochs without improvement before training stops.
    pub patience_stop: usize,
    pub seed: u64,
    /// Divisor applied to the full-scale head sizes (2048, 1024, 512).
    pub encoder_divisor: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 400,
            epoch_size: 0,
            patience_lr: 30,
            patience_stop: 150,
            seed: 0,
            encoder_divisor: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.encoder_divisor == 0
        {
            return Err(Error::Config("training settings must be positive".into()));
        }
        if self.patience_lr >= self.patience_stop {
            return Err(Error::Config(format!(
                "patience_lr {} must be below patience_stop {}",
                self.patience_lr, self.patience_stop
            )));
        }
        Ok(())
    }
}

/// Encoder + MLP head estimating normalized parameters from wet audio.
#[derive(Debug, Clone)]
pub struct AnalysisNetwork {
    pub mlp: Mlp,
    pub mel: MelConfig,
    pub chain_id: String,
    pub param_specs: Vec<ParamSpec>,
    pub clip_len: usize,
    pub encoder_divisor: usize,
}

impl AnalysisNetwork {
    pub fn new(
        chain_a: &EffectChain,
        mel: &MelConfig,
        clip_len: usize,
        encoder_divisor: usize,
        seed: u64,
    ) -> Self {
        let input = 2 * mel.mel_bands;
        let hidden: Vec<usize> = [2048, 1024, 512]
            .iter()
            .map(|&s| (s / encoder_divisor).max(1))
            .collect();
        let mut sizes = vec![input];
        sizes.extend(hidden);
        sizes.push(chain_a.param_count());
        Self {
            mlp: Mlp::new(&sizes, seed),
            mel: mel.clone(),
            chain_id: chain_a.id().to_string(),
            param_specs: chain_a.param_specs().to_vec(),
            clip_len,
            encoder_divisor,
        }
    }

    pub fn encoder_name(&self) -> String {
        format!("melstats-mlp/{}", self.encoder_divisor)
    }

    pub fn filterbank(&self) -> Result<MelFilterbank> {
        MelFilterbank::new(&self.mel)
    }

    /// Time-invariant embedding: per-band mean and standard deviation of the
    /// log-Mel spectrogram of the peak-normalized input.
    pub fn embed(&self, fb: &MelFilterbank, y: &AudioBuffer) -> Result<Vec<f64>> {
        let normed = peak_normalize(y);
        let m = log_mel(&mel_spectrogram(&normed, fb)?, self.mel.log_floor);
        let mut out = Vec::with_capacity(2 * m.bands);
        let frames = m.frames as f64;
        for b in 0..m.bands {
            let row = &m.data[b * m.frames..(b + 1) * m.frames];
            let mean = row.iter().sum::<f64>() / frames;
            out.push(mean);
        }
        for b in 0..m.bands {
            let row = &m.data[b * m.frames..(b + 1) * m.frames];
            let mean = out[b];
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / frames;
            out.push((var + 1e-12).sqrt());
        }
        Ok(out)
    }

    /// Normalized parameter estimate for one wet clip (inference mode).
    pub fn predict(&self, y: &AudioBuffer) -> Result<ParamVector> {
        let fb = self.filterbank()?;
        self.predict_with(&fb, y)
    }

    pub fn predict_with(&self, fb: &MelFilterbank, y: &AudioBuffer) -> Result<ParamVector> {
        if y.len() != self.clip_len {
            return Err(Error::LengthMismatch {
                expected: self.clip_len,
                got: y.len(),
            });
        }
        let embedding = self.embed(fb, y)?;
        ParamVector::normalized(self.mlp.forward_eval(&embedding))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: "analysis".into(),
            chain_id: self.chain_id.clone(),
            mel: Some(self.mel.clone()),
            param_specs: self.param_specs.clone(),
            clip_len: Some(self.clip_len),
            mlp: Some(mlp_to_weights(&self.mlp)),
            proxy: None,
        }
        .save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != "analysis" {
            return Err(Error::CheckpointMismatch(format!(
                "kind {} is not an analysis network",
                ck.kind
            )));
        }
        let weights = ck
            .mlp
            .as_ref()
            .ok_or_else(|| Error::CheckpointMismatch("missing network weights".into()))?;
        let mlp = mlp_from_weights(weights)?;
        let mel = ck
            .mel
            .ok_or_else(|| Error::CheckpointMismatch("missing Mel settings".into()))?;
        if mlp.output_dim() != ck.param_specs.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} outputs vs {} parameter specs",
                mlp.output_dim(),
                ck.param_specs.len()
            )));
        }
        // the head layout encodes the divisor: first hidden size = 2048 / d
        let encoder_divisor = (2048 / mlp.sizes[1].max(1)).max(1);
        Ok(Self {
            mlp,
            mel,
            chain_id: ck.chain_id,
            param_specs: ck.param_specs,
            clip_len: ck
                .clip_len
                .ok_or_else(|| Error::CheckpointMismatch("missing clip length".into()))?,
            encoder_divisor,
        })
    }
}

// --- paired estimation ------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Total gradient-step budget across all restarts.
    pub steps: usize,
    pub learning_rate: f64,
    pub plateau_patience: usize,
    /// Starting point in normalized space; 0.5 per coordinate when absent.
    pub init_q: Option<Vec<f64>>,
    /// Forward-only random starting-point probes (no gradient steps); the
    /// best probes seed the restarts. Helps multimodal fits such as
    /// band-frequency assignment.
    pub init_probes: usize,
    pub probe_seed: u64,
    /// Independent descents sharing the step budget; the best result wins.
    pub restarts: usize,
    /// Stop as soon as the loss falls below this value.
    pub stop_below: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 0.05,
            plateau_patience: 100,
            init_q: None,
            init_probes: 0,
            probe_seed: 0,
            restarts: 1,
            stop_below: None,
        }
    }
}

/// Trajectory and outcome of a paired fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub q_trajectory: Vec<Vec<f64>>,
    pub loss_trajectory: Vec<f64>,
    pub best_q: Vec<f64>,
    pub best_loss: f64,
    pub steps_run: usize,
    /// Step at which the loss turned non-finite, if the fit aborted.
    pub aborted_at: Option<usize>,
}

/// Gradient descent on unconstrained logits s with q = sigmoid(s), minimizing
/// the Mel-L1 loss between the differentiable analysis render of x and the
/// target y. Stops at the step limit or after `plateau_patience`
/// non-improving steps.
pub fn fit_paired(
    x: &AudioBuffer,
    y: &AudioBuffer,
    chain_a: &EffectChain,
    mel: &MelConfig,
    cfg: &FitConfig,
) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    let fb = MelFilterbank::new(mel)?;
    let target = log_mel(&mel_spectrogram(&rms_normalize(y)?, &fb)?, mel.log_floor);
    let c = chain_a.param_count();
    let fs = x.sample_rate() as f64;

    let loss_at = |q: &[f64]| -> Result<f64> {
        let tape = Tape::new();
        let qv = tape.constant(q.to_vec());
        let xv = tape.constant(x.samples().to_vec());
        let rendered = chain_a.render_diff(&tape, xv, qv, fs)?;
        Ok(loss_mel_l1_diff(&tape, rms_normalize_diff(rendered), &target, &fb).scalar())
    };

    // starting points, best probes first
    let starts: Vec<Vec<f64>> = match &cfg.init_q {
        Some(q) => vec![q.clone()],
        None => {
            let mut candidates = vec![(loss_at(&vec![0.5; c])?, vec![0.5; c])];
            let mut rng = stream_rng(cfg.probe_seed, 0xF17);
            for _ in 0..cfg.init_probes {
                let q: Vec<f64> = (0..c).map(|_| rng.gen_range(0.05..0.95)).collect();
                let value = loss_at(&q)?;
                if value.is_finite() {
                    candidates.push((value, q));
                }
            }
            candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            candidates
                .into_iter()
                .take(cfg.restarts.max(1))
                .map(|(_, q)| q)
                .collect()
        }
    };

    let restarts = starts.len();
    let steps_per_restart = (cfg.steps / restarts).max(1);
    let mut result = FitResult {
        q_trajectory: Vec::new(),
        loss_trajectory: Vec::new(),
        best_q: starts[0].clone(),
        best_loss: f64::INFINITY,
        steps_run: 0,
        aborted_at: None,
    };

    'restarts: for init in starts {
        let mut logits: Vec<f64> = init
            .iter()
            .map(|&q| {
                let q = q.clamp(1e-7, 1.0 - 1e-7);
                (q / (1.0 - q)).ln()
            })
            .collect();
        let mut opt = Adam::new(c, cfg.learning_rate);
        let mut stale = 0usize;
        let mut local_best = f64::INFINITY;

        for _ in 0..steps_per_restart {
            let tape = Tape::new();
            let s = tape.leaf(logits.clone());
            let q = s.sigmoid();
            let xv = tape.constant(x.samples().to_vec());
            let rendered = chain_a.render_diff(&tape, xv, q, fs)?;
            let loss = loss_mel_l1_diff(&tape, rms_normalize_diff(rendered), &target, &fb);
            let value = loss.scalar();
            let q_now = q.value().as_ref().clone();
            if !value.is_finite() {
                result.aborted_at = Some(result.steps_run);
                break 'restarts;
            }
            result.q_trajectory.push(q_now.clone());
            result.loss_trajectory.push(value);
            result.steps_run += 1;
            if value < result.best_loss - 1e-12 {
                result.best_loss = value;
                result.best_q = q_now.clone();
            }
            // the plateau rule is local to this restart
            if value < local_best - 1e-12 {
                local_best = value;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.plateau_patience {
                    break;
                }
            }
            if let Some(threshold) = cfg.stop_below {
                if result.best_loss < threshold {
                    break 'restarts;
                }
            }
            let grads = tape.backward(loss)?;
            let g = grads.wrt(s);
            opt.step(&mut logits, &g);
        }
        if let Some(threshold) = cfg.stop_below {
            if result.best_loss < threshold {
                break 'restarts;
            }
        }
    }
    Ok(result)
}

// --- blind training ---------------------------------------------------------

/// Train/validation record pools for blind training.
pub struct Dataset {
    pub train: Vec<DatasetRecord>,
    pub validation: Vec<DatasetRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val: f64,
    pub epochs_run: usize,
    pub val_history: Vec<f64>,
    pub final_lr: f64,
}

struct CachedRecord {
    embedding: Vec<f64>,
    q: Vec<f64>,
    x: Vec<f64>,
    target: Option<MelMatrix>,
}

/// Trains the analysis network on wet audio alone. The returned network is
/// the best-validation checkpoint, never the final epoch.
pub fn train_blind(
    data: &Dataset,
    chain_a: &EffectChain,
    objective: Objective,
    mel: &MelConfig,
    cfg: &TrainConfig,
) -> Result<(AnalysisNetwork, TrainOutcome)> {
    cfg.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !chain_a.is_differentiable() {
        return Err(Error::UnregisteredPrimitive(format!(
            "analysis chain {} is not differentiable",
            chain_a.id()
        )));
    }
    let fb = MelFilterbank::new(mel)?;
    let clip_len = data.train[0].x.len();
    let sample_rate = data.train[0].x.sample_rate();
    let fs = sample_rate as f64;
    let mut net = AnalysisNetwork::new(chain_a, mel, clip_len, cfg.encoder_divisor, cfg.seed);
    if chain_a.param_count() != data.train[0].q.len() && objective == Objective::ParamMse {
        return Err(Error::LengthMismatch {
            expected: chain_a.param_count(),
            got: data.train[0].q.len(),
        });
    }

    let cache = |records: &[DatasetRecord], with_target: bool| -> Result<Vec<CachedRecord>> {
        records
            .iter()
            .map(|r| {
                let embedding = net.embed(&fb, &r.y)?;
                let target = if with_target {
                    Some(log_mel(
                        &mel_spectrogram(&rms_normalize(&r.y)?, &fb)?,
                        mel.log_floor,
                    ))
                } else {
                    None
                };
                Ok(CachedRecord {
                    embedding,
                    q: r.q.values().to_vec(),
                    x: r.x.samples().to_vec(),
                    target,
                })
            })
            .collect()
    };
    let want_audio = objective == Objective::AudioMelL1;
    let train_cache = cache(&data.train, want_audio)?;

    let mut opt = Adam::new(net.mlp.param_count(), cfg.learning_rate);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot = (net.mlp.params.clone(), net.mlp.running_mean.clone(), net.mlp.running_var.clone());
    let mut stale = 0usize;
    let mut val_history = Vec::new();
    let epoch_size = if cfg.epoch_size == 0 {
        train_cache.len()
    } else {
        cfg.epoch_size.min(train_cache.len())
    };

    let mut epochs_run = 0usize;
    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..train_cache.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, 0xE70C + epoch as u64));
        order.truncate(epoch_size);

        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let theta = tape.leaf(net.mlp.params.clone());
            let embeddings: Vec<Vec<f64>> =
                batch.iter().map(|&i| train_cache[i].embedding.clone()).collect();
            let (outputs, stats) = net.mlp.forward_batch(&tape, theta, &embeddings);

            let mut total: Option<Var> = None;
            for (k, &i) in batch.iter().enumerate() {
                let rec = &train_cache[i];
                let term = match objective {
                    Objective::ParamMse => {
                        let target = tape.constant(rec.q.clone());
                        (outputs[k] - target).square().mean()
                    }
                    Objective::AudioMelL1 => {
                        let xv = tape.constant(rec.x.clone());
                        let rendered = chain_a.render_diff(&tape, xv, outputs[k], fs)?;
                        loss_mel_l1_diff(
                            &tape,
                            rms_normalize_diff(rendered),
                            rec.target.as_ref().unwrap(),
                            &fb,
                        )
                    }
                };
                total = Some(match total {
                    None => term,
                    Some(acc) => acc + term,
                });
            }
            let loss = total.unwrap().scale(1.0 / batch.len() as f64);
            let value = loss.scalar();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step: epoch });
            }
            let grads = tape.backward(loss)?;
            let g = grads.wrt(theta);
            opt.step(&mut net.mlp.params, &g);
            net.mlp.update_running(&stats);
        }

        // validation in inference mode
        let val = validation_loss(&net, &fb, chain_a, objective, &data.validation, fs)?;
        val_history.push(val);
        log::debug!("epoch {epoch}: validation {val:.5} (lr {})", opt.lr);

        if val < best_val - 1e-12 {
            best_val = val;
            best_epoch = epoch;
            best_snapshot = (
                net.mlp.params.clone(),
                net.mlp.running_mean.clone(),
                net.mlp.running_var.clone(),
            );
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience_stop {
                break;
            }
            if stale % cfg.patience_lr == 0 {
                opt.lr /= 10.0;
                log::debug!("epoch {epoch}: learning rate lowered to {}", opt.lr);
            }
        }
    }

    net.mlp.params = best_snapshot.0;
    net.mlp.running_mean = best_snapshot.1;
    net.mlp.running_var = best_snapshot.2;
    let final_lr = opt.lr;
    Ok((
        net,
        TrainOutcome {
            best_epoch,
            best_val,
            epochs_run,
            val_history,
            final_lr,
        },
    ))
}

fn validation_loss(
    net: &AnalysisNetwork,
    fb: &MelFilterbank,
    chain_a: &EffectChain,
    objective: Objective,
    records: &[DatasetRecord],
    fs: f64,
) -> Result<f64> {
    let _ = fs;
    let specs = chain_a.param_specs();
    let mut total = 0.0;
    for r in records {
        let q_hat = net.predict_with(fb, &r.y)?;
        total += match objective {
            Objective::ParamMse => mse_params(&q_hat, &r.q)?,
            Objective::AudioMelL1 => {
                let p = denormalize(&q_hat, &specs)?;
                let rendered = chain_a.render_analysis(&r.x, p.values())?;
                loss_mel_l1(&rms_normalize(&rendered)?, &rms_normalize(&r.y)?, fb)?
            }
        };
    }
    Ok(total / records.len() as f64)
}

// --- evaluation -------------------------------------------------------------

/// One table row of an evaluation: a configuration or baseline with its
/// metrics averaged over the repeated test draws.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub label: String,
    pub myy: f64,
    pub myy_std: f64,
    pub lyy: f64,
    pub lyy_std: f64,
    pub mqq: Option<f64>,
    pub mqq_std: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub chain_s: String,
    pub chain_a: String,
    pub encoder: String,
    pub repeats: usize,
    pub rows: Vec<MetricRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Accumulator {
    myy: Vec<f64>,
    lyy: Vec<f64>,
    mqq: Vec<f64>,
    has_mqq: bool,
}

impl Accumulator {
    fn new(has_mqq: bool) -> Self {
        Self {
            myy: Vec::new(),
            lyy: Vec::new(),
            mqq: Vec::new(),
            has_mqq,
        }
    }

    fn row(&self, label: &str, runs: usize) -> MetricRow {
        let (myy, myy_std) = mean_std(&self.myy);
        let (lyy, lyy_std) = mean_std(&self.lyy);
        let (mqq, mqq_std) = if self.has_mqq {
            let (m, s) = mean_std(&self.mqq);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        MetricRow {
            label: label.into(),
            myy,
            myy_std,
            lyy,
            lyy_std,
            mqq,
            mqq_std,
            runs,
        }
    }
}

/// Evaluates a trained network over `repeats` re-randomized test draws and
/// reports the estimate alongside the random-parameter and dry-vs-wet
/// baselines. A proxy-backed analysis chain renders through the reference
/// compressor (its hybrid evaluation path).
pub fn evaluate(
    net: &AnalysisNetwork,
    clips: &[AudioBuffer],
    chain_s: &EffectChain,
    chain_a: &EffectChain,
    mel: &MelConfig,
    repeats: usize,
    master_seed: u64,
) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fb = MelFilterbank::new(mel)?;
    let specs_a = chain_a.param_specs();
    let mqq_defined = chain_a.param_count() == chain_s.param_count();
    let sources: Vec<String> = (0..clips.len()).map(|i| format!("test-clip-{i}")).collect();

    let mut estimate = Accumulator::new(mqq_defined);
    let mut random = Accumulator::new(mqq_defined);
    let mut dry_wet = Accumulator::new(false);

    for r in 0..repeats {
        let records = synthesize_dataset(clips, &sources, chain_s, derive_seed(master_seed, 0xEA00 + r as u64))?;
        let mut rep = [Accumulator::new(mqq_defined), Accumulator::new(mqq_defined), Accumulator::new(false)];
        for (i, rec) in records.iter().enumerate() {
            let y_norm = rms_normalize(&rec.y)?;

            let q_hat = net.predict_with(&fb, &rec.y)?;
            let p_hat = denormalize(&q_hat, &specs_a)?;
            let y_hat = rms_normalize(&chain_a.render_analysis(&rec.x, p_hat.values())?)?;
            rep[0].myy.push(mse_audio(&y_hat, &y_norm)?);
            rep[0].lyy.push(loss_mel_l1(&y_hat, &y_norm, &fb)?);
            if mqq_defined {
                rep[0].mqq.push(mse_params(&q_hat, &rec.q)?);
            }

            let mut rng = stream_rng(master_seed, 0xBA5E + (r * clips.len() + i) as u64);
            let q_rand: Vec<f64> = (0..chain_a.param_count()).map(|_| rng.gen()).collect();
            let q_rand = ParamVector::normalized(q_rand)?;
            let p_rand = denormalize(&q_rand, &specs_a)?;
            let y_rand = rms_normalize(&chain_a.render_analysis(&rec.x, p_rand.values())?)?;
            rep[1].myy.push(mse_audio(&y_rand, &y_norm)?);
            rep[1].lyy.push(loss_mel_l1(&y_rand, &y_norm, &fb)?);
            if mqq_defined {
                rep[1].mqq.push(mse_params(&q_rand, &rec.q)?);
            }

            let x_norm = rms_normalize(&rec.x)?;
            rep[2].myy.push(mse_audio(&x_norm, &y_norm)?);
            rep[2].lyy.push(loss_mel_l1(&x_norm, &y_norm, &fb)?);
        }
        for (acc, r) in [&mut estimate, &mut random, &mut dry_wet].into_iter().zip(rep.iter()) {
            acc.myy.push(mean_std(&r.myy).0);
            acc.lyy.push(mean_std(&r.lyy).0);
            if acc.has_mqq {
                acc.mqq.push(mean_std(&r.mqq).0);
            }
        }
    }

    Ok(EvalReport {
        chain_s: chain_s.id().to_string(),
        chain_a: chain_a.id().to_string(),
        encoder: net.encoder_name(),
        repeats,
        rows: vec![
            estimate.row("estimate", repeats),
            random.row("random-q", repeats),
            dry_wet.row("dry-vs-wet", repeats),
        ],
    })
}
