//! Experiment configuration: a single TOML file with every knob, validated
//! before any run and serialized verbatim into every report.

use crate::chain::{Effect, EffectChain};
use crate::checkpoint::{proxy_from_weights, Checkpoint};
use crate::error::{Error, Result};
use crate::estimate::{FitConfig, Objective, TrainConfig};
use crate::loss::MelConfig;
use crate::proxy::{ProxyConfig, ProxyTrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sample_rate: u32,
    /// Worker threads for parallel stages; 0 uses every core.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    pub chain: ChainSection,
    pub mel: MelSection,
    pub train: TrainSection,
    pub fit: FitSection,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
    pub proxy: ProxySection,
    /// Parameter-range overrides by parameter name.
    pub ranges: BTreeMap<String, RangeOverride>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: 44_100,
            threads: 0,
            out_dir: PathBuf::from("out"),
            corpus: CorpusSection::default(),
            chain: ChainSection::default(),
            mel: MelSection::default(),
            train: TrainSection::default(),
            fit: FitSection::default(),
            eval: EvalSection::default(),
            gradcheck: GradcheckSection::default(),
            proxy: ProxySection::default(),
            ranges: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// "directory" reads WAV songs from `path`; "synthetic" generates songs.
    pub kind: String,
    pub path: PathBuf,
    /// Synthetic corpus: number of songs and their duration.
    pub songs: usize,
    pub song_seconds: f64,
    pub clip_seconds: f64,
    pub clips_per_song: usize,
    /// Also write rendered x/y pairs as float32 WAVs next to the manifest.
    pub write_audio: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            kind: "synthetic".into(),
            path: PathBuf::from("corpus"),
            songs: 12,
            song_seconds: 8.0,
            clip_seconds: 2.0,
            clips_per_song: 5,
            write_audio: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub synthesis: Vec<String>,
    pub analysis: Vec<String>,
    /// Proxy checkpoint, required when the analysis chain names a proxy
    /// compressor.
    pub proxy_checkpoint: Option<PathBuf>,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            synthesis: vec![
                "eq-parametric".into(),
                "comp-dsp".into(),
                "clip-parametric".into(),
            ],
            analysis: vec![
                "eq-parametric".into(),
                "comp-simplified".into(),
                "clip-parametric".into(),
            ],
            proxy_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelSection {
    pub fft_size: usize,
    pub hop: usize,
    pub bands: usize,
    pub log_floor: f64,
}

impl Default for MelSection {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
            bands: 128,
            log_floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// "audio" trains on the reconstruction loss, "params" on the
    /// normalized-parameter MSE.
    pub objective: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub epoch_size: usize,
    pub patience_lr: usize,
    pub patience_stop: usize,
    pub encoder_divisor: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            objective: "audio".into(),
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 400,
            epoch_size: 0,
            patience_lr: 30,
            patience_stop: 150,
            encoder_divisor: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub plateau_patience: usize,
    pub init_probes: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 0.05,
            plateau_patience: 100,
            init_probes: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub repeats_validation: usize,
    pub repeats_test: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            repeats_validation: 5,
            repeats_test: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub draws: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub duration_seconds: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            draws: 20,
            eps: 1e-6,
            tolerance: 1e-3,
            duration_seconds: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxySection {
    pub channels: usize,
    pub layers: usize,
    pub kernel: usize,
    pub dilation_growth: usize,
    pub cond_width: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub corpus_clips: usize,
}

impl Default for ProxySection {
    fn default() -> Self {
        Self {
            channels: 8,
            layers: 6,
            kernel: 5,
            dilation_growth: 4,
            cond_width: 16,
            steps: 260,
            batch_size: 8,
            learning_rate: 5e-3,
            sample_rate: 16_000,
            clip_seconds: 0.75,
            corpus_clips: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeOverride {
    pub min: f64,
    pub max: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.corpus.kind != "directory" && self.corpus.kind != "synthetic" {
            return Err(Error::Config(format!(
                "corpus kind {} (expected directory or synthetic)",
                self.corpus.kind
            )));
        }
        if self.corpus.clip_seconds <= 0.0 || self.corpus.clips_per_song == 0 {
            return Err(Error::Config("clip settings must be positive".into()));
        }
        if self.train.objective != "audio" && self.train.objective != "params" {
            return Err(Error::Config(format!(
                "objective {} (expected audio or params)",
                self.train.objective
            )));
        }
        self.train_config().validate()?;
        self.mel_config().validate()?;
        if !(1e-6..=1e-2).contains(&self.gradcheck.eps) {
            return Err(Error::Config("gradcheck eps must lie in [1e-6, 1e-2]".into()));
        }
        let needs_proxy = self
            .chain
            .analysis
            .iter()
            .any(|n| n.starts_with("comp-proxy"));
        if needs_proxy && self.chain.proxy_checkpoint.is_none() {
            return Err(Error::Config(
                "analysis chain uses a proxy compressor but proxy_checkpoint is unset".into(),
            ));
        }
        Ok(())
    }

    pub fn mel_config(&self) -> MelConfig {
        MelConfig {
            fft_size: self.mel.fft_size,
            hop: self.mel.hop,
            mel_bands: self.mel.bands,
            sample_rate: self.sample_rate,
            log_floor: self.mel.log_floor,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            epoch_size: self.train.epoch_size,
            patience_lr: self.train.patience_lr,
            patience_stop: self.train.patience_stop,
            seed: self.seed,
            encoder_divisor: self.train.encoder_divisor,
        }
    }

    pub fn objective(&self) -> Objective {
        if self.train.objective == "params" {
            Objective::ParamMse
        } else {
            Objective::AudioMelL1
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            steps: self.fit.steps,
            learning_rate: self.fit.learning_rate,
            plateau_patience: self.fit.plateau_patience,
            init_q: None,
            init_probes: self.fit.init_probes,
            probe_seed: self.seed,
        }
    }

    pub fn proxy_config(&self) -> ProxyConfig {
        ProxyConfig {
            channels: self.proxy.channels,
            layers: self.proxy.layers,
            kernel: self.proxy.kernel,
            dilation_growth: self.proxy.dilation_growth,
            cond_width: self.proxy.cond_width,
        }
    }

    pub fn proxy_train_config(&self) -> ProxyTrainConfig {
        ProxyTrainConfig {
            steps: self.proxy.steps,
            batch_size: self.proxy.batch_size,
            learning_rate: self.proxy.learning_rate,
            seed: self.seed,
            ..ProxyTrainConfig::default()
        }
    }

    fn effect_from_name(&self, name: &str) -> Result<Effect> {
        Ok(match name {
            "eq-parametric" => Effect::parametric_eq_for_rate(self.sample_rate as f64),
            "eq-graphic" => Effect::graphic_eq(),
            "comp-dsp" => Effect::DspCompressor,
            "comp-simplified" => Effect::SimplifiedCompressor,
            "comp-proxy" | "comp-proxy-hybrid" => {
                let path = self.chain.proxy_checkpoint.as_ref().ok_or_else(|| {
                    Error::Config("proxy compressor requires proxy_checkpoint".into())
                })?;
                let ck = Checkpoint::load(path)?;
                let weights = ck
                    .proxy
                    .ok_or_else(|| Error::CheckpointMismatch("not a proxy checkpoint".into()))?;
                Effect::ProxyCompressor {
                    model: Arc::new(proxy_from_weights(&weights)?),
                    hybrid: name == "comp-proxy-hybrid",
                }
            }
            "clip-parametric" => Effect::ParametricClipper,
            "clip-taylor" => Effect::TaylorClipper,
            "clip-chebyshev" => Effect::ChebyshevClipper,
            _ => {
                return Err(Error::Config(format!(
                    "unknown effect {name}; expected one of eq-parametric, eq-graphic, \
                     comp-dsp, comp-simplified, comp-proxy, comp-proxy-hybrid, \
                     clip-parametric, clip-taylor, clip-chebyshev"
                )))
            }
        })
    }

    fn build_chain(&self, names: &[String]) -> Result<EffectChain> {
        if names.is_empty() {
            return Err(Error::Config("chain has no effects".into()));
        }
        let effects = names
            .iter()
            .map(|n| self.effect_from_name(n))
            .collect::<Result<Vec<_>>>()?;
        let overrides: BTreeMap<String, (f64, f64)> = self
            .ranges
            .iter()
            .map(|(k, v)| (k.clone(), (v.min, v.max)))
            .collect();
        EffectChain::new(effects).with_range_overrides(&overrides_for(&overrides, names))
    }

    pub fn synthesis_chain(&self) -> Result<EffectChain> {
        self.build_chain(&self.chain.synthesis)
    }

    pub fn analysis_chain(&self) -> Result<EffectChain> {
        self.build_chain(&self.chain.analysis)
    }
}

/// Keeps only the overrides whose parameters exist in this chain, so one
/// [ranges] table can serve synthesis and analysis chains with different
/// effects.
fn overrides_for(
    overrides: &BTreeMap<String, (f64, f64)>,
    names: &[String],
) -> BTreeMap<String, (f64, f64)> {
    let prefixes: Vec<&str> = names
        .iter()
        .map(|n| match n.as_str() {
            "eq-parametric" => "eq.",
            "eq-graphic" => "geq.",
            "comp-dsp" | "comp-proxy" | "comp-proxy-hybrid" => "comp.",
            "comp-simplified" => "scomp.",
            "clip-parametric" => "clip.",
            "clip-taylor" => "tclip.",
            "clip-chebyshev" => "cclip.",
            _ => "",
        })
        .collect();
    overrides
        .iter()
        .filter(|(k, _)| prefixes.iter().any(|p| !p.is_empty() && k.starts_with(p)))
        .map(|(k, v)| (k.clone(), *v))
        .collect()
}
