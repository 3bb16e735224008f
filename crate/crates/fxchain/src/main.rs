//! Command-line entry point: dataset synthesis, paired fitting, blind
//! training, evaluation, gradient checking, and proxy training.

use clap::{Parser, Subcommand};
use fxchain::chain::EffectChain;
use fxchain::checkpoint::{proxy_to_weights, Checkpoint, CHECKPOINT_VERSION};
use fxchain::config::ExperimentConfig;
use fxchain::dataset::{
    build_manifest, extract_clips, extract_clips_from_songs, save_wav_f32, split_corpus,
    synthesize_dataset, synthetic_clip, DatasetRecord, ExtractedClips,
};
use fxchain::error::{Error, Result};
use fxchain::estimate::{evaluate, fit_paired, train_blind, AnalysisNetwork, Dataset};
use fxchain::gradcheck::gradcheck_suite;
use fxchain::params::denormalize;
use fxchain::proxy::{proxy_corpus, proxy_mae, proxy_train, sample_cond_q, ProxyModel};
use fxchain::rng::{derive_seed, stream_rng};
use fxchain::signal::mono_downmix;
use fxchain::{dataset, report};
use serde_json::json;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fxchain",
    version,
    about = "Differentiable mastering-effect chain: synthesize, fit, train, evaluate"
)]
struct Cli {
    /// Configuration file (TOML). Built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus directory override.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset through the synthesis chain and write manifests.
    Synth,
    /// Fit chain parameters to one dry/wet WAV pair by gradient descent.
    Fit {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
    },
    /// Train the blind analysis network.
    Train,
    /// Evaluate a trained analysis network on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck,
    /// Train the neural proxy of the reference compressor.
    ProxyTrain,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FXCHAIN_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

/// Exit codes: 0 success, 2 config/validation, 3 I/O, 4 numerical failure.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::CorruptHeader(_) | Error::UnsupportedFormat(_) => 3,
        Error::NonFiniteLoss { .. } => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if let Some(corpus) = cli.corpus {
        config.corpus.path = corpus;
        config.corpus.kind = "directory".into();
    }
    config.validate()?;

    if config.threads > 0 {
        // ignore the error if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
    }
    std::fs::create_dir_all(&config.out_dir)?;

    match cli.command {
        Command::Synth => cmd_synth(&config),
        Command::Fit { x, y } => cmd_fit(&config, &x, &y),
        Command::Train => cmd_train(&config),
        Command::Eval { checkpoint } => cmd_eval(&config, &checkpoint),
        Command::Gradcheck => cmd_gradcheck(&config),
        Command::ProxyTrain => cmd_proxy_train(&config),
    }
}

/// Clip pools per split, in deterministic order.
struct SplitClips {
    train: ExtractedClips,
    validation: ExtractedClips,
    test: ExtractedClips,
}

fn gather_clips(config: &ExperimentConfig) -> Result<SplitClips> {
    let duration = config.corpus.clip_seconds;
    let per_song = config.corpus.clips_per_song;
    let seed = config.seed;
    if config.corpus.kind == "directory" {
        let split = split_corpus(&config.corpus.path, seed, per_song)?;
        let load = |names: &[String], stream: u64| -> Result<ExtractedClips> {
            let paths: Vec<PathBuf> = names.iter().map(PathBuf::from).collect();
            extract_clips(&paths, duration, per_song, derive_seed(seed, stream))
        };
        Ok(SplitClips {
            train: load(&split.train, 1)?,
            validation: load(&split.validation, 2)?,
            test: load(&split.test, 3)?,
        })
    } else {
        // synthetic corpus: songs generated in memory, split by shuffled index
        let n = config.corpus.songs.max(3);
        let songs: Vec<(String, fxchain::signal::AudioBuffer)> = (0..n)
            .map(|i| {
                (
                    format!("synthetic:{i:03}"),
                    synthetic_clip(
                        config.corpus.song_seconds,
                        config.sample_rate,
                        derive_seed(seed, 0x9000 + i as u64),
                    ),
                )
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream_rng(seed, 0x5B17));
        let n_test = ((n as f64) * 0.15).round().max(1.0) as usize;
        let n_val = (((n - n_test) as f64) * 0.15).round().max(1.0) as usize;
        let pick = |idx: &[usize]| -> Vec<(String, fxchain::signal::AudioBuffer)> {
            idx.iter().map(|&i| songs[i].clone()).collect()
        };
        let (train_idx, rest) = order.split_at(n - n_test - n_val);
        let (val_idx, test_idx) = rest.split_at(n_val);
        Ok(SplitClips {
            train: extract_clips_from_songs(&pick(train_idx), duration, per_song, derive_seed(seed, 1)),
            validation: extract_clips_from_songs(&pick(val_idx), duration, per_song, derive_seed(seed, 2)),
            test: extract_clips_from_songs(&pick(test_idx), duration, per_song, derive_seed(seed, 3)),
        })
    }
}

fn synthesize_split(
    clips: &ExtractedClips,
    chain: &EffectChain,
    seed: u64,
) -> Result<Vec<DatasetRecord>> {
    synthesize_dataset(&clips.clips, &clips.sources, chain, seed)
}

fn cmd_synth(config: &ExperimentConfig) -> Result<()> {
    let chain = config.synthesis_chain()?;
    let splits = gather_clips(config)?;
    let mut totals = Vec::new();
    for (name, clips, stream) in [
        ("train", &splits.train, 0x51u64),
        ("validation", &splits.validation, 0x52),
        ("test", &splits.test, 0x53),
    ] {
        let records = synthesize_split(clips, &chain, derive_seed(config.seed, stream))?;
        let manifest = build_manifest(
            &records,
            &chain,
            config.sample_rate,
            config.corpus.clip_seconds,
            derive_seed(config.seed, stream),
        );
        let path = config.out_dir.join(format!("manifest_{name}.json"));
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text)?;

        if config.corpus.write_audio {
            let audio_dir = config.out_dir.join("audio").join(name);
            std::fs::create_dir_all(&audio_dir)?;
            for (i, r) in records.iter().enumerate() {
                save_wav_f32(&audio_dir.join(format!("x_{i:04}.wav")), &[r.x.clone()])?;
                save_wav_f32(&audio_dir.join(format!("y_{i:04}.wav")), &[r.y.clone()])?;
            }
        }

        let q_mean: f64 = records
            .iter()
            .flat_map(|r| r.q.values().iter().copied())
            .sum::<f64>()
            / (records.len().max(1) * chain.param_count()) as f64;
        println!(
            "{name}: {} records ({} skipped songs), chain {}, mean q {:.4} -> {}",
            records.len(),
            clips.skipped,
            chain.id(),
            q_mean,
            path.display()
        );
        totals.push(records.len());
    }
    println!(
        "dataset complete: {} train / {} validation / {} test records",
        totals[0], totals[1], totals[2]
    );
    Ok(())
}

fn load_mono(path: &PathBuf) -> Result<fxchain::signal::AudioBuffer> {
    let channels = dataset::load_wav(path)?;
    mono_downmix(&channels)
}

fn cmd_fit(config: &ExperimentConfig, x_path: &PathBuf, y_path: &PathBuf) -> Result<()> {
    let chain = config.analysis_chain()?;
    let x = load_mono(x_path)?;
    let y = load_mono(y_path)?;
    let mel = fxchain::loss::MelConfig {
        sample_rate: x.sample_rate(),
        ..config.mel_config()
    };
    let result = fit_paired(&x, &y, &chain, &mel, &config.fit_config())?;
    let specs = chain.param_specs();
    let q_hat = fxchain::params::ParamVector::normalized(result.best_q.clone())?;
    let p_hat = denormalize(&q_hat, specs)?;
    let payload = json!({
        "chain": chain.id(),
        "q_hat": result.best_q,
        "p_hat": p_hat.values(),
        "param_names": specs.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
        "final_loss": result.best_loss,
        "steps_run": result.steps_run,
        "aborted_at": result.aborted_at,
        "loss_trajectory": result.loss_trajectory,
    });
    let out = config.out_dir.join("fit_report.json");
    report::write_json(&out, config, &payload)?;
    println!(
        "fit: loss {:.5} after {} steps -> {}",
        result.best_loss,
        result.steps_run,
        out.display()
    );
    if let Some(step) = result.aborted_at {
        return Err(Error::NonFiniteLoss { step });
    }
    Ok(())
}

fn cmd_train(config: &ExperimentConfig) -> Result<()> {
    let chain_s = config.synthesis_chain()?;
    let chain_a = config.analysis_chain()?;
    let objective = config.objective();
    if objective == fxchain::estimate::Objective::ParamMse
        && chain_s.param_count() != chain_a.param_count()
    {
        return Err(Error::Config(format!(
            "params objective needs matching parameter counts: synthesis {} vs analysis {}",
            chain_s.param_count(),
            chain_a.param_count()
        )));
    }
    let splits = gather_clips(config)?;
    let data = Dataset {
        train: synthesize_split(&splits.train, &chain_s, derive_seed(config.seed, 0x51))?,
        validation: synthesize_split(&splits.validation, &chain_s, derive_seed(config.seed, 0x52))?,
    };
    let mel = config.mel_config();
    let (net, outcome) = train_blind(&data, &chain_a, objective, &mel, &config.train_config())?;
    let ck_path = config.out_dir.join("checkpoint.json");
    net.save(&ck_path)?;
    let payload = json!({
        "chain_synthesis": chain_s.id(),
        "chain_analysis": chain_a.id(),
        "objective": objective,
        "outcome": outcome,
        "train_records": data.train.len(),
        "validation_records": data.validation.len(),
        "checkpoint": ck_path,
    });
    report::write_json(&config.out_dir.join("train_report.json"), config, &payload)?;
    println!(
        "train: best validation {:.5} at epoch {} ({} epochs run) -> {}",
        outcome.best_val,
        outcome.best_epoch,
        outcome.epochs_run,
        ck_path.display()
    );
    Ok(())
}

fn cmd_eval(config: &ExperimentConfig, checkpoint: &PathBuf) -> Result<()> {
    let net = AnalysisNetwork::load(checkpoint)?;
    let chain_s = config.synthesis_chain()?;
    let chain_a = config.analysis_chain()?;
    if chain_a.id() != net.chain_id {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint was trained for {} but the config names {}",
            net.chain_id,
            chain_a.id()
        )));
    }
    let splits = gather_clips(config)?;
    let mel = config.mel_config();
    let eval_report = evaluate(
        &net,
        &splits.test.clips,
        &chain_s,
        &chain_a,
        &mel,
        config.eval.repeats_test,
        derive_seed(config.seed, 0xE7A1),
    )?;
    report::write_json(&config.out_dir.join("eval_report.json"), config, &eval_report)?;
    report::write_eval_csv(&config.out_dir.join("eval_report.csv"), &eval_report)?;
    print!("{}", report::eval_csv(&eval_report));
    println!("eval: reports in {}", config.out_dir.display());
    Ok(())
}

fn cmd_gradcheck(config: &ExperimentConfig) -> Result<()> {
    let rows = gradcheck_suite(
        config.sample_rate,
        config.gradcheck.duration_seconds,
        config.gradcheck.draws,
        config.gradcheck.eps,
        config.gradcheck.tolerance,
        config.seed,
    )?;
    let mut failed = false;
    println!(
        "{:<18} {:>6} {:>12} {:>9}  result",
        "subject", "draws", "max rel err", "excluded"
    );
    for row in &rows {
        println!(
            "{:<18} {:>6} {:>12.3e} {:>9}  {}",
            row.subject,
            row.draws,
            row.max_rel_err,
            row.excluded,
            if row.passed { "PASS" } else { "FAIL" }
        );
        failed |= !row.passed;
    }
    report::write_json(&config.out_dir.join("gradcheck_report.json"), config, &rows)?;
    if failed {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    Ok(())
}

fn cmd_proxy_train(config: &ExperimentConfig) -> Result<()> {
    let proxy_cfg = config.proxy_config();
    let train_cfg = config.proxy_train_config();
    let fs = config.proxy.sample_rate;
    let clip_len = (config.proxy.clip_seconds * fs as f64) as usize;
    let corpus = proxy_corpus(config.proxy.corpus_clips, clip_len, fs, config.seed);
    let heldout = proxy_corpus(8, clip_len, fs, derive_seed(config.seed, 0x801D));

    let untrained = ProxyModel::new(&proxy_cfg, train_cfg.seed);
    let mut rng = stream_rng(config.seed, 0xD0A5);
    let draws: Vec<Vec<f64>> = (0..heldout.len())
        .map(|_| sample_cond_q(&train_cfg, &mut rng))
        .collect();
    let baseline_mae = proxy_mae(&untrained, &heldout, &draws)?;

    let model = proxy_train(&proxy_cfg, &corpus, &train_cfg)?;
    let trained_mae = proxy_mae(&model, &heldout, &draws)?;

    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        kind: "proxy".into(),
        chain_id: "comp-proxy".into(),
        mel: None,
        param_specs: fxchain::dynamics::compressor_specs(),
        clip_len: None,
        mlp: None,
        proxy: Some(proxy_to_weights(&model)),
    };
    let ck_path = config.out_dir.join("proxy_checkpoint.json");
    ck.save(&ck_path)?;
    let payload = json!({
        "receptive_field_samples": proxy_cfg.receptive_field(),
        "sample_rate": fs,
        "heldout_mae": trained_mae,
        "untrained_baseline_mae": baseline_mae,
        "improvement": baseline_mae / trained_mae.max(1e-12),
        "checkpoint": ck_path,
    });
    report::write_json(&config.out_dir.join("proxy_report.json"), config, &payload)?;
    println!(
        "proxy: held-out MAE {trained_mae:.5} (untrained baseline {baseline_mae:.5}) -> {}",
        ck_path.display()
    );
    Ok(())
}
