//! WAV ingestion, clip extraction, synthetic dataset generation, and
//! manifest persistence.
//!
//! Every record is reproducible from (source, offset, seeds, chain id,
//! range table) alone; manifests never contain audio. Per-record RNG streams
//! derive from (master seed, record index), never from execution order, so
//! parallel synthesis stays deterministic.

use crate::chain::EffectChain;
use crate::error::{Error, Result};
use crate::params::{denormalize, ParamSpec, ParamVector};
use crate::rng::{derive_seed, stream_rng};
use crate::signal::{mono_downmix, peak_normalize, AudioBuffer};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::{Path, PathBuf};

pub const MANIFEST_VERSION: u32 = 1;

/// One synthesized training example.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub x: AudioBuffer,
    pub y: AudioBuffer,
    pub q: ParamVector,
    pub p: ParamVector,
    pub chain_id: String,
    pub seed: u64,
    pub source: String,
}

/// Train/validation/test song lists with the seeds that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub clips_per_song: usize,
    pub master_seed: u64,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for song in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(song) {
                return Err(Error::Config(format!("song {song} appears in two splits")));
            }
        }
        Ok(())
    }
}

// --- WAV ------------------------------------------------------------------

fn read_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::CorruptHeader("unexpected end of file".into()))
}

fn read_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::CorruptHeader("unexpected end of file".into()))
}

/// Reads a RIFF/WAVE file (PCM 16/24-bit or 32-bit float, little-endian).
/// Returns one buffer per channel, scaled to ±1 full scale.
pub fn load_wav(path: &Path) -> Result<Vec<AudioBuffer>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::CorruptHeader(format!("{} is not RIFF/WAVE", path.display())));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<(usize, usize)> = None; // offset, len
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(&bytes, pos + 4)? as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(Error::CorruptHeader(format!(
                "chunk {} overruns the file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::CorruptHeader("fmt chunk too small".into()));
                }
                let mut format = read_u16(&bytes, body)?;
                let channels = read_u16(&bytes, body + 2)?;
                let rate = read_u32(&bytes, body + 4)?;
                let bits = read_u16(&bytes, body + 14)?;
                // WAVE_FORMAT_EXTENSIBLE carries the real format in the GUID
                if format == 0xFFFE && size >= 40 {
                    format = read_u16(&bytes, body + 24)?;
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::CorruptHeader("missing fmt chunk".into()))?;
    let (off, len) = data.ok_or_else(|| Error::CorruptHeader("missing data chunk".into()))?;
    if channels == 0 || rate == 0 {
        return Err(Error::CorruptHeader("zero channels or sample rate".into()));
    }
    let bytes_per = bits as usize / 8;
    let frame = bytes_per * channels as usize;
    if frame == 0 || len % frame != 0 {
        return Err(Error::CorruptHeader("data size not a whole number of frames".into()));
    }
    let n_frames = len / frame;
    if n_frames == 0 {
        return Err(Error::CorruptHeader("empty data chunk".into()));
    }

    let decode: Box<dyn Fn(&[u8]) -> f64> = match (format, bits) {
        (1, 16) => Box::new(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0),
        (1, 24) => Box::new(|b| {
            let v = ((b[2] as i32) << 24 | (b[1] as i32) << 16 | (b[0] as i32) << 8) >> 8;
            v as f64 / 8_388_608.0
        }),
        (3, 32) => Box::new(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {format} at {bits} bits"
            )))
        }
    };

    let mut out = vec![Vec::with_capacity(n_frames); channels as usize];
    for f in 0..n_frames {
        for (c, channel) in out.iter_mut().enumerate() {
            let at = off + f * frame + c * bytes_per;
            channel.push(decode(&bytes[at..at + bytes_per]));
        }
    }
    out.into_iter().map(|ch| AudioBuffer::new(ch, rate)).collect()
}

/// Writes interleaved channels as a 32-bit float WAV.
pub fn save_wav_f32(path: &Path, channels: &[AudioBuffer]) -> Result<()> {
    let first = channels
        .first()
        .ok_or_else(|| Error::MismatchedLength("no channels".into()))?;
    for ch in channels {
        if ch.len() != first.len() || ch.sample_rate() != first.sample_rate() {
            return Err(Error::MismatchedLength("channel shape differs".into()));
        }
    }
    let n_ch = channels.len() as u16;
    let rate = first.sample_rate();
    let data_len = (first.len() * channels.len() * 4) as u32;
    let mut bytes = Vec::with_capacity(44 + data_len as usize);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
    bytes.extend_from_slice(&n_ch.to_le_bytes());
    bytes.extend_from_slice(&rate.to_le_bytes());
    bytes.extend_from_slice(&(rate * n_ch as u32 * 4).to_le_bytes());
    bytes.extend_from_slice(&(n_ch * 4).to_le_bytes());
    bytes.extend_from_slice(&32u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for f in 0..first.len() {
        for ch in channels {
            bytes.extend_from_slice(&(ch.samples()[f] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

// --- clips ----------------------------------------------------------------

/// Lists WAV files directly inside a directory, sorted by name.
pub fn list_songs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut songs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "wav").unwrap_or(false))
        .collect();
    songs.sort();
    Ok(songs)
}

/// Result of clip extraction, with the number of too-short songs skipped.
pub struct ExtractedClips {
    pub clips: Vec<AudioBuffer>,
    pub sources: Vec<String>,
    pub skipped: usize,
}

/// Extracts `per_song` random clips of `duration` seconds from every song,
/// downmixed to mono and peak-normalized. Offsets derive from per-song seeds;
/// songs shorter than the duration are skipped with a warning count.
pub fn extract_clips(
    songs: &[PathBuf],
    duration: f64,
    per_song: usize,
    seed: u64,
) -> Result<ExtractedClips> {
    let loaded: Vec<(String, AudioBuffer)> = songs
        .iter()
        .map(|path| {
            let channels = load_wav(path)?;
            Ok((path.display().to_string(), mono_downmix(&channels)?))
        })
        .collect::<Result<_>>()?;
    Ok(extract_clips_from_songs(&loaded, duration, per_song, seed))
}

/// In-memory version of [`extract_clips`] for already-loaded mono songs.
pub fn extract_clips_from_songs(
    songs: &[(String, AudioBuffer)],
    duration: f64,
    per_song: usize,
    seed: u64,
) -> ExtractedClips {
    let mut clips = Vec::new();
    let mut sources = Vec::new();
    let mut skipped = 0;
    for (song_idx, (name, mono)) in songs.iter().enumerate() {
        let n = (duration * mono.sample_rate() as f64).round() as usize;
        if mono.len() < n {
            log::warn!("skipping {name}: shorter than {duration} s");
            skipped += 1;
            continue;
        }
        let mut rng = stream_rng(seed, song_idx as u64);
        for c in 0..per_song {
            let offset = if mono.len() == n {
                0
            } else {
                rng.gen_range(0..=mono.len() - n)
            };
            let clip = AudioBuffer::new(
                mono.samples()[offset..offset + n].to_vec(),
                mono.sample_rate(),
            )
            .expect("clip slice");
            clips.push(peak_normalize(&clip));
            sources.push(format!("{name}#{c}@{offset}"));
        }
    }
    ExtractedClips {
        clips,
        sources,
        skipped,
    }
}

/// Splits a corpus into train/validation/test song lists.
///
/// A layout with `train/` and `test/` subdirectories keeps its test set and
/// splits the training songs 86:14 into train/validation (the canonical
/// 100-song split ratio). A flat directory is shuffled with the seed and cut
/// 15% test, then 85:15 train/validation.
pub fn split_corpus(dir: &Path, seed: u64, clips_per_song: usize) -> Result<SplitManifest> {
    let name = |p: &PathBuf| p.to_string_lossy().into_owned();
    let (mut train, validation, test);
    let train_dir = dir.join("train");
    let test_dir = dir.join("test");
    if train_dir.is_dir() && test_dir.is_dir() {
        let mut songs: Vec<PathBuf> = list_songs(&train_dir)?;
        shuffle_paths(&mut songs, seed);
        let n_val = ((songs.len() as f64) * 14.0 / 100.0).round() as usize;
        let val_split = songs.split_off(songs.len() - n_val.max(1).min(songs.len() - 1));
        train = songs.iter().map(name).collect::<Vec<_>>();
        validation = val_split.iter().map(name).collect();
        test = list_songs(&test_dir)?.iter().map(name).collect();
        train.sort();
    } else {
        let mut songs = list_songs(dir)?;
        if songs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        shuffle_paths(&mut songs, seed);
        let n_test = ((songs.len() as f64) * 0.15).round().max(1.0) as usize;
        let test_split = songs.split_off(songs.len().saturating_sub(n_test));
        let n_val = ((songs.len() as f64) * 0.15).round().max(1.0) as usize;
        let val_split = songs.split_off(songs.len().saturating_sub(n_val));
        train = songs.iter().map(name).collect();
        validation = val_split.iter().map(name).collect();
        test = test_split.iter().map(name).collect();
    }
    let manifest = SplitManifest {
        train,
        validation,
        test,
        clips_per_song,
        master_seed: seed,
    };
    manifest.validate()?;
    Ok(manifest)
}

fn shuffle_paths(paths: &mut [PathBuf], seed: u64) {
    use rand::seq::SliceRandom;
    let mut rng = stream_rng(seed, 0x5B17);
    paths.shuffle(&mut rng);
}

// --- synthesis ------------------------------------------------------------

/// Renders one record: q ~ U(0,1)^C from the record's own stream, then the
/// chain with 0 dBFS pre-normalization; stored x and y are peak-normalized.
pub fn synthesize_record(
    clip: &AudioBuffer,
    source: &str,
    chain: &EffectChain,
    master_seed: u64,
    index: u64,
) -> Result<DatasetRecord> {
    let specs = chain.param_specs();
    let mut rng = stream_rng(master_seed, index);
    let q_values: Vec<f64> = (0..specs.len()).map(|_| rng.gen()).collect();
    let q = ParamVector::normalized(q_values)?;
    let p = denormalize(&q, &specs)?;
    let x = peak_normalize(clip);
    let y = peak_normalize(&chain.render(&x, p.values())?);
    Ok(DatasetRecord {
        x,
        y,
        q,
        p,
        chain_id: chain.id().to_string(),
        seed: derive_seed(master_seed, index),
        source: source.to_string(),
    })
}

/// Synthesizes one record per clip, in parallel, deterministically.
pub fn synthesize_dataset(
    clips: &[AudioBuffer],
    sources: &[String],
    chain: &EffectChain,
    master_seed: u64,
) -> Result<Vec<DatasetRecord>> {
    clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let source = sources.get(i).map(String::as_str).unwrap_or("");
            synthesize_record(clip, source, chain, master_seed, i as u64)
        })
        .collect()
}

// --- manifest -------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordManifest {
    pub source: String,
    pub seed: u64,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub chain_id: String,
    pub range_table_hash: String,
    pub master_seed: u64,
    pub records: Vec<RecordManifest>,
}

/// Hash of the parameter-range table, pinning a manifest to the ranges that
/// produced it.
pub fn range_table_hash(specs: &[ParamSpec]) -> String {
    let mut hasher = Sha256::new();
    for s in specs {
        hasher.update(format!(
            "{}|{:.12e}|{:.12e}|{:?}|{}\n",
            s.name, s.min, s.max, s.scale, s.unit
        ));
    }
    format!("{:x}", hasher.finalize())
}

pub fn build_manifest(
    records: &[DatasetRecord],
    chain: &EffectChain,
    sample_rate: u32,
    duration_s: f64,
    master_seed: u64,
) -> DatasetManifest {
    DatasetManifest {
        version: MANIFEST_VERSION,
        sample_rate,
        duration_s,
        chain_id: chain.id().to_string(),
        range_table_hash: range_table_hash(&chain.param_specs()),
        master_seed,
        records: records
            .iter()
            .map(|r| RecordManifest {
                source: r.source.clone(),
                seed: r.seed,
                q: r.q.values().to_vec(),
            })
            .collect(),
    }
}

// --- synthetic corpus -----------------------------------------------------

/// Music-like synthetic clip: a few harmonic partials with slow amplitude
/// modulation, percussive noise bursts, and a noise floor.
pub fn synthetic_clip(duration: f64, sample_rate: u32, seed: u64) -> AudioBuffer {
    let fs = sample_rate as f64;
    let n = (duration * fs).round() as usize;
    let mut rng = stream_rng(seed, 0x50C);
    let n_partials = rng.gen_range(3..6);
    let fundamental = rng.gen_range(70.0..320.0);
    let partials: Vec<(f64, f64, f64)> = (0..n_partials)
        .map(|k| {
            let freq = fundamental * (k + 1) as f64 * rng.gen_range(0.99..1.01);
            let amp = rng.gen_range(0.2..1.0) / (k + 1) as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (freq, amp, phase)
        })
        .collect();
    let am_rate = rng.gen_range(0.3..3.0);
    let am_depth = rng.gen_range(0.2..0.8);
    let burst_period = rng.gen_range(0.25..0.75) * fs;
    let burst_len = (0.02 * fs) as usize;
    let burst_amp = rng.gen_range(0.3..0.9);
    let noise_floor = rng.gen_range(0.005..0.03);

    let mut samples = vec![0.0; n];
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let env = 1.0 - am_depth * (0.5 + 0.5 * (std::f64::consts::TAU * am_rate * t).sin());
        let mut v = 0.0;
        for &(freq, amp, phase) in &partials {
            v += amp * (std::f64::consts::TAU * freq * t + phase).sin();
        }
        *s = env * v;
    }
    // percussive bursts
    let mut pos = 0usize;
    while pos < n {
        for j in 0..burst_len.min(n - pos) {
            let decay = (-(j as f64) / (burst_len as f64 * 0.3)).exp();
            samples[pos + j] += burst_amp * decay * rng.gen_range(-1.0..1.0);
        }
        pos += burst_period as usize;
    }
    for s in samples.iter_mut() {
        *s += noise_floor * rng.gen_range(-1.0..1.0);
    }
    peak_normalize(&AudioBuffer::new(samples, sample_rate).expect("synthetic clip"))
}

/// In-memory synthetic corpus used by the test suite: `n` clips with
/// independent derived seeds.
pub fn synthetic_clips(n: usize, duration: f64, sample_rate: u32, seed: u64) -> Vec<AudioBuffer> {
    (0..n)
        .map(|i| synthetic_clip(duration, sample_rate, derive_seed(seed, i as u64)))
        .collect()
}

/// Writes a synthetic corpus directory of float32 WAV songs.
pub fn write_synthetic_corpus(
    dir: &Path,
    n_songs: usize,
    song_seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..n_songs {
        let song = synthetic_clip(song_seconds, sample_rate, derive_seed(seed, 0x9000 + i as u64));
        save_wav_f32(&dir.join(format!("song_{i:03}.wav")), &[song])?;
    }
    Ok(())
}
