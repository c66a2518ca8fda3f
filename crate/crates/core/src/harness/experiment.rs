//! Dataset preparation (with an on-disk feature cache), training runs and
//! the artifacts they leave behind.
//!
//! A run directory `<output>/<variant>/` holds `checkpoint.amck`,
//! `history.csv`, `summary.json`, `timing.json` and one attention trace per
//! test utterance under `attention/`. `INCOMPLETE` is present while a run is
//! in progress or after it failed.

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
use super::config::{ExperimentConfig, Variant};
use super::HarnessError;
use crate::acoustic::{forward_utterance, ModelInput};
use crate::audio::{load_scene, read_labels, save_scene, write_labels};
use crate::cache::{decode_features, encode_features, read_record, write_atomic, write_record};
use crate::features::{BandPooling, FeatureTensor, Featurizer, PhaseDiffTensor, NUM_BINS};
use crate::learn::{clean_channel_mass_sum, evaluate, history_csv, train_with, Dataset, EpochRecord, Evaluation, LabeledUtterance};
use crate::scene::{delay_and_sum, generate_scene};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Features for every utterance of one scene template.
#[derive(Debug, Clone)]
pub struct UtteranceData {
    pub features: FeatureTensor,
    /// Already pooled to the configured band count.
    pub phase: PhaseDiffTensor,
    pub beamformed: FeatureTensor,
    pub labels: Vec<usize>,
    pub clean_channel: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub utterances: Vec<UtteranceData>,
    /// SHA-256 over the cache files, in utterance order.
    pub digest: String,
}

impl PreparedData {
    /// Model inputs for `variant` over the utterance range.
    pub fn split(&self, variant: Variant, range: std::ops::Range<usize>) -> Vec<LabeledUtterance> {
        self.utterances[range]
            .iter()
            .map(|u| {
                let features = match variant {
                    Variant::Concat | Variant::Alstm | Variant::AlstmPhase => u.features.clone(),
                    Variant::SingleChannel | Variant::AlstmTime => u.features.select_channel(0),
                    Variant::Beamformed => u.beamformed.clone(),
                };
                let clean_channel = if variant.multichannel() {
                    u.clean_channel.clone()
                } else {
                    vec![0; u.labels.len()]
                };
                LabeledUtterance {
                    input: ModelInput {
                        features,
                        phase: (variant == Variant::AlstmPhase).then(|| u.phase.clone()),
                    },
                    labels: u.labels.clone(),
                    clean_channel,
                }
            })
            .collect()
    }
}

/// Per-dimension mean and inverse standard deviation; standardized values
/// are multiplied by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    feat: (Vec<f64>, Vec<f64>),
    phase: Option<(Vec<f64>, Vec<f64>)>,
    scale: f64,
}

fn moments<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut n = 0usize;
    for row in rows {
        for ((s, q), &v) in sum.iter_mut().zip(&mut sq).zip(row) {
            *s += v;
            *q += v * v;
        }
        n += 1;
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let inv_std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = q / n - m * m;
            if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 }
        })
        .collect();
    (mean, inv_std)
}

fn apply(values: &mut [f64], (mean, inv_std): &(Vec<f64>, Vec<f64>), scale: f64) {
    for row in values.chunks_exact_mut(mean.len()) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(inv_std) {
            *v = (*v - m) * s * scale;
        }
    }
}

impl Standardizer {
    /// Statistics pooled over frames and channels (pairs for phase).
    pub fn fit(utts: &[LabeledUtterance], scale: f64) -> Self {
        let first = &utts[0].input;
        let feat = moments(
            first.features.dim(),
            utts.iter()
                .flat_map(|u| u.input.features.values().chunks_exact(u.input.features.dim())),
        );
        let phase = first.phase.as_ref().map(|p| {
            moments(
                p.num_bins(),
                utts.iter().flat_map(|u| {
                    let p = u.input.phase.as_ref().expect("phase on every utterance");
                    p.values().chunks_exact(p.num_bins())
                }),
            )
        });
        Self { feat, phase, scale }
    }

    pub fn apply(&self, utts: &mut [LabeledUtterance]) {
        for u in utts {
            let f = &u.input.features;
            let mut values = f.values().to_vec();
            apply(&mut values, &self.feat, self.scale);
            u.input.features = FeatureTensor::new(f.num_frames(), f.num_channels(), f.dim(), values);
            if let (Some(p), Some(stats)) = (&u.input.phase, &self.phase) {
                let mut values = p.values().to_vec();
                apply(&mut values, stats, self.scale);
                u.input.phase = Some(PhaseDiffTensor::new(p.num_frames(), p.num_pairs(), p.num_bins(), values));
            }
        }
    }
}

/// Train, dev and test inputs for the configured variant.
pub fn model_splits(
    config: &ExperimentConfig,
    data: &PreparedData,
) -> (Dataset, Vec<LabeledUtterance>) {
    let variant = config.model.variant;
    let (train_range, dev_range, test_range) = config.scene.splits();
    let mut dataset = Dataset {
        train: data.split(variant, train_range),
        dev: data.split(variant, dev_range),
    };
    let mut test = data.split(variant, test_range);
    if config.model.normalize {
        let s = Standardizer::fit(&dataset.train, config.model.input_scale);
        s.apply(&mut dataset.train);
        s.apply(&mut dataset.dev);
        s.apply(&mut test);
    }
    (dataset, test)
}

fn cache_key(config: &ExperimentConfig) -> String {
    let text = format!("{}model.bands={}\n", config.scene_text(), config.model.bands);
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Generates and featurizes every utterance, reusing cache files when present.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData, HarnessError> {
    let dir = config.cache_dir().join(format!("scenes-{}", cache_key(config)));
    std::fs::create_dir_all(&dir).map_err(HarnessError::io(format!("creating {}", dir.display())))?;
    let featurizer = Featurizer::new(config.scene.sample_rate)?;
    let pooling = BandPooling::mel(NUM_BINS, config.model.bands, config.scene.sample_rate)?;
    let mut hasher = Sha256::new();
    let mut utterances = Vec::with_capacity(config.scene.utterances);
    for i in 0..config.scene.utterances {
        let stem = format!("utt_{i:04}");
        let feat_path = dir.join(format!("{stem}.amf"));
        let bf_path = dir.join(format!("{stem}.bf.amf"));
        let label_path = dir.join(format!("{stem}.csv"));
        if !(feat_path.exists() && bf_path.exists() && label_path.exists()) {
            let wave = generate_scene(&config.scene.scene(i))?;
            let (features, phase) = featurizer.featurize(&wave)?;
            let phase = phase.pool(&pooling)?;
            let bf = featurizer.features_only(&delay_and_sum(&wave, &config.scene.delays)?)?;
            let mut bf_bytes = Vec::new();
            write_record(&mut bf_bytes, bf.dims(), bf.values()).expect("vec write");
            write_atomic(&feat_path, &encode_features(&features, &phase))
                .map_err(HarnessError::io(format!("writing {}", feat_path.display())))?;
            write_atomic(&bf_path, &bf_bytes)
                .map_err(HarnessError::io(format!("writing {}", bf_path.display())))?;
            let tmp = label_path.with_extension("csv.tmp");
            write_labels(&tmp, &wave.frame_labels, &wave.clean_channel_trace)?;
            std::fs::rename(&tmp, &label_path)
                .map_err(HarnessError::io(format!("writing {}", label_path.display())))?;
        }
        let read = |p: &Path| std::fs::read(p).map_err(HarnessError::io(format!("reading {}", p.display())));
        let cache_err = |p: &Path| {
            let path = p.display().to_string();
            move |source| HarnessError::Cache { path, source }
        };
        let feat_bytes = read(&feat_path)?;
        let bf_bytes = read(&bf_path)?;
        let label_bytes = read(&label_path)?;
        hasher.update(&feat_bytes);
        hasher.update(&bf_bytes);
        hasher.update(&label_bytes);
        let (features, phase) = decode_features(&feat_bytes).map_err(cache_err(&feat_path))?;
        let (bf_dims, bf_values) = read_record(&mut bf_bytes.as_slice()).map_err(cache_err(&bf_path))?;
        let beamformed = FeatureTensor::new(bf_dims[0], bf_dims[1], bf_dims[2], bf_values);
        let (labels, clean_channel) = read_labels(&label_path)?;
        let t = features.num_frames();
        let n = config.scene.num_channels;
        if features.num_channels() != n
            || phase.dims() != [t, n * (n - 1) / 2, config.model.bands]
            || beamformed.dims() != [t, 1, features.dim()]
            || labels.len() != t
            || clean_channel.len() != t
        {
            return Err(HarnessError::Cache {
                path: feat_path.display().to_string(),
                source: crate::cache::CacheError::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    "cached tensors disagree with the config",
                )),
            });
        }
        utterances.push(UtteranceData {
            features,
            phase,
            beamformed,
            labels,
            clean_channel,
        });
    }
    Ok(PreparedData {
        utterances,
        digest: hex::encode(hasher.finalize()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub scene_seed: u64,
    pub train_seed: u64,
    pub feature_digest: String,
    pub model_channels: usize,
    pub num_parameters: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub dev_frame_accuracy: f64,
    pub test_frame_accuracy: f64,
    pub test_loss: f64,
    pub test_frames: usize,
    /// Mean attention mass on the scheduled reliable channel over test
    /// frames; only for learned attention over several channels.
    pub clean_channel_mass: Option<f64>,
    pub uniform_channel_share: f64,
}

/// Wall-clock measurements, kept apart from the reproducible artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub prepare_seconds: f64,
    pub train_seconds: f64,
    pub total_seconds: f64,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.amck";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";
pub const INCOMPLETE_FILE: &str = "INCOMPLETE";
pub const ATTENTION_DIR: &str = "attention";

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    run_experiment_with(config, |_| {})
}

/// Trains the configured variant and writes its run directory.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunSummary, HarnessError> {
    let dir = config.run_dir();
    std::fs::create_dir_all(&dir).map_err(HarnessError::io(format!("creating {}", dir.display())))?;
    let marker = dir.join(INCOMPLETE_FILE);
    write_atomic(&marker, b"running\n").map_err(HarnessError::io(format!("writing {}", marker.display())))?;
    for stale in [SUMMARY_FILE, TIMING_FILE] {
        let p = dir.join(stale);
        if p.exists() {
            std::fs::remove_file(&p).map_err(HarnessError::io(format!("removing {}", p.display())))?;
        }
    }
    match run_inner(config, &dir, on_epoch) {
        Ok(summary) => {
            std::fs::remove_file(&marker).map_err(HarnessError::io(format!("removing {}", marker.display())))?;
            Ok(summary)
        }
        Err(e) => {
            // best effort: the original error matters more than the marker
            let _ = write_atomic(&marker, format!("failed: {e}\n").as_bytes());
            Err(e)
        }
    }
}

fn run_inner(
    config: &ExperimentConfig,
    dir: &Path,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunSummary, HarnessError> {
    let started = Instant::now();
    let data = prepare_data(config)?;
    let prepare_seconds = started.elapsed().as_secs_f64();
    let variant = config.model.variant;
    let (dataset, test) = model_splits(config, &data);
    let test_range = config.scene.splits().2;
    let shape = config.model_shape();

    let train_started = Instant::now();
    let outcome = train_with(&dataset, shape, &config.train, on_epoch)?;
    let train_seconds = train_started.elapsed().as_secs_f64();

    let dev = evaluate(&outcome.params, &dataset.dev)?;
    let eval = evaluate(&outcome.params, &test)?;
    let learned_multichannel = outcome.params.attention.is_some() && shape.num_channels > 1;

    if learned_multichannel {
        let att_dir = dir.join(ATTENTION_DIR);
        std::fs::create_dir_all(&att_dir).map_err(HarnessError::io(format!("creating {}", att_dir.display())))?;
        for (u, i) in test.iter().zip(test_range) {
            let trace = forward_utterance(&u.input, &outcome.params)?;
            let path = att_dir.join(format!("test_{i:04}.amf"));
            write_atomic(&path, &encode_attention(&trace.attention, &u.clean_channel))
                .map_err(HarnessError::io(format!("writing {}", path.display())))?;
        }
    }

    let history = history_csv(&outcome.history);
    write_file(&dir.join(HISTORY_FILE), history.as_bytes())?;
    let checkpoint = Checkpoint::new(
        &outcome.params,
        config.to_text(),
        outcome.best_epoch as u32,
        RngState::capture(&outcome.rng),
    );
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &checkpoint)?;

    let summary = RunSummary {
        variant: variant.name().to_string(),
        scene_seed: config.scene.seed,
        train_seed: config.train.seed,
        feature_digest: data.digest,
        model_channels: shape.num_channels,
        num_parameters: outcome.params.num_parameters(),
        epochs: config.train.epochs,
        best_epoch: outcome.best_epoch,
        dev_frame_accuracy: dev.frame_accuracy,
        test_frame_accuracy: eval.frame_accuracy,
        test_loss: eval.loss,
        test_frames: eval.frames,
        clean_channel_mass: eval.clean_channel_mass.filter(|_| learned_multichannel),
        uniform_channel_share: 1.0 / config.scene.num_channels as f64,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    let timing = Timing {
        prepare_seconds,
        train_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(TIMING_FILE), &timing)?;
    Ok(summary)
}

/// Attention trace file: a `T × N × l` record of weights followed by a
/// `T × 1 × 1` record of reliable-channel indices.
pub fn encode_attention(attention: &[crate::attend::AttentionMatrix], clean: &[usize]) -> Vec<u8> {
    let t = attention.len();
    let (n, l) = attention.first().map_or((0, 0), |a| (a.rows(), a.cols()));
    let values: Vec<f64> = attention.iter().flat_map(|a| a.values().iter().copied()).collect();
    let mut out = Vec::new();
    write_record(&mut out, [t, n, l], &values).expect("vec write");
    let idx: Vec<f64> = clean.iter().map(|&c| c as f64).collect();
    write_record(&mut out, [t, 1, 1], &idx).expect("vec write");
    out
}

/// A decoded attention trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `[T, N, l]`.
    pub dims: [usize; 3],
    pub weights: Vec<f64>,
    pub clean_channel: Vec<usize>,
}

/// Inverse of [`encode_attention`].
pub fn decode_attention(bytes: &[u8]) -> Result<AttentionTrace, crate::cache::CacheError> {
    let mut r = bytes;
    let (dims, weights) = read_record(&mut r)?;
    let (_, idx) = read_record(&mut r)?;
    Ok(AttentionTrace {
        dims,
        weights,
        clean_channel: idx.into_iter().map(|v| v as usize).collect(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    write_atomic(path, bytes).map_err(HarnessError::io(format!("writing {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Summary {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Re-evaluates a finished run's checkpoint on the test split.
pub fn evaluate_run(config: &ExperimentConfig) -> Result<Evaluation, HarnessError> {
    let checkpoint = load_checkpoint(&config.run_dir().join(CHECKPOINT_FILE))?;
    let params = checkpoint.to_params(config.model_shape())?;
    let data = prepare_data(config)?;
    let (_, test) = model_splits(config, &data);
    Ok(evaluate(&params, &test)?)
}

/// Writes every utterance's waveform and label sidecar into `out`.
pub fn generate_scenes(config: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out).map_err(HarnessError::io(format!("creating {}", out.display())))?;
    (0..config.scene.utterances)
        .map(|i| {
            let stem = format!("utt_{i:04}");
            let wave = generate_scene(&config.scene.scene(i))?;
            save_scene(out, &stem, &wave)?;
            Ok(out.join(format!("{stem}.wav")))
        })
        .collect()
}

/// Featurizes every `.wav` in `input` into `<out>/<stem>.amf`, pooling the
/// phase to `bands` bands (256 keeps every bin).
pub fn featurize_dir(input: &Path, out: &Path, bands: usize) -> Result<Vec<PathBuf>, HarnessError> {
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(HarnessError::io(format!("listing {}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .collect();
    wavs.sort();
    std::fs::create_dir_all(out).map_err(HarnessError::io(format!("creating {}", out.display())))?;
    let mut written = Vec::with_capacity(wavs.len());
    for wav in wavs {
        let wave = load_scene(&wav)?;
        let featurizer = Featurizer::new(wave.sample_rate)?;
        let (features, phase) = featurizer.featurize(&wave)?;
        let phase = if bands == NUM_BINS {
            phase
        } else {
            phase.pool(&BandPooling::mel(NUM_BINS, bands, wave.sample_rate)?)?
        };
        let stem = wav.file_stem().and_then(|s| s.to_str()).unwrap_or("utt");
        let path = out.join(format!("{stem}.amf"));
        write_file(&path, &encode_features(&features, &phase))?;
        written.push(path);
    }
    Ok(written)
}

/// Mean clean-channel mass recomputed from the stored trace files.
pub fn attention_mass_from_traces(run_dir: &Path) -> Result<f64, HarnessError> {
    let dir = run_dir.join(ATTENTION_DIR);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(HarnessError::io(format!("listing {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    files.sort();
    let mut mass = 0.0;
    let mut frames = 0usize;
    for f in files {
        let bytes = std::fs::read(&f).map_err(HarnessError::io(format!("reading {}", f.display())))?;
        let trace = decode_attention(&bytes).map_err(|source| HarnessError::Cache {
            path: f.display().to_string(),
            source,
        })?;
        let [t, n, l] = trace.dims;
        let clean = trace.clean_channel;
        let matrices: Vec<_> = trace
            .weights
            .chunks_exact(n * l)
            .map(|c| crate::attend::AttentionMatrix::from_values(n, l, c.to_vec()))
            .collect();
        mass += clean_channel_mass_sum(&matrices, &clean);
        frames += t;
    }
    Ok(mass / frames.max(1) as f64)
}
