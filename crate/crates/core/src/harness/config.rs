//! Flat `key=value` experiment configs with dotted section prefixes, e.g.
//! `scene.num_channels=5`. Blank lines and `#` comments are ignored.

use crate::learn::TrainConfig;
use crate::params::{AttentionMode, ModelShape};
use crate::scene::{constant_schedule, switching_schedule, NoiseSegment, SceneConfig};
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key {key}")]
    Duplicate { line: usize, key: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("key {key}: cannot parse {value:?}")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    SingleChannel,
    Concat,
    Beamformed,
    Alstm,
    AlstmPhase,
    /// Attention over time only, on the first channel.
    AlstmTime,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::SingleChannel,
        Variant::Concat,
        Variant::Beamformed,
        Variant::Alstm,
        Variant::AlstmPhase,
        Variant::AlstmTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SingleChannel => "single_channel",
            Variant::Concat => "concat",
            Variant::Beamformed => "beamformed",
            Variant::Alstm => "alstm",
            Variant::AlstmPhase => "alstm_phase",
            Variant::AlstmTime => "alstm_time",
        }
    }

    pub fn attention(self) -> AttentionMode {
        match self {
            Variant::SingleChannel | Variant::Concat | Variant::Beamformed => AttentionMode::Uniform,
            Variant::Alstm | Variant::AlstmTime => AttentionMode::Learned { phase: false },
            Variant::AlstmPhase => AttentionMode::Learned { phase: true },
        }
    }

    /// Whether the model sees every microphone (otherwise one signal).
    pub fn multichannel(self) -> bool {
        matches!(self, Variant::Concat | Variant::Alstm | Variant::AlstmPhase)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or(())
    }
}

/// How per-utterance noise schedules are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePlan {
    /// A random reliable channel per dwell interval.
    Switching {
        clean_snr_db: f64,
        noisy_snr_db: f64,
        dwell: (f64, f64),
    },
    /// One SNR per channel for the whole utterance.
    Constant(Vec<f64>),
    /// The same explicit schedule for every utterance.
    Explicit(Vec<NoiseSegment>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTemplate {
    pub num_channels: usize,
    pub sample_rate: u32,
    pub num_classes: usize,
    pub utterance_length: f64,
    pub delays: Vec<usize>,
    pub noise: NoisePlan,
    pub seed: u64,
    pub utterances: usize,
}

fn mix_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a base/index combination
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SceneTemplate {
    /// Concrete scene for utterance `index`; each utterance has its own seed.
    pub fn scene(&self, index: usize) -> SceneConfig {
        let seed = mix_seed(self.seed, index as u64);
        let noise_schedule = match &self.noise {
            NoisePlan::Switching {
                clean_snr_db,
                noisy_snr_db,
                dwell,
            } => switching_schedule(
                self.num_channels,
                self.utterance_length,
                *clean_snr_db,
                *noisy_snr_db,
                *dwell,
                seed ^ 0x5CED_u64,
            ),
            NoisePlan::Constant(snr) => constant_schedule(snr, self.utterance_length),
            NoisePlan::Explicit(s) => s.clone(),
        };
        SceneConfig {
            num_channels: self.num_channels,
            sample_rate: self.sample_rate,
            num_classes: self.num_classes,
            utterance_length: self.utterance_length,
            channel_delays: self.delays.clone(),
            noise_schedule,
            seed,
        }
    }

    /// 60/20/20 split of utterance indices.
    pub fn splits(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
        let n = self.utterances;
        let train = (n as f64 * 0.6).round() as usize;
        let dev = (n as f64 * 0.2).round() as usize;
        (0..train, train..train + dev, train + dev..n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub window: usize,
    pub bands: usize,
    /// Standardize every input dimension with train-split statistics.
    pub normalize: bool,
    /// Target standard deviation of standardized inputs.
    pub input_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneTemplate,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub output: PathBuf,
    pub cache: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "seed",
    "scene.num_channels",
    "scene.sample_rate",
    "scene.num_classes",
    "scene.utterance_length",
    "scene.delays",
    "scene.noise",
    "scene.clean_snr_db",
    "scene.noisy_snr_db",
    "scene.dwell_min",
    "scene.dwell_max",
    "scene.snr_db",
    "scene.schedule",
    "scene.seed",
    "scene.utterances",
    "train.learning_rate",
    "train.decay_factor",
    "train.decay_after",
    "train.clip_norm",
    "train.epochs",
    "train.init_range",
    "train.seed",
    "model.variant",
    "model.hidden",
    "model.classes",
    "model.window",
    "model.bands",
    "model.normalize",
    "model.input_scale",
    "paths.output",
    "paths.cache",
];

/// Parses `key=value` lines into an ordered map.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim().to_string();
        if !KEYS.contains(&k.as_str()) {
            return Err(ConfigError::UnknownKey(k));
        }
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate { line: i + 1, key: k });
        }
    }
    Ok(map)
}

struct Reader<'a>(&'a BTreeMap<String, String>);

impl Reader<'_> {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => parse_value(key, v),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        self.0
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| parse_value(key, s.trim()))
                    .collect::<Result<Vec<T>, _>>()
            })
            .transpose()
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    let normalized = match v {
        "inf" | "+inf" => "inf",
        other => other,
    };
    normalized.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: v.to_string(),
    })
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let map = parse_pairs(text)?;
        let r = Reader(&map);
        let seed: Option<u64> = map.get("seed").map(|v| parse_value("seed", v)).transpose()?;
        let num_channels: usize = r.get("scene.num_channels", 5)?;
        let utterance_length: f64 = r.get("scene.utterance_length", 2.0)?;
        let num_classes: usize = r.get("scene.num_classes", 10)?;
        let delays = r
            .list("scene.delays")?
            .unwrap_or_else(|| vec![0; num_channels]);
        let noise = match r.get("scene.noise", "switching".to_string())?.as_str() {
            "switching" => NoisePlan::Switching {
                clean_snr_db: r.get("scene.clean_snr_db", 20.0)?,
                noisy_snr_db: r.get("scene.noisy_snr_db", -5.0)?,
                dwell: (r.get("scene.dwell_min", 0.3)?, r.get("scene.dwell_max", 0.8)?),
            },
            "constant" => NoisePlan::Constant(
                r.list("scene.snr_db")?
                    .unwrap_or_else(|| vec![f64::INFINITY; num_channels]),
            ),
            "explicit" => {
                let text = map.get("scene.schedule").ok_or_else(|| {
                    ConfigError::Invalid("scene.noise=explicit needs scene.schedule".into())
                })?;
                NoisePlan::Explicit(parse_schedule(text)?)
            }
            other => {
                return Err(ConfigError::Value {
                    key: "scene.noise".into(),
                    value: other.into(),
                })
            }
        };
        let scene = SceneTemplate {
            num_channels,
            sample_rate: r.get("scene.sample_rate", 16_000)?,
            num_classes,
            utterance_length,
            delays,
            noise,
            seed: match seed {
                Some(s) if !map.contains_key("scene.seed") => s,
                _ => r.get("scene.seed", 1)?,
            },
            utterances: r.get("scene.utterances", 40)?,
        };
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: r.get("train.learning_rate", defaults.learning_rate)?,
            decay_factor: r.get("train.decay_factor", defaults.decay_factor)?,
            decay_after: r.get("train.decay_after", defaults.decay_after)?,
            clip_norm: r.get("train.clip_norm", defaults.clip_norm)?,
            epochs: r.get("train.epochs", defaults.epochs)?,
            init_range: r.get("train.init_range", defaults.init_range)?,
            seed: match seed {
                Some(s) if !map.contains_key("train.seed") => s,
                _ => r.get("train.seed", defaults.seed)?,
            },
        };
        let variant_name: String = r.get("model.variant", "alstm".to_string())?;
        let variant = variant_name.parse().map_err(|_| ConfigError::Value {
            key: "model.variant".into(),
            value: variant_name.clone(),
        })?;
        let classes: usize = r.get("model.classes", num_classes)?;
        if classes != num_classes {
            return Err(ConfigError::Invalid(format!(
                "model.classes={classes} differs from scene.num_classes={num_classes}"
            )));
        }
        let model = ModelConfig {
            variant,
            hidden: r.get("model.hidden", 64)?,
            window: r.get("model.window", 7)?,
            bands: r.get("model.bands", 40)?,
            normalize: match r.get("model.normalize", "none".to_string())?.as_str() {
                "none" => false,
                "global" => true,
                other => {
                    return Err(ConfigError::Value {
                        key: "model.normalize".into(),
                        value: other.into(),
                    })
                }
            },
            input_scale: r.get("model.input_scale", 1.0)?,
        };
        let cfg = Self {
            scene,
            train,
            model,
            output: PathBuf::from(r.get("paths.output", "runs".to_string())?),
            cache: map.get("paths.cache").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, super::HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(super::HarnessError::io(format!("reading config {}", path.display())))?;
        Ok(Self::parse(&text)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.model.window.is_multiple_of(2) {
            return bad(format!("model.window must be odd, got {}", self.model.window));
        }
        if !(self.model.input_scale.is_finite() && self.model.input_scale > 0.0) {
            return bad(format!("model.input_scale must be positive, got {}", self.model.input_scale));
        }
        if self.model.hidden == 0 {
            return bad("model.hidden must be positive".into());
        }
        if self.model.bands == 0 || self.model.bands > crate::features::NUM_BINS {
            return bad(format!("model.bands must be in 1..=256, got {}", self.model.bands));
        }
        let (train, dev, test) = self.scene.splits();
        if train.is_empty() || dev.is_empty() || test.is_empty() {
            return bad(format!(
                "scene.utterances={} leaves an empty train/dev/test split",
                self.scene.utterances
            ));
        }
        if self.scene.delays.len() != self.scene.num_channels {
            return bad(format!(
                "scene.delays has {} entries for {} channels",
                self.scene.delays.len(),
                self.scene.num_channels
            ));
        }
        if let NoisePlan::Constant(s) = &self.scene.noise {
            if s.len() != self.scene.num_channels {
                return bad("scene.snr_db needs one value per channel".into());
            }
        }
        self.scene
            .scene(0)
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("scene: {e}")))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model_shape(&self) -> ModelShape {
        let v = self.model.variant;
        ModelShape {
            num_channels: if v.multichannel() {
                self.scene.num_channels
            } else {
                1
            },
            window_len: self.model.window,
            feat_dim: crate::features::NUM_FILTERS,
            num_bands: self.model.bands,
            hidden: self.model.hidden,
            num_classes: self.scene.num_classes,
            attention: v.attention(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.join(self.model.variant.name())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.output.join("cache"))
    }

    /// Canonical text of everything that determines the scenes.
    pub fn scene_text(&self) -> String {
        let s = &self.scene;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("scene.num_channels", s.num_channels.to_string());
        kv("scene.sample_rate", s.sample_rate.to_string());
        kv("scene.num_classes", s.num_classes.to_string());
        kv("scene.utterance_length", fmt_f64(s.utterance_length));
        kv("scene.delays", join(s.delays.iter().map(|d| d.to_string())));
        match &s.noise {
            NoisePlan::Switching {
                clean_snr_db,
                noisy_snr_db,
                dwell,
            } => {
                kv("scene.noise", "switching".into());
                kv("scene.clean_snr_db", fmt_f64(*clean_snr_db));
                kv("scene.noisy_snr_db", fmt_f64(*noisy_snr_db));
                kv("scene.dwell_min", fmt_f64(dwell.0));
                kv("scene.dwell_max", fmt_f64(dwell.1));
            }
            NoisePlan::Constant(snr) => {
                kv("scene.noise", "constant".into());
                kv("scene.snr_db", join(snr.iter().map(|v| fmt_f64(*v))));
            }
            NoisePlan::Explicit(segs) => {
                kv("scene.noise", "explicit".into());
                kv("scene.schedule", format_schedule(segs));
            }
        }
        kv("scene.seed", s.seed.to_string());
        kv("scene.utterances", s.utterances.to_string());
        out
    }

    /// Canonical, re-parseable text of the whole config.
    pub fn to_text(&self) -> String {
        let mut out = self.scene_text();
        let t = &self.train;
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("train.learning_rate", fmt_f64(t.learning_rate));
        kv("train.decay_factor", fmt_f64(t.decay_factor));
        kv("train.decay_after", t.decay_after.to_string());
        kv("train.clip_norm", fmt_f64(t.clip_norm));
        kv("train.epochs", t.epochs.to_string());
        kv("train.init_range", fmt_f64(t.init_range));
        kv("train.seed", t.seed.to_string());
        kv("model.variant", self.model.variant.name().into());
        kv("model.hidden", self.model.hidden.to_string());
        kv("model.window", self.model.window.to_string());
        kv("model.bands", self.model.bands.to_string());
        kv(
            "model.normalize",
            if self.model.normalize { "global" } else { "none" }.into(),
        );
        kv("model.input_scale", fmt_f64(self.model.input_scale));
        kv("paths.output", self.output.display().to_string());
        if let Some(c) = &self.cache {
            kv("paths.cache", c.display().to_string());
        }
        out
    }

    /// Overrides both the scene and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene.seed = seed;
        self.train.seed = seed;
        self
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(",")
}

/// `start:end:channel:snr_db` entries separated by `;`.
pub fn parse_schedule(text: &str) -> Result<Vec<NoiseSegment>, ConfigError> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let parts: Vec<&str> = entry.split(':').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(ConfigError::Value {
                    key: "scene.schedule".into(),
                    value: entry.into(),
                });
            }
            Ok(NoiseSegment {
                start: parse_value("scene.schedule", parts[0])?,
                end: parse_value("scene.schedule", parts[1])?,
                channel: parse_value("scene.schedule", parts[2])?,
                snr_db: parse_value("scene.schedule", parts[3])?,
            })
        })
        .collect()
}

fn format_schedule(segs: &[NoiseSegment]) -> String {
    segs.iter()
        .map(|s| {
            format!(
                "{}:{}:{}:{}",
                fmt_f64(s.start),
                fmt_f64(s.end),
                s.channel,
                fmt_f64(s.snr_db)
            )
        })
        .collect::<Vec<_>>()
        .join(";")
}
