//! Synthetic multi-microphone scenes with known delays, scheduled per-channel
//! noise and frame-level class labels, plus the delay-and-sum enhancer.
//!
//! Channel indices are 0-based everywhere. Frames use a 25 ms window and a
//! 10 ms hop; a frame is labelled with the class active at its centre sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use thiserror::Error;

pub const WINDOW_SECONDS: f64 = 0.025;
pub const HOP_SECONDS: f64 = 0.010;
pub const MAX_DELAY_SECONDS: f64 = 0.100;

/// Peak amplitude of the clean source.
pub const SOURCE_AMPLITUDE: f64 = 0.1;

/// Segment length range of the clean source, in frames (200..=500 ms).
const MIN_SEGMENT_FRAMES: usize = 20;
const MAX_SEGMENT_FRAMES: usize = 50;
const RAMP_SECONDS: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("scene needs at least one channel")]
    NoChannels,
    #[error("utterance of {0} s is too short to hold a single frame")]
    EmptyUtterance(f64),
    #[error("sample rate must be positive")]
    BadSampleRate,
    #[error("need at least one class")]
    NoClasses,
    #[error("expected {expected} channel delays, got {actual}")]
    DelayCount { expected: usize, actual: usize },
    #[error("delay of channel {channel} is {samples} samples, above the {max} sample limit (100 ms)")]
    DelayTooLarge {
        channel: usize,
        samples: usize,
        max: usize,
    },
    #[error("noise segment {index} names channel {channel} but the scene has {num_channels}")]
    NoiseChannel {
        index: usize,
        channel: usize,
        num_channels: usize,
    },
    #[error("noise segment {index} has an empty or invalid interval [{start}, {end})")]
    NoiseInterval { index: usize, start: f64, end: f64 },
    #[error("noise segment {index} has a non-numeric SNR")]
    NoiseSnr { index: usize },
    #[error("channel {channel} has no noise state at sample {sample}")]
    UncoveredNoise { channel: usize, sample: usize },
    #[error("channels have unequal lengths ({0} vs {1})")]
    RaggedChannels(usize, usize),
    #[error("delay {delay} of channel {channel} exceeds signal length {len}")]
    DelayBeyondSignal {
        channel: usize,
        delay: usize,
        len: usize,
    },
}

/// One entry of a noise schedule: channel `channel` carries white noise at
/// `snr_db` over `[start, end)` seconds. Later entries override earlier ones
/// where they overlap. `snr_db = +inf` means no noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSegment {
    pub start: f64,
    pub end: f64,
    pub channel: usize,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub num_channels: usize,
    pub sample_rate: u32,
    pub num_classes: usize,
    /// Seconds.
    pub utterance_length: f64,
    /// Integer sample offsets, one per channel.
    pub channel_delays: Vec<usize>,
    pub noise_schedule: Vec<NoiseSegment>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let num_channels = 5;
        let utterance_length = 2.0;
        Self {
            num_channels,
            sample_rate: 16_000,
            num_classes: 10,
            utterance_length,
            channel_delays: vec![0; num_channels],
            noise_schedule: (0..num_channels)
                .map(|channel| NoiseSegment {
                    start: 0.0,
                    end: utterance_length,
                    channel,
                    snr_db: f64::INFINITY,
                })
                .collect(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn num_samples(&self) -> usize {
        (self.utterance_length * self.sample_rate as f64).round() as usize
    }

    pub fn window_samples(&self) -> usize {
        window_samples(self.sample_rate)
    }

    pub fn hop_samples(&self) -> usize {
        hop_samples(self.sample_rate)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.num_channels == 0 {
            return Err(SceneError::NoChannels);
        }
        if self.sample_rate == 0 {
            return Err(SceneError::BadSampleRate);
        }
        if self.num_classes == 0 {
            return Err(SceneError::NoClasses);
        }
        if !(self.utterance_length.is_finite() && self.num_samples() >= self.window_samples()) {
            return Err(SceneError::EmptyUtterance(self.utterance_length));
        }
        if self.channel_delays.len() != self.num_channels {
            return Err(SceneError::DelayCount {
                expected: self.num_channels,
                actual: self.channel_delays.len(),
            });
        }
        let max = (MAX_DELAY_SECONDS * self.sample_rate as f64).round() as usize;
        for (channel, &samples) in self.channel_delays.iter().enumerate() {
            if samples > max {
                return Err(SceneError::DelayTooLarge {
                    channel,
                    samples,
                    max,
                });
            }
        }
        for (index, seg) in self.noise_schedule.iter().enumerate() {
            if seg.channel >= self.num_channels {
                return Err(SceneError::NoiseChannel {
                    index,
                    channel: seg.channel,
                    num_channels: self.num_channels,
                });
            }
            if !(seg.start.is_finite() && seg.end.is_finite() && seg.start < seg.end) {
                return Err(SceneError::NoiseInterval {
                    index,
                    start: seg.start,
                    end: seg.end,
                });
            }
            if seg.snr_db.is_nan() || seg.snr_db == f64::NEG_INFINITY {
                return Err(SceneError::NoiseSnr { index });
            }
        }
        self.noise_state_map().map(|_| ())
    }

    /// Per channel, per sample: index of the governing noise segment.
    fn noise_state_map(&self) -> Result<Vec<Vec<usize>>, SceneError> {
        let len = self.num_samples();
        let sr = self.sample_rate as f64;
        let mut map = vec![vec![usize::MAX; len]; self.num_channels];
        for (index, seg) in self.noise_schedule.iter().enumerate() {
            let (a, b) = segment_samples(seg, sr, len);
            map[seg.channel][a..b].iter_mut().for_each(|m| *m = index);
        }
        for (channel, states) in map.iter().enumerate() {
            if let Some(sample) = states.iter().position(|&m| m == usize::MAX) {
                return Err(SceneError::UncoveredNoise { channel, sample });
            }
        }
        Ok(map)
    }
}

fn segment_samples(seg: &NoiseSegment, sr: f64, len: usize) -> (usize, usize) {
    let a = ((seg.start * sr).round().max(0.0) as usize).min(len);
    let b = ((seg.end * sr).round().max(0.0) as usize).min(len);
    (a, b.max(a))
}

pub fn window_samples(sample_rate: u32) -> usize {
    (WINDOW_SECONDS * sample_rate as f64).round() as usize
}

pub fn hop_samples(sample_rate: u32) -> usize {
    (HOP_SECONDS * sample_rate as f64).round() as usize
}

/// `floor((len - window) / hop) + 1`, or 0 when the signal is shorter than one window.
pub fn frame_count(len: usize, sample_rate: u32) -> usize {
    let window = window_samples(sample_rate);
    if len < window {
        0
    } else {
        (len - window) / hop_samples(sample_rate) + 1
    }
}

/// Centre sample of frame `t`.
pub fn frame_center(t: usize, sample_rate: u32) -> usize {
    t * hop_samples(sample_rate) + window_samples(sample_rate) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelWaveform {
    /// `samples[channel][sample]`.
    pub samples: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub frame_labels: Vec<usize>,
    pub clean_channel_trace: Vec<usize>,
}

impl MultiChannelWaveform {
    pub fn new(
        samples: Vec<Vec<f64>>,
        sample_rate: u32,
        frame_labels: Vec<usize>,
        clean_channel_trace: Vec<usize>,
    ) -> Result<Self, SceneError> {
        if samples.is_empty() {
            return Err(SceneError::NoChannels);
        }
        let len = samples[0].len();
        if let Some(c) = samples.iter().find(|c| c.len() != len) {
            return Err(SceneError::RaggedChannels(len, c.len()));
        }
        Ok(Self {
            samples,
            sample_rate,
            frame_labels,
            clean_channel_trace,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_frames(&self) -> usize {
        frame_count(self.len(), self.sample_rate)
    }
}

/// Centre and half-width (Hz) of the band occupied by class `k`.
///
/// Centres are log-spaced between 300 Hz and 40% of the sample rate; each band
/// spans ±8% of its centre, so neighbouring bands never overlap.
pub fn class_band(k: usize, num_classes: usize, sample_rate: u32) -> (f64, f64) {
    let lo = 300.0;
    let hi = 0.4 * sample_rate as f64;
    let center = if num_classes == 1 {
        (lo * hi).sqrt()
    } else {
        lo * (hi / lo).powf(k as f64 / (num_classes - 1) as f64)
    };
    (center, 0.08 * center)
}

/// Everything the generator builds, kept separate so tests can measure SNR
/// from the exact buffers that were mixed.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub clean: Vec<f64>,
    pub delayed: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    pub frame_labels: Vec<usize>,
    pub clean_channel_trace: Vec<usize>,
}

pub fn render_scene(config: &SceneConfig) -> Result<SceneRender, SceneError> {
    config.validate()?;
    let len = config.num_samples();
    let sr = config.sample_rate;
    let num_frames = frame_count(len, sr);

    let mut source_rng = ChaCha8Rng::seed_from_u64(config.seed);
    source_rng.set_stream(0);
    let (clean, frame_labels) = clean_source(config, num_frames, &mut source_rng);

    let delayed: Vec<Vec<f64>> = config
        .channel_delays
        .iter()
        .map(|&d| {
            let mut ch = vec![0.0; len];
            if d < len {
                ch[d..].copy_from_slice(&clean[..len - d]);
            }
            ch
        })
        .collect();

    let states = config.noise_state_map()?;
    let seg_std: Vec<f64> = config
        .noise_schedule
        .iter()
        .map(|seg| {
            let (a, b) = segment_samples(seg, sr as f64, len);
            let active = mean_power(&delayed[seg.channel][a..b]);
            let power = if active > 0.0 { active } else { mean_power(&clean) };
            if seg.snr_db == f64::INFINITY {
                0.0
            } else {
                (power / 10f64.powf(seg.snr_db / 10.0)).sqrt()
            }
        })
        .collect();

    let noise: Vec<Vec<f64>> = (0..config.num_channels)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(c as u64 + 1);
            states[c]
                .iter()
                .map(|&seg| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    seg_std[seg] * z
                })
                .collect()
        })
        .collect();

    let clean_channel_trace = (0..num_frames)
        .map(|t| {
            let s = frame_center(t, sr).min(len - 1);
            let mut best = 0;
            let mut best_snr = f64::NEG_INFINITY;
            for (c, st) in states.iter().enumerate() {
                let snr = config.noise_schedule[st[s]].snr_db;
                if snr > best_snr {
                    best = c;
                    best_snr = snr;
                }
            }
            best
        })
        .collect();

    Ok(SceneRender {
        clean,
        delayed,
        noise,
        frame_labels,
        clean_channel_trace,
    })
}

/// Deterministic function of `config` (including its seed).
pub fn generate_scene(config: &SceneConfig) -> Result<MultiChannelWaveform, SceneError> {
    let render = render_scene(config)?;
    let samples = render
        .delayed
        .iter()
        .zip(&render.noise)
        .map(|(s, n)| s.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    MultiChannelWaveform::new(
        samples,
        config.sample_rate,
        render.frame_labels,
        render.clean_channel_trace,
    )
}

fn clean_source(
    config: &SceneConfig,
    num_frames: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<usize>) {
    let len = config.num_samples();
    let sr = config.sample_rate as f64;
    let hop = config.hop_samples();
    let half_window = config.window_samples() / 2;
    let ramp = (RAMP_SECONDS * sr).round() as usize;

    let mut clean = vec![0.0; len];
    let mut labels = Vec::with_capacity(num_frames);
    let mut prev_class = None;
    let mut start_frame = 0usize;
    let mut start_sample = 0usize;
    while start_frame < num_frames {
        let frames = rng.random_range(MIN_SEGMENT_FRAMES..=MAX_SEGMENT_FRAMES);
        let end_frame = (start_frame + frames).min(num_frames);
        // Boundaries sit halfway between frame centres.
        let end_sample = if end_frame == num_frames {
            len
        } else {
            (end_frame * hop + half_window).saturating_sub(hop / 2).min(len)
        };
        let class = loop {
            let k = rng.random_range(0..config.num_classes);
            if config.num_classes == 1 || Some(k) != prev_class {
                break k;
            }
        };
        prev_class = Some(class);
        labels.extend(std::iter::repeat_n(class, end_frame - start_frame));

        let (center, half_width) = class_band(class, config.num_classes, config.sample_rate);
        let f_lo = center - half_width;
        let sweep = 2.0 * half_width;
        let n = end_sample - start_sample;
        let dur = n as f64 / sr;
        let phase0 = rng.random_range(0.0..2.0 * PI);
        for i in 0..n {
            let tau = i as f64 / sr;
            let phase = phase0 + 2.0 * PI * (f_lo * tau + 0.5 * sweep * tau * tau / dur);
            let edge = i.min(n - 1 - i);
            let gain = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            clean[start_sample + i] = SOURCE_AMPLITUDE * gain * phase.sin();
        }
        start_frame = end_frame;
        start_sample = end_sample;
    }
    (clean, labels)
}

/// `out[s] = (1/N) Σ_i channel_i[s + delay_i]`, zero beyond the end of each channel.
pub fn delay_and_sum(
    wave: &MultiChannelWaveform,
    delays: &[usize],
) -> Result<Vec<f64>, SceneError> {
    let n = wave.num_channels();
    if delays.len() != n {
        return Err(SceneError::DelayCount {
            expected: n,
            actual: delays.len(),
        });
    }
    let len = wave.len();
    for (channel, &delay) in delays.iter().enumerate() {
        if delay >= len && len > 0 {
            return Err(SceneError::DelayBeyondSignal {
                channel,
                delay,
                len,
            });
        }
    }
    let mut out = vec![0.0; len];
    for (ch, &d) in wave.samples.iter().zip(delays) {
        for (o, &x) in out.iter_mut().zip(&ch[d..]) {
            *o += x;
        }
    }
    let norm = n as f64;
    out.iter_mut().for_each(|o| *o /= norm);
    Ok(out)
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Noise schedule where, every `min_dwell..=max_dwell` seconds, one randomly
/// chosen channel becomes the reliable one at `clean_snr_db` and all others
/// sit at `noisy_snr_db`.
pub fn switching_schedule(
    num_channels: usize,
    utterance_length: f64,
    clean_snr_db: f64,
    noisy_snr_db: f64,
    dwell: (f64, f64),
    seed: u64,
) -> Vec<NoiseSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut prev = None;
    while t < utterance_length {
        let span = if dwell.1 > dwell.0 {
            rng.random_range(dwell.0..=dwell.1)
        } else {
            dwell.0
        };
        let end = (t + span).min(utterance_length);
        let clean = loop {
            let c = rng.random_range(0..num_channels);
            if num_channels == 1 || Some(c) != prev {
                break c;
            }
        };
        prev = Some(clean);
        for channel in 0..num_channels {
            out.push(NoiseSegment {
                start: t,
                end,
                channel,
                snr_db: if channel == clean {
                    clean_snr_db
                } else {
                    noisy_snr_db
                },
            });
        }
        t = end;
    }
    out
}

/// Schedule with a constant SNR per channel over the whole utterance.
pub fn constant_schedule(snr_db: &[f64], utterance_length: f64) -> Vec<NoiseSegment> {
    snr_db
        .iter()
        .enumerate()
        .map(|(channel, &snr_db)| NoiseSegment {
            start: 0.0,
            end: utterance_length,
            channel,
            snr_db,
        })
        .collect()
}
