//! Log-filterbank features, wrapped inter-channel phase differences and
//! candidate-window extraction.

use crate::linalg::Matrix;
use crate::scene::{hop_samples, window_samples, MultiChannelWaveform};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::borrow::Cow;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

pub const FFT_SIZE: usize = 512;
/// Bins 1..=256 of the 512-point transform; DC is dropped.
pub const NUM_BINS: usize = 256;
pub const NUM_FILTERS: usize = 40;
pub const LOG_FLOOR: f64 = 1e-10;
/// Below this magnitude a bin's phase is treated as undefined.
pub const PHASE_MAGNITUDE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("signal of {len} samples is shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("sample rate {0} Hz gives a window longer than the {FFT_SIZE}-point transform")]
    SampleRate(u32),
    #[error("spectrogram shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("candidate window length must be odd, got {0}")]
    EvenWindow(usize),
    #[error("frame {t} out of range for {frames} frames")]
    FrameOutOfRange { t: usize, frames: usize },
    #[error("cannot pool {bins} bins into {bands} bands")]
    Pooling { bins: usize, bands: usize },
}

/// `T × 256` complex STFT frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: Vec<Complex64>,
    num_frames: usize,
    pub sample_rate: u32,
    pub window_length: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        NUM_BINS
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.bins[t * NUM_BINS..(t + 1) * NUM_BINS]
    }

    /// Frequency in Hz of retained bin index `b` (0-based, i.e. transform bin `b + 1`).
    pub fn bin_frequency(&self, b: usize) -> f64 {
        bin_frequency(b, self.sample_rate)
    }

    pub fn from_frames(
        bins: Vec<Complex64>,
        sample_rate: u32,
    ) -> Self {
        assert_eq!(bins.len() % NUM_BINS, 0);
        Self {
            num_frames: bins.len() / NUM_BINS,
            bins,
            sample_rate,
            window_length: window_samples(sample_rate),
            hop: hop_samples(sample_rate),
        }
    }
}

pub fn bin_frequency(b: usize, sample_rate: u32) -> f64 {
    (b + 1) as f64 * sample_rate as f64 / FFT_SIZE as f64
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Reusable transform plan, analysis window and mel weights for one sample rate.
pub struct Featurizer {
    sample_rate: u32,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
    /// `NUM_FILTERS × NUM_BINS`.
    mel: Matrix,
}

impl Featurizer {
    pub fn new(sample_rate: u32) -> Result<Self, FeatureError> {
        let window_length = window_samples(sample_rate);
        if window_length > FFT_SIZE || window_length == 0 {
            return Err(FeatureError::SampleRate(sample_rate));
        }
        // Periodic Hann.
        let window = (0..window_length)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / window_length as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Ok(Self {
            sample_rate,
            window,
            hop: hop_samples(sample_rate),
            fft,
            mel: mel_filterbank(sample_rate),
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn stft(&self, signal: &[f64]) -> Result<Spectrogram, FeatureError> {
        let wl = self.window.len();
        if signal.len() < wl {
            return Err(FeatureError::TooShort {
                len: signal.len(),
                window: wl,
            });
        }
        let num_frames = (signal.len() - wl) / self.hop + 1;
        let mut bins = Vec::with_capacity(num_frames * NUM_BINS);
        let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..num_frames {
            let frame = &signal[t * self.hop..t * self.hop + wl];
            for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex64::new(x * w, 0.0);
            }
            buf[wl..].iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            bins.extend_from_slice(&buf[1..=NUM_BINS]);
        }
        Ok(Spectrogram {
            bins,
            num_frames,
            sample_rate: self.sample_rate,
            window_length: wl,
            hop: self.hop,
        })
    }

    /// `T × 40` natural-log mel energies of the power spectrum, floored at [`LOG_FLOOR`].
    pub fn log_filterbank(&self, spec: &Spectrogram) -> Matrix {
        let mut out = Matrix::zeros(spec.num_frames(), NUM_FILTERS);
        let mut power = vec![0.0; NUM_BINS];
        for t in 0..spec.num_frames() {
            for (p, x) in power.iter_mut().zip(spec.frame(t)) {
                *p = x.norm_sqr();
            }
            for m in 0..NUM_FILTERS {
                let e = crate::linalg::dot(self.mel.row(m), &power);
                out.set(t, m, e.max(LOG_FLOOR).ln());
            }
        }
        out
    }

    /// Features for every channel plus phase differences for every channel pair.
    pub fn featurize(&self, wave: &MultiChannelWaveform) -> Result<(FeatureTensor, PhaseDiffTensor), FeatureError> {
        let specs = wave
            .samples
            .iter()
            .map(|ch| self.stft(ch))
            .collect::<Result<Vec<_>, _>>()?;
        let fbanks: Vec<Matrix> = specs.iter().map(|s| self.log_filterbank(s)).collect();
        let features = FeatureTensor::from_channels(&fbanks);
        let pd = PhaseDiffTensor::from_spectrograms(&specs)?;
        Ok((features, pd))
    }

    pub fn features_only(&self, signal: &[f64]) -> Result<FeatureTensor, FeatureError> {
        let spec = self.stft(signal)?;
        Ok(FeatureTensor::from_channels(&[self.log_filterbank(&spec)]))
    }
}

/// Triangular filters with edges equally spaced on the mel scale from 0 Hz to
/// Nyquist, evaluated at the retained bin frequencies.
pub fn mel_filterbank(sample_rate: u32) -> Matrix {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..NUM_FILTERS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (NUM_FILTERS + 1) as f64))
        .collect();
    Matrix::from_fn(NUM_FILTERS, NUM_BINS, |m, b| {
        let f = bin_frequency(b, sample_rate);
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

pub fn stft(signal: &[f64], sample_rate: u32) -> Result<Spectrogram, FeatureError> {
    Featurizer::new(sample_rate)?.stft(signal)
}

pub fn log_filterbank(spec: &Spectrogram) -> Result<Matrix, FeatureError> {
    Ok(Featurizer::new(spec.sample_rate)?.log_filterbank(spec))
}

/// Wrapped absolute phase difference per time-frequency bin, in `[0, π]`.
///
/// `min_r |∠x_i − ∠x_j − 2πr|` equals `|arg(x_i · conj(x_j))|`, which is what
/// is computed. Bins where either magnitude is below
/// [`PHASE_MAGNITUDE_FLOOR`] yield 0.
pub fn phase_difference(a: &Spectrogram, b: &Spectrogram) -> Result<Matrix, FeatureError> {
    let da = (a.num_frames(), a.num_bins());
    let db = (b.num_frames(), b.num_bins());
    if da != db {
        return Err(FeatureError::ShapeMismatch(da, db));
    }
    let mut out = Matrix::zeros(da.0, da.1);
    for (o, (x, y)) in out
        .as_mut_slice()
        .iter_mut()
        .zip(a.bins.iter().zip(&b.bins))
    {
        *o = wrapped_phase_gap(*x, *y);
    }
    Ok(out)
}

#[inline]
fn wrapped_phase_gap(x: Complex64, y: Complex64) -> f64 {
    if x.norm() < PHASE_MAGNITUDE_FLOOR || y.norm() < PHASE_MAGNITUDE_FLOOR {
        return 0.0;
    }
    (x * y.conj()).arg().abs().min(PI)
}

/// Lexicographic channel pairs `(0,1), (0,2), …, (N-2,N-1)`.
pub fn channel_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// `T × N × d` log-filterbank features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    num_frames: usize,
    num_channels: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(num_frames: usize, num_channels: usize, dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), num_frames * num_channels * dim);
        Self {
            num_frames,
            num_channels,
            dim,
            values,
        }
    }

    /// Stacks per-channel `T × d` matrices.
    pub fn from_channels(channels: &[Matrix]) -> Self {
        let (t, d) = channels[0].dims();
        let n = channels.len();
        let mut values = Vec::with_capacity(t * n * d);
        for frame in 0..t {
            for ch in channels {
                values.extend_from_slice(ch.row(frame));
            }
        }
        Self::new(t, n, d, values)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }
    pub fn num_channels(&self) -> usize {
        self.num_channels
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn dims(&self) -> [usize; 3] {
        [self.num_frames, self.num_channels, self.dim]
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize, channel: usize) -> &[f64] {
        let start = (t * self.num_channels + channel) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Keeps only `channel`.
    pub fn select_channel(&self, channel: usize) -> Self {
        let mut values = Vec::with_capacity(self.num_frames * self.dim);
        for t in 0..self.num_frames {
            values.extend_from_slice(self.frame(t, channel));
        }
        Self::new(self.num_frames, 1, self.dim, values)
    }
}

/// `T × P × F` wrapped phase differences, pairs in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiffTensor {
    num_frames: usize,
    num_pairs: usize,
    num_bins: usize,
    values: Vec<f64>,
}

impl PhaseDiffTensor {
    pub fn new(num_frames: usize, num_pairs: usize, num_bins: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), num_frames * num_pairs * num_bins);
        Self {
            num_frames,
            num_pairs,
            num_bins,
            values,
        }
    }

    pub fn from_spectrograms(specs: &[Spectrogram]) -> Result<Self, FeatureError> {
        let pairs = channel_pairs(specs.len());
        let t = specs[0].num_frames();
        let per_pair = pairs
            .iter()
            .map(|&(i, j)| phase_difference(&specs[i], &specs[j]))
            .collect::<Result<Vec<_>, _>>()?;
        let mut values = Vec::with_capacity(t * pairs.len() * NUM_BINS);
        for frame in 0..t {
            for m in &per_pair {
                values.extend_from_slice(m.row(frame));
            }
        }
        Ok(Self::new(t, pairs.len(), NUM_BINS, values))
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }
    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }
    pub fn num_bins(&self) -> usize {
        self.num_bins
    }
    pub fn dims(&self) -> [usize; 3] {
        [self.num_frames, self.num_pairs, self.num_bins]
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize, pair: usize) -> &[f64] {
        let start = (t * self.num_pairs + pair) * self.num_bins;
        &self.values[start..start + self.num_bins]
    }

    /// Averages bins within each band of `pooling`.
    pub fn pool(&self, pooling: &BandPooling) -> Result<Self, FeatureError> {
        if pooling.num_bins() != self.num_bins {
            return Err(FeatureError::Pooling {
                bins: self.num_bins,
                bands: pooling.num_bands(),
            });
        }
        let mut values = Vec::with_capacity(self.num_frames * self.num_pairs * pooling.num_bands());
        for t in 0..self.num_frames {
            for p in 0..self.num_pairs {
                pooling.pool_into(self.frame(t, p), &mut values);
            }
        }
        Ok(Self::new(
            self.num_frames,
            self.num_pairs,
            pooling.num_bands(),
            values,
        ))
    }
}

/// Contiguous bin groups with edges equally spaced on the mel scale; every
/// group holds at least one bin, so `bands == bins` is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPooling {
    edges: Vec<usize>,
}

impl BandPooling {
    pub fn mel(num_bins: usize, num_bands: usize, sample_rate: u32) -> Result<Self, FeatureError> {
        if num_bands == 0 || num_bands > num_bins {
            return Err(FeatureError::Pooling {
                bins: num_bins,
                bands: num_bands,
            });
        }
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let bin_hz = nyquist / num_bins as f64;
        let mut edges = vec![0usize; num_bands + 1];
        edges[num_bands] = num_bins;
        for b in 1..num_bands {
            let hz = mel_to_hz(mel_max * b as f64 / num_bands as f64);
            let raw = (hz / bin_hz).round() as usize;
            // Leave room for one bin per remaining band on either side.
            edges[b] = raw.max(edges[b - 1] + 1).min(num_bins - (num_bands - b));
        }
        Ok(Self { edges })
    }

    pub fn num_bands(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn num_bins(&self) -> usize {
        *self.edges.last().unwrap()
    }

    pub fn band(&self, b: usize) -> std::ops::Range<usize> {
        self.edges[b]..self.edges[b + 1]
    }

    pub fn pool_into(&self, bins: &[f64], out: &mut Vec<f64>) {
        for b in 0..self.num_bands() {
            let r = self.band(b);
            let n = r.len() as f64;
            out.push(bins[r].iter().sum::<f64>() / n);
        }
    }
}

/// The `N × l × d` feature slab and `P × l × B` phase slab around one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateWindow {
    /// Row-major channel, frame offset, feature.
    pub x: Vec<f64>,
    /// Row-major pair, frame offset, band. Empty when phase is not used.
    pub pd: Vec<f64>,
    pub center_frame: usize,
    pub num_channels: usize,
    pub len: usize,
    pub dim: usize,
    pub num_pairs: usize,
    pub num_bands: usize,
}

impl CandidateWindow {
    pub fn cell(&self, channel: usize, offset: usize) -> &[f64] {
        let start = (channel * self.len + offset) * self.dim;
        &self.x[start..start + self.dim]
    }
}

/// Source frame for offset `j` of a window of length `len` centred on `t`,
/// replicating the edge frames.
#[inline]
pub fn window_source_frame(t: usize, j: usize, len: usize, num_frames: usize) -> usize {
    let half = len / 2;
    (t + j).saturating_sub(half).min(num_frames - 1)
}

/// Builds candidate windows against a pre-pooled phase tensor.
pub struct CandidateBuilder<'a> {
    features: &'a FeatureTensor,
    pooled: Option<Cow<'a, PhaseDiffTensor>>,
    len: usize,
}

impl<'a> CandidateBuilder<'a> {
    pub fn new(
        features: &'a FeatureTensor,
        pd: Option<&PhaseDiffTensor>,
        len: usize,
        pooling: Option<&BandPooling>,
    ) -> Result<Self, FeatureError> {
        if len.is_multiple_of(2) {
            return Err(FeatureError::EvenWindow(len));
        }
        let pooled = match (pd, pooling) {
            (Some(pd), Some(pool)) => Some(Cow::Owned(pd.pool(pool)?)),
            (Some(pd), None) => Some(Cow::Owned(pd.clone())),
            (None, _) => None,
        };
        Ok(Self {
            features,
            pooled,
            len,
        })
    }

    /// Uses `pooled` as-is (already `T × P × B`).
    pub fn with_pooled(
        features: &'a FeatureTensor,
        pooled: Option<&'a PhaseDiffTensor>,
        len: usize,
    ) -> Result<Self, FeatureError> {
        if len.is_multiple_of(2) {
            return Err(FeatureError::EvenWindow(len));
        }
        Ok(Self {
            features,
            pooled: pooled.map(Cow::Borrowed),
            len,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.features.num_frames()
    }

    pub fn window(&self, t: usize) -> Result<CandidateWindow, FeatureError> {
        let frames = self.features.num_frames();
        if t >= frames {
            return Err(FeatureError::FrameOutOfRange { t, frames });
        }
        let n = self.features.num_channels();
        let d = self.features.dim();
        let l = self.len;
        let mut x = Vec::with_capacity(n * l * d);
        for ch in 0..n {
            for j in 0..l {
                x.extend_from_slice(self.features.frame(window_source_frame(t, j, l, frames), ch));
            }
        }
        let (pd, num_pairs, num_bands) = match &self.pooled {
            Some(p) => {
                let pf = p.num_frames();
                let mut v = Vec::with_capacity(p.num_pairs() * l * p.num_bins());
                for pair in 0..p.num_pairs() {
                    for j in 0..l {
                        v.extend_from_slice(p.frame(window_source_frame(t, j, l, pf), pair));
                    }
                }
                (v, p.num_pairs(), p.num_bins())
            }
            None => (Vec::new(), 0, 0),
        };
        Ok(CandidateWindow {
            x,
            pd,
            center_frame: t,
            num_channels: n,
            len: l,
            dim: d,
            num_pairs,
            num_bands,
        })
    }
}

/// One-shot candidate extraction; pools `pd` with `pooling` when given.
pub fn build_candidate(
    features: &FeatureTensor,
    pd: Option<&PhaseDiffTensor>,
    t: usize,
    len: usize,
    pooling: Option<&BandPooling>,
) -> Result<CandidateWindow, FeatureError> {
    CandidateBuilder::new(features, pd, len, pooling)?.window(t)
}
