//! Multi-channel acoustic modelling with time-channel attention.
//!
//! A candidate window of `l` frames from each of `N` microphones is scored by
//! a small attention MLP, normalized jointly over time and channel, and used
//! to re-weight the window before it reaches a peephole-free LSTM frame
//! classifier. The crate also generates synthetic multi-microphone scenes,
//! extracts log-filterbank and phase-difference features, trains the model
//! end to end and runs the baseline comparisons.

pub mod acoustic;
pub mod attend;
pub mod audio;
pub mod cache;
pub mod features;
pub mod harness;
pub mod learn;
pub mod linalg;
pub mod params;
pub mod scene;

pub use acoustic::{forward_utterance, predict_labels, ForwardTrace, LstmParams, LstmState, ModelInput};
pub use attend::{attend_step, AttentionMatrix, AttentionParams, EnergyMatrix};
pub use features::{CandidateWindow, FeatureTensor, PhaseDiffTensor, Spectrogram};
pub use learn::{Dataset, LabeledUtterance, TrainConfig};
pub use linalg::Matrix;
pub use params::{AttentionMode, GradientSet, ModelParams, ModelShape};
pub use scene::{MultiChannelWaveform, NoiseSegment, SceneConfig};
