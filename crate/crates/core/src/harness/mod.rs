//! Experiment orchestration: configs, cached datasets, training runs,
//! checkpoints and comparison tables.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod experiment;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, RngState};
pub use compare::{compare, CompareRow, CompareTable};
pub use config::{ConfigError, ExperimentConfig, NoisePlan, SceneTemplate, Variant};
pub use experiment::{
    evaluate_run, featurize_dir, generate_scenes, prepare_data, run_experiment, run_experiment_with,
    PreparedData, RunSummary, Timing,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("scene: {0}")]
    Scene(#[from] crate::scene::SceneError),
    #[error("features: {0}")]
    Feature(#[from] crate::features::FeatureError),
    #[error("acoustic: {0}")]
    Model(#[from] crate::acoustic::ModelError),
    #[error("learn: {0}")]
    Train(#[from] crate::learn::TrainError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("cache {path}: {source}")]
    Cache {
        path: String,
        source: crate::cache::CacheError,
    },
    #[error("audio: {0}")]
    Audio(#[from] crate::audio::AudioError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("summary {path}: {msg}")]
    Summary { path: String, msg: String },
    #[error("compare: {0}")]
    Compare(String),
}

impl HarnessError {
    /// 2 for numerical failures during training, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Train(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| HarnessError::Io { context, source }
    }
}
