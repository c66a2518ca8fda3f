#![allow(dead_code)]

use alstm_core::acoustic::{forward_utterance, ModelInput};
use alstm_core::features::{FeatureTensor, PhaseDiffTensor};
use alstm_core::learn::cross_entropy;
use alstm_core::params::{AttentionMode, ModelParams, ModelShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_shape() -> ModelShape {
    ModelShape {
        num_channels: 2,
        window_len: 3,
        feat_dim: 4,
        num_bands: 4,
        hidden: 8,
        num_classes: 3,
        attention: AttentionMode::Learned { phase: true },
    }
}

pub fn random_params(shape: ModelShape, scale: f64, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(shape);
    for t in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    p
}

pub fn random_input(shape: &ModelShape, frames: usize, seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.num_channels;
    let d = shape.feat_dim;
    let features = FeatureTensor::new(
        frames,
        n,
        d,
        (0..frames * n * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
    );
    let phase = shape.uses_phase().then(|| {
        let p = shape.num_pairs();
        let b = shape.num_bands;
        PhaseDiffTensor::new(
            frames,
            p,
            b,
            (0..frames * p * b)
                .map(|_| rng.random_range(0.0..std::f64::consts::PI))
                .collect(),
        )
    });
    ModelInput { features, phase }
}

pub fn loss(input: &ModelInput, labels: &[usize], params: &ModelParams) -> f64 {
    let trace = forward_utterance(input, params).unwrap();
    cross_entropy(&trace.probs, labels).unwrap()
}

/// Worst relative error per block between `analytic` and central differences.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn finite_difference_check(
    input: &ModelInput,
    labels: &[usize],
    params: &ModelParams,
    analytic: &ModelParams,
    h: f64,
) -> Vec<(&'static str, f64)> {
    let mut work = params.clone();
    let blocks: Vec<(&'static str, Vec<f64>)> = analytic
        .tensors()
        .iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();
    let mut out = Vec::new();
    for (bi, (name, grad)) in blocks.iter().enumerate() {
        let mut worst = 0.0f64;
        for (k, &a) in grad.iter().enumerate() {
            let orig = work.tensors()[bi].data[k];
            work.tensors_mut()[bi].data[k] = orig + h;
            let up = loss(input, labels, &work);
            work.tensors_mut()[bi].data[k] = orig - h;
            let down = loss(input, labels, &work);
            work.tensors_mut()[bi].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((*name, worst));
    }
    out
}
