//! Cross-entropy training with exact reverse-mode gradients through both
//! recurrences (LSTM state and attention history), global-norm clipping and
//! plain SGD.

use crate::acoustic::{predict_labels, run_forward, ModelError, ModelInput};
use crate::attend::AttentionMatrix;
use crate::linalg::Matrix;
use crate::params::{GradientSet, ModelParams, ModelShape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;


/// Probabilities are floored here inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("dataset has no {0} utterances")]
    EmptySplit(&'static str),
    #[error("frame {frame}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        frame: usize,
        label: usize,
        classes: usize,
    },
    #[error("{labels} labels for {frames} frames")]
    LabelCount { labels: usize, frames: usize },
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("loss diverged (non-finite) at epoch {epoch}, utterance {utterance}")]
    Diverged { epoch: usize, utterance: usize },
    #[error("non-finite gradient in block {block}")]
    NonFiniteGradient { block: &'static str },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl TrainError {
    /// Numerical failures, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::Diverged { .. } | TrainError::NonFiniteGradient { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied once per epoch after `decay_after` epochs.
    pub decay_factor: f64,
    pub decay_after: usize,
    pub clip_norm: f64,
    pub epochs: usize,
    /// Weights start uniform in `(-init_range, init_range)`.
    pub init_range: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.4,
            decay_factor: 0.5,
            decay_after: 2,
            clip_norm: 1.0,
            epochs: 6,
            init_range: 0.03,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite nonnegative number");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return bad("decay_factor must be positive");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if !(self.init_range > 0.0 && self.init_range.is_finite()) {
            return bad("init_range must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = epoch.saturating_sub(self.decay_after);
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

/// Every weight i.i.d. uniform in the open interval `(-init_range, init_range)`.
pub fn init_params(shape: ModelShape, config: &TrainConfig) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let r = config.init_range;
    let mut params = ModelParams::zeros(shape);
    for t in params.tensors_mut() {
        for v in t.data.iter_mut() {
            *v = loop {
                let x = rng.random_range(-r..r);
                if x != -r {
                    break x;
                }
            };
        }
    }
    params
}

/// Mean per-frame negative log-likelihood.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64, TrainError> {
    check_labels(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(t, &y)| -probs.get(t, y).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

fn check_labels(probs: &Matrix, labels: &[usize]) -> Result<(), TrainError> {
    if labels.len() != probs.rows() {
        return Err(TrainError::LabelCount {
            labels: labels.len(),
            frames: probs.rows(),
        });
    }
    if let Some((frame, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= probs.cols()) {
        return Err(TrainError::LabelOutOfRange {
            frame,
            label,
            classes: probs.cols(),
        });
    }
    Ok(())
}

pub fn frame_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, TrainError> {
    if preds.len() != labels.len() {
        return Err(TrainError::LengthMismatch(preds.len(), labels.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Loss and exact gradients for one utterance.
pub fn backward(
    input: &ModelInput,
    labels: &[usize],
    params: &ModelParams,
) -> Result<(f64, GradientSet), TrainError> {
    let shape = params.shape;
    let (trace, caches) = run_forward(input, params, true)?;
    let loss = cross_entropy(&trace.probs, labels)?;
    let frames = labels.len();
    let h = shape.hidden;
    let k = shape.num_classes;
    let cells = shape.cells();
    let d = shape.feat_dim;
    let inv_t = 1.0 / frames as f64;
    let uniform = AttentionMatrix::uniform(shape.num_channels, shape.window_len);

    let mut grads = ModelParams::zeros(shape);
    let lstm = &params.lstm;

    let mut ds_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da_next = vec![0.0; cells];
    let zeros_h = vec![0.0; h];
    let mut dlogits = vec![0.0; k];
    let mut dx_hat = vec![0.0; shape.input_dim()];

    for t in (0..frames).rev() {
        let cache = &caches[t];
        let gates = &cache.gates;
        let state = &trace.states[t];
        let (s_prev, c_prev) = if t > 0 {
            (&trace.states[t - 1].s, &trace.states[t - 1].c)
        } else {
            (&zeros_h, &zeros_h)
        };

        // Output layer.
        let p = trace.probs.row(t);
        let y = labels[t];
        if p[y] > PROB_FLOOR {
            for (j, dl) in dlogits.iter_mut().enumerate() {
                *dl = (p[j] - if j == y { 1.0 } else { 0.0 }) * inv_t;
            }
        } else {
            dlogits.fill(0.0);
        }
        grads.lstm.w_out.add_outer(&state.s, &dlogits);
        for (b, dl) in grads.lstm.b_out.iter_mut().zip(&dlogits) {
            *b += dl;
        }
        let mut ds = ds_next.clone();
        lstm.w_out.accumulate_mul_vec(&dlogits, &mut ds);

        // LSTM cell.
        let mut dz_i = vec![0.0; h];
        let mut dz_f = vec![0.0; h];
        let mut dz_g = vec![0.0; h];
        let mut dz_o = vec![0.0; h];
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o, tc) = (gates.i[j], gates.f[j], gates.g[j], gates.o[j], gates.tanh_c[j]);
            let d_o = ds[j] * tc;
            let dc = dc_next[j] + ds[j] * o * (1.0 - tc * tc);
            dz_f[j] = dc * c_prev[j] * f * (1.0 - f);
            dz_i[j] = dc * g * i * (1.0 - i);
            dz_g[j] = dc * i * (1.0 - g * g);
            dz_o[j] = d_o * o * (1.0 - o);
            dc_prev[j] = dc * f;
        }
        let gl = &mut grads.lstm;
        gl.w_xi.add_outer(&cache.x_hat, &dz_i);
        gl.w_xf.add_outer(&cache.x_hat, &dz_f);
        gl.w_xc.add_outer(&cache.x_hat, &dz_g);
        gl.w_xo.add_outer(&cache.x_hat, &dz_o);
        gl.w_hi.add_outer(s_prev, &dz_i);
        gl.w_hf.add_outer(s_prev, &dz_f);
        gl.w_hc.add_outer(s_prev, &dz_g);
        gl.w_ho.add_outer(s_prev, &dz_o);
        let mut ds_prev = vec![0.0; h];
        lstm.w_hi.accumulate_mul_vec(&dz_i, &mut ds_prev);
        lstm.w_hf.accumulate_mul_vec(&dz_f, &mut ds_prev);
        lstm.w_hc.accumulate_mul_vec(&dz_g, &mut ds_prev);
        lstm.w_ho.accumulate_mul_vec(&dz_o, &mut ds_prev);

        // Attention.
        if let (Some(ap), Some(ga)) = (&params.attention, grads.attention.as_mut()) {
            dx_hat.fill(0.0);
            lstm.w_xi.accumulate_mul_vec(&dz_i, &mut dx_hat);
            lstm.w_xf.accumulate_mul_vec(&dz_f, &mut dx_hat);
            lstm.w_xc.accumulate_mul_vec(&dz_g, &mut dx_hat);
            lstm.w_xo.accumulate_mul_vec(&dz_o, &mut dx_hat);
            let a = trace.attention[t].values();
            let a_prev = if t > 0 {
                trace.attention[t - 1].values()
            } else {
                uniform.values()
            };
            let mut da: Vec<f64> = (0..cells)
                .map(|c| {
                    let r = c * d..(c + 1) * d;
                    crate::linalg::dot(&dx_hat[r.clone()], &cache.x[r]) + da_next[c]
                })
                .collect();
            let weighted: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
            for c in 0..cells {
                let e = cache.energy[c];
                da[c] = a[c] * (da[c] - weighted) * (1.0 - e * e);
            }
            let dz = da;
            ga.w_s.add_outer(s_prev, &dz);
            ap.w_s.accumulate_mul_vec(&dz, &mut ds_prev);
            ga.w_a.add_outer(a_prev, &dz);
            let mut da_prev = vec![0.0; cells];
            ap.w_a.accumulate_mul_vec(&dz, &mut da_prev);
            if let (Some(gp), Some(_)) = (ga.w_p.as_mut(), ap.w_p.as_ref()) {
                gp.add_outer(&cache.pd, &dz);
            }
            ga.w_x.add_outer(&cache.x, &dz);
            for (b, g) in ga.b.iter_mut().zip(&dz) {
                *b += g;
            }
            da_next = da_prev;
        }
        ds_next = ds_prev;
        dc_next = dc_prev;
    }

    if let Some(block) = grads.first_non_finite() {
        return Err(TrainError::NonFiniteGradient { block });
    }
    Ok((loss, grads))
}

/// Summed loss and gradients over several utterances, reduced in index order.
pub fn batch_backward(
    batch: &[(&ModelInput, &[usize])],
    params: &ModelParams,
) -> Result<(f64, GradientSet), TrainError> {
    let mut total = ModelParams::zeros(params.shape);
    let mut loss = 0.0;
    for (input, labels) in batch {
        let (l, g) = backward(input, labels, params)?;
        loss += l;
        total.add_scaled(1.0, &g);
    }
    Ok((loss, total))
}

/// Rescales `grads` to have global L2 norm at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut GradientSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: &mut ModelParams, grads: &GradientSet, lr: f64) {
    params.add_scaled(-lr, grads);
}

/// A labelled utterance with its ground-truth reliable-channel trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub input: ModelInput,
    pub labels: Vec<usize>,
    pub clean_channel: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledUtterance>,
    pub dev: Vec<LabeledUtterance>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_frame_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev frame accuracy.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Shuffling generator after the last epoch.
    pub rng: ChaCha8Rng,
}

/// Frame-level evaluation over a set of utterances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub frame_accuracy: f64,
    pub loss: f64,
    pub frames: usize,
    /// Mean attention mass on the scheduled reliable channel, for learned attention.
    pub clean_channel_mass: Option<f64>,
}

pub fn evaluate(params: &ModelParams, utts: &[LabeledUtterance]) -> Result<Evaluation, TrainError> {
    let mut hits = 0usize;
    let mut frames = 0usize;
    let mut loss = 0.0;
    let mut mass = 0.0;
    for u in utts {
        let (trace, _) = run_forward(&u.input, params, false)?;
        loss += cross_entropy(&trace.probs, &u.labels)? * u.labels.len() as f64;
        let preds = predict_labels(&trace.probs);
        hits += preds.iter().zip(&u.labels).filter(|(p, l)| p == l).count();
        frames += u.labels.len();
        if params.attention.is_some() {
            mass += clean_channel_mass_sum(&trace.attention, &u.clean_channel);
        }
    }
    let n = frames.max(1) as f64;
    Ok(Evaluation {
        frame_accuracy: hits as f64 / n,
        loss: loss / n,
        frames,
        clean_channel_mass: params.attention.as_ref().map(|_| mass / n),
    })
}

/// `Σ_t Σ_j A_t[clean_t, j]`.
pub fn clean_channel_mass_sum(attention: &[AttentionMatrix], clean: &[usize]) -> f64 {
    attention
        .iter()
        .zip(clean)
        .map(|(a, &c)| a.channel_mass(c))
        .sum()
}

pub fn train(
    dataset: &Dataset,
    shape: ModelShape,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with(dataset, shape, config, |_| {})
}

/// [`train`] with a per-epoch callback.
pub fn train_with(
    dataset: &Dataset,
    shape: ModelShape,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dataset.dev.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    let mut params = init_params(shape, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    for epoch in 1..=config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &u in &order {
            let utt = &dataset.train[u];
            let (loss, mut grads) = backward(&utt.input, &utt.labels, &params)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, utterance: u });
            }
            clip_gradients(&mut grads, config.clip_norm);
            sgd_step(&mut params, &grads, lr);
            loss_sum += loss;
        }
        let dev = evaluate(&params, &dataset.dev)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            dev_frame_accuracy: dev.frame_accuracy,
            learning_rate: lr,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(acc, _, _)| dev.frame_accuracy > *acc) {
            best = Some((dev.frame_accuracy, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
        rng,
    })
}

/// `epoch,train_loss,dev_frame_accuracy,learning_rate` with a header row.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,dev_frame_accuracy,learning_rate\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e}\n",
            r.epoch, r.train_loss, r.dev_frame_accuracy, r.learning_rate
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureTensor, PhaseDiffTensor};
    use crate::params::AttentionMode;
    use proptest::prelude::*;

    fn tiny_shape() -> ModelShape {
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

    fn tiny_input(frames: usize, seed: u64) -> ModelInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelInput {
            features: FeatureTensor::new(
                frames,
                2,
                4,
                (0..frames * 8).map(|_| rng.random_range(-1.0..1.0)).collect(),
            ),
            phase: Some(PhaseDiffTensor::new(
                frames,
                1,
                4,
                (0..frames * 4).map(|_| rng.random_range(0.0..3.0)).collect(),
            )),
        }
    }

    #[test]
    fn init_is_strictly_inside_range_and_seeded() {
        let cfg = TrainConfig::default();
        let shape = ModelShape {
            num_channels: 5,
            window_len: 7,
            feat_dim: 40,
            num_bands: 40,
            hidden: 16,
            num_classes: 10,
            attention: AttentionMode::Learned { phase: true },
        };
        let a = init_params(shape, &cfg);
        let b = init_params(shape, &cfg);
        assert_eq!(a, b);
        let flat = a.flatten();
        assert!(flat.len() > 100_000);
        assert!(flat.iter().all(|v| v.abs() < 0.03));
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        assert!(mean.abs() < 0.001, "mean {mean}");
    }

    #[test]
    fn cross_entropy_cases() {
        let perfect = Matrix::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(cross_entropy(&perfect, &[0, 2]).unwrap(), 0.0);
        let uniform = Matrix::from_vec(2, 4, vec![0.25; 8]);
        assert!((cross_entropy(&uniform, &[1, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let hand = Matrix::from_vec(2, 3, vec![0.5, 0.3, 0.2, 0.5, 0.25, 0.25]);
        let l = cross_entropy(&hand, &[0, 1]).unwrap();
        assert!((l - (-(0.5f64.ln()) - 0.25f64.ln()) / 2.0).abs() < 1e-15);
        assert!((l - 1.0397).abs() < 1e-4);
        assert!(matches!(
            cross_entropy(&hand, &[0, 3]),
            Err(TrainError::LabelOutOfRange { frame: 1, label: 3, .. })
        ));
        let floored = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        assert!((cross_entropy(&floored, &[1]).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn frame_accuracy_cases() {
        assert_eq!(frame_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(frame_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(frame_accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]).unwrap(), 0.5);
        assert!(frame_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn zero_model_single_frame_only_moves_the_output_bias() {
        let p = ModelParams::zeros(tiny_shape());
        let (_, g) = backward(&tiny_input(1, 2), &[1], &p).unwrap();
        assert!(g.lstm.b_out.iter().any(|&v| v != 0.0));
        for t in g.tensors() {
            if t.name != "output.b_out" {
                assert!(t.data.iter().all(|&v| v == 0.0), "{}", t.name);
            }
        }
    }

    #[test]
    fn duplicated_utterance_doubles_gradients() {
        let p = init_params(tiny_shape(), &TrainConfig { init_range: 0.5, ..Default::default() });
        let input = tiny_input(5, 3);
        let labels = [0, 1, 2, 2, 1];
        let (l1, g1) = backward(&input, &labels, &p).unwrap();
        let (l2, g2) = batch_backward(&[(&input, &labels), (&input, &labels)], &p).unwrap();
        assert_eq!(l2, 2.0 * l1);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn clipping_cases() {
        let shape = ModelShape {
            attention: AttentionMode::Uniform,
            ..tiny_shape()
        };
        let mut g = ModelParams::zeros(shape);
        g.lstm.b_out[0] = 0.3;
        g.lstm.b_out[1] = 0.4;
        let before = g.clone();
        assert!((clip_gradients(&mut g, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(g, before);
        g.lstm.b_out[0] = 3.0;
        g.lstm.b_out[1] = 4.0;
        clip_gradients(&mut g, 1.0);
        assert!((g.lstm.b_out[0] - 0.6).abs() < 1e-15);
        assert!((g.lstm.b_out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_cases() {
        let shape = ModelShape {
            attention: AttentionMode::Uniform,
            ..tiny_shape()
        };
        let mut p = init_params(shape, &TrainConfig::default());
        let orig = p.clone();
        sgd_step(&mut p, &ModelParams::zeros(shape), 0.4);
        assert_eq!(p, orig);
        let mut g = ModelParams::zeros(shape);
        g.lstm.b_out[0] = 0.5;
        sgd_step(&mut p, &g, 0.0);
        assert_eq!(p, orig);
        p.lstm.b_out[0] = 1.0;
        sgd_step(&mut p, &g, 0.4);
        assert!((p.lstm.b_out[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        let lrs: Vec<f64> = (1..=5).map(|e| c.learning_rate_at(e)).collect();
        assert_eq!(lrs, vec![0.4, 0.4, 0.2, 0.1, 0.05]);
    }

    fn utt(frames: usize, seed: u64) -> LabeledUtterance {
        LabeledUtterance {
            input: tiny_input(frames, seed),
            labels: (0..frames).map(|t| (t / 2) % 3).collect(),
            clean_channel: vec![0; frames],
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let data = Dataset {
            train: vec![utt(6, 1)],
            dev: vec![utt(4, 2)],
        };
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..Default::default()
        };
        let out = train(&data, tiny_shape(), &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.params, init_params(tiny_shape(), &cfg));
    }

    #[test]
    fn training_is_deterministic() {
        let data = Dataset {
            train: (0..4).map(|s| utt(8, s)).collect(),
            dev: vec![utt(6, 9)],
        };
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let a = train(&data, tiny_shape(), &cfg).unwrap();
        let b = train(&data, tiny_shape(), &cfg).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let data = Dataset {
            train: vec![],
            dev: vec![utt(4, 2)],
        };
        assert_eq!(
            train(&data, tiny_shape(), &TrainConfig::default()).unwrap_err(),
            TrainError::EmptySplit("train")
        );
    }

    proptest! {
        #[test]
        fn clipping_preserves_direction(vals in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let shape = ModelShape { attention: AttentionMode::Uniform, ..tiny_shape() };
            let mut g = ModelParams::zeros(shape);
            g.lstm.b_out.copy_from_slice(&vals);
            let before = g.flatten();
            clip_gradients(&mut g, 1.0);
            let after = g.flatten();
            prop_assert!(g.global_norm() <= 1.0 + 1e-12);
            let na = before.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = after.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na > 0.0 {
                let cos = before.iter().zip(&after).map(|(a, b)| a * b).sum::<f64>() / (na * nb);
                prop_assert!((cos - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn cross_entropy_is_nonnegative(raw in proptest::collection::vec(0.0f64..1.0, 12), y in proptest::collection::vec(0usize..4, 3)) {
            let mut m = Matrix::from_vec(3, 4, raw);
            for t in 0..3 {
                let s: f64 = m.row(t).iter().sum::<f64>().max(1e-9);
                for k in 0..4 { let v = m.get(t, k) / s; m.set(t, k, v); }
            }
            prop_assert!(cross_entropy(&m, &y).unwrap() >= 0.0);
        }
    }
}
