//! Bias-free, peephole-free LSTM acoustic model with a softmax output layer,
//! and the full attention + LSTM forward pass over an utterance.
//!
//! The recurrent input of every gate is the block output `s_{t-1}`; the same
//! vector conditions the next attention step.

use crate::attend::{energy, normalize, reweight, AttentionMatrix};
use crate::features::{CandidateBuilder, FeatureError, FeatureTensor, PhaseDiffTensor};
use crate::linalg::{sigmoid, softmax_into, Matrix};
use crate::params::ModelParams;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_xi: Matrix,
    pub w_xf: Matrix,
    pub w_xc: Matrix,
    pub w_xo: Matrix,
    pub w_hi: Matrix,
    pub w_hf: Matrix,
    pub w_hc: Matrix,
    pub w_ho: Matrix,
    /// `H × K`.
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize, num_classes: usize) -> Self {
        let x = || Matrix::zeros(input_dim, hidden);
        let h = || Matrix::zeros(hidden, hidden);
        Self {
            w_xi: x(),
            w_xf: x(),
            w_xc: x(),
            w_xo: x(),
            w_hi: h(),
            w_hf: h(),
            w_hc: h(),
            w_ho: h(),
            w_out: Matrix::zeros(hidden, num_classes),
            b_out: vec![0.0; num_classes],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_hi.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.b_out.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub s: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            c: vec![0.0; hidden],
            s: vec![0.0; hidden],
        }
    }
}

/// Gate activations of one step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGates {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    /// `tanh` candidate.
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

pub fn lstm_step_with_gates(
    x_hat: &[f64],
    state: &LstmState,
    params: &LstmParams,
) -> (LstmState, LstmGates) {
    let h = params.hidden();
    let pre = |wx: &Matrix, wh: &Matrix| {
        let mut z = vec![0.0; h];
        wx.accumulate_vec_mul(x_hat, &mut z);
        wh.accumulate_vec_mul(&state.s, &mut z);
        z
    };
    let mut i = pre(&params.w_xi, &params.w_hi);
    let mut f = pre(&params.w_xf, &params.w_hf);
    let mut g = pre(&params.w_xc, &params.w_hc);
    let mut o = pre(&params.w_xo, &params.w_ho);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    let c: Vec<f64> = (0..h).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let s = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    (
        LstmState { c, s },
        LstmGates {
            i,
            f,
            g,
            o,
            tanh_c,
        },
    )
}

pub fn lstm_step(x_hat: &[f64], state: &LstmState, params: &LstmParams) -> LstmState {
    lstm_step_with_gates(x_hat, state, params).0
}

/// `softmax(s W_out + b_out)`.
pub fn output_probs(s: &[f64], params: &LstmParams) -> Vec<f64> {
    let mut logits = params.b_out.clone();
    params.w_out.accumulate_vec_mul(s, &mut logits);
    let mut p = vec![0.0; logits.len()];
    softmax_into(&logits, &mut p);
    p
}

/// Per-frame argmax; ties go to the lowest class index.
pub fn predict_labels(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows())
        .map(|t| {
            let row = probs.row(t);
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Features of one utterance. `phase`, when present, is already pooled to the
/// model's band count.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub features: FeatureTensor,
    pub phase: Option<PhaseDiffTensor>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("input has {actual:?} (frames, channels, dim); model expects channels={channels}, dim={dim}")]
    FeatureShape {
        actual: [usize; 3],
        channels: usize,
        dim: usize,
    },
    #[error("model uses phase but the input carries none")]
    MissingPhase,
    #[error("phase tensor is {actual:?} (frames, pairs, bands); expected {expected:?}")]
    PhaseShape {
        actual: [usize; 3],
        expected: [usize; 3],
    },
    #[error("utterance has no frames")]
    Empty,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `T × K`.
    pub probs: Matrix,
    pub attention: Vec<AttentionMatrix>,
    pub states: Vec<LstmState>,
}

/// Everything one step needs on the way back.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub pd: Vec<f64>,
    pub energy: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub gates: LstmGates,
}

pub(crate) fn check_input(input: &ModelInput, params: &ModelParams) -> Result<(), ModelError> {
    let shape = &params.shape;
    let f = &input.features;
    if f.num_channels() != shape.num_channels || f.dim() != shape.feat_dim {
        return Err(ModelError::FeatureShape {
            actual: f.dims(),
            channels: shape.num_channels,
            dim: shape.feat_dim,
        });
    }
    if f.num_frames() == 0 {
        return Err(ModelError::Empty);
    }
    if shape.uses_phase() {
        let pd = input.phase.as_ref().ok_or(ModelError::MissingPhase)?;
        let expected = [f.num_frames(), shape.num_pairs(), shape.num_bands];
        if pd.dims() != expected {
            return Err(ModelError::PhaseShape {
                actual: pd.dims(),
                expected,
            });
        }
    }
    Ok(())
}

pub(crate) fn run_forward(
    input: &ModelInput,
    params: &ModelParams,
    keep_cache: bool,
) -> Result<(ForwardTrace, Vec<StepCache>), ModelError> {
    check_input(input, params)?;
    let shape = params.shape;
    let phase = if shape.uses_phase() {
        input.phase.as_ref()
    } else {
        None
    };
    let builder = CandidateBuilder::with_pooled(&input.features, phase, shape.window_len)?;
    let frames = builder.num_frames();
    let k = shape.num_classes;
    let uniform = AttentionMatrix::uniform(shape.num_channels, shape.window_len);

    let mut probs = Matrix::zeros(frames, k);
    let mut attention = Vec::with_capacity(frames);
    let mut states = Vec::with_capacity(frames);
    let mut caches = Vec::with_capacity(if keep_cache { frames } else { 0 });

    let mut state = LstmState::zeros(shape.hidden);
    let mut a_prev = uniform.clone();
    for t in 0..frames {
        let window = builder.window(t)?;
        let (a, x_hat, e) = match &params.attention {
            None => {
                let x_hat = reweight(&uniform, &window);
                (uniform.clone(), x_hat, Vec::new())
            }
            Some(ap) => {
                let e = energy(&state.s, &a_prev, &window, ap);
                let a = normalize(&e);
                let x_hat = reweight(&a, &window);
                (a, x_hat, e.values)
            }
        };
        let (next, gates) = lstm_step_with_gates(&x_hat, &state, &params.lstm);
        let p = output_probs(&next.s, &params.lstm);
        probs.as_mut_slice()[t * k..(t + 1) * k].copy_from_slice(&p);
        if keep_cache {
            caches.push(StepCache {
                x: window.x,
                pd: window.pd,
                energy: e,
                x_hat,
                gates,
            });
        }
        state = next;
        states.push(state.clone());
        a_prev = a.clone();
        attention.push(a);
    }
    Ok((
        ForwardTrace {
            probs,
            attention,
            states,
        },
        caches,
    ))
}

/// Runs attention, LSTM and output layer over every frame, starting from
/// `s_0 = c_0 = 0` and uniform `A_0`.
pub fn forward_utterance(input: &ModelInput, params: &ModelParams) -> Result<ForwardTrace, ModelError> {
    run_forward(input, params, false).map(|(trace, _)| trace)
}
