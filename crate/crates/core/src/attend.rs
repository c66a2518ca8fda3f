//! Time-channel attention over a candidate window.
//!
//! The energy MLP is a single affine layer followed by `tanh`; its inputs are
//! flattened row-major (channel, then frame offset, then feature/band), and
//! every weight matrix is stored fan-in × fan-out so that
//! `E = tanh(s W_s + vec(A_prev) W_a + vec(PD_c) W_p + vec(X_c) W_x + b)`.

use crate::features::CandidateWindow;
use crate::linalg::{softmax_into, Matrix};

/// Trainable attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `H × (N·l)`.
    pub w_s: Matrix,
    /// `(N·l) × (N·l)`.
    pub w_a: Matrix,
    /// `(P·l·B) × (N·l)`; absent when phase is not fed to the attention.
    pub w_p: Option<Matrix>,
    /// `(N·l·d) × (N·l)`.
    pub w_x: Matrix,
    /// `N·l`.
    pub b: Vec<f64>,
    num_channels: usize,
    len: usize,
}

impl AttentionParams {
    pub fn zeros(
        num_channels: usize,
        len: usize,
        dim: usize,
        hidden: usize,
        phase_inputs: Option<usize>,
    ) -> Self {
        let cells = num_channels * len;
        Self {
            w_s: Matrix::zeros(hidden, cells),
            w_a: Matrix::zeros(cells, cells),
            w_p: phase_inputs.map(|p| Matrix::zeros(p, cells)),
            w_x: Matrix::zeros(cells * dim, cells),
            b: vec![0.0; cells],
            num_channels,
            len,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.cells() == 0
    }

    pub fn cells(&self) -> usize {
        self.num_channels * self.len
    }

    pub fn hidden(&self) -> usize {
        self.w_s.rows()
    }

    pub fn dim(&self) -> usize {
        self.w_x.rows() / self.cells()
    }

    fn check_window(&self, s_prev: &[f64], a_prev: &AttentionMatrix, window: &CandidateWindow) {
        let cells = self.cells();
        assert_eq!(
            (window.num_channels, window.len),
            (self.num_channels, self.len),
            "candidate window (channels, frames) vs attention params"
        );
        assert_eq!(
            s_prev.len(),
            self.hidden(),
            "decoder state length vs W_s rows"
        );
        assert_eq!(
            a_prev.values().len(),
            cells,
            "previous attention size vs N·l"
        );
        assert_eq!(window.x.len(), self.w_x.rows(), "vec(X_c) length vs W_x rows");
        if let Some(w_p) = &self.w_p {
            assert_eq!(window.pd.len(), w_p.rows(), "vec(PD_c) length vs W_p rows");
        }
    }
}

/// `N × l` pre-softmax scores, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// `N × l` nonnegative weights summing to one over time and channel jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl AttentionMatrix {
    pub fn uniform(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, channel: usize, offset: usize) -> f64 {
        self.values[channel * self.cols + offset]
    }

    /// Total weight placed on `channel` across all frame offsets.
    pub fn channel_mass(&self, channel: usize) -> f64 {
        self.values[channel * self.cols..(channel + 1) * self.cols]
            .iter()
            .sum()
    }
}

pub fn energy(
    s_prev: &[f64],
    a_prev: &AttentionMatrix,
    window: &CandidateWindow,
    params: &AttentionParams,
) -> EnergyMatrix {
    params.check_window(s_prev, a_prev, window);
    let mut z = params.b.clone();
    params.w_s.accumulate_vec_mul(s_prev, &mut z);
    params.w_a.accumulate_vec_mul(a_prev.values(), &mut z);
    if let Some(w_p) = &params.w_p {
        w_p.accumulate_vec_mul(&window.pd, &mut z);
    }
    params.w_x.accumulate_vec_mul(&window.x, &mut z);
    z.iter_mut().for_each(|v| *v = v.tanh());
    EnergyMatrix {
        rows: params.num_channels,
        cols: params.len,
        values: z,
    }
}

/// Joint max-subtracted softmax over all `N·l` cells.
pub fn normalize(e: &EnergyMatrix) -> AttentionMatrix {
    let mut values = vec![0.0; e.values.len()];
    softmax_into(&e.values, &mut values);
    debug_assert!(values.iter().all(|&a| a >= 0.0));
    debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    AttentionMatrix {
        rows: e.rows,
        cols: e.cols,
        values,
    }
}

/// `out[i, j, :] = A[i, j] · X_c[i, j, :]`, no reduction over cells.
pub fn reweight(a: &AttentionMatrix, window: &CandidateWindow) -> Vec<f64> {
    assert_eq!(
        (a.rows, a.cols),
        (window.num_channels, window.len),
        "attention shape vs candidate window"
    );
    let d = window.dim;
    let mut out = Vec::with_capacity(window.x.len());
    for (cell, &w) in a.values.iter().enumerate() {
        out.extend(window.x[cell * d..(cell + 1) * d].iter().map(|x| w * x));
    }
    out
}

/// One attention step; returns the attention matrix and the flattened
/// re-weighted slab fed to the acoustic model.
pub fn attend_step(
    s_prev: &[f64],
    a_prev: &AttentionMatrix,
    window: &CandidateWindow,
    params: &AttentionParams,
) -> (AttentionMatrix, Vec<f64>) {
    let e = energy(s_prev, a_prev, window, params);
    let a = normalize(&e);
    let x_hat = reweight(&a, window);
    (a, x_hat)
}
