//! Model geometry and the addressable parameter container shared by the
//! forward pass, the gradient engine and the checkpoint format.

use crate::acoustic::LstmParams;
use crate::attend::AttentionParams;
use crate::linalg::Matrix;

/// How the candidate window is weighted before entering the LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Constant `1/(N·l)` weights. No attention parameters.
    Uniform,
    /// Trained time-channel attention, optionally fed phase differences.
    Learned { phase: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub num_channels: usize,
    pub window_len: usize,
    pub feat_dim: usize,
    pub num_bands: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub attention: AttentionMode,
}

impl ModelShape {
    pub fn num_pairs(&self) -> usize {
        self.num_channels * self.num_channels.saturating_sub(1) / 2
    }

    pub fn cells(&self) -> usize {
        self.num_channels * self.window_len
    }

    /// Length of the re-weighted vector consumed by the LSTM.
    pub fn input_dim(&self) -> usize {
        self.cells() * self.feat_dim
    }

    pub fn phase_inputs(&self) -> usize {
        self.num_pairs() * self.window_len * self.num_bands
    }

    pub fn uses_phase(&self) -> bool {
        matches!(self.attention, AttentionMode::Learned { phase: true })
    }
}

/// All trainable weights. A [`GradientSet`] has the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub attention: Option<AttentionParams>,
    pub lstm: LstmParams,
}

pub type GradientSet = ModelParams;

/// A borrowed named tensor view.
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let attention = match shape.attention {
            AttentionMode::Uniform => None,
            AttentionMode::Learned { phase } => Some(AttentionParams::zeros(
                shape.num_channels,
                shape.window_len,
                shape.feat_dim,
                shape.hidden,
                phase.then(|| shape.phase_inputs()),
            )),
        };
        Self {
            shape,
            attention,
            lstm: LstmParams::zeros(shape.input_dim(), shape.hidden, shape.num_classes),
        }
    }

    /// Canonical block order: attention (w_s, w_a, w_p, w_x, b), the eight
    /// LSTM matrices, then the output layer.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        fn mat<'a>(name: &'static str, m: &'a Matrix) -> TensorRef<'a> {
            TensorRef {
                name,
                dims: vec![m.rows(), m.cols()],
                data: m.as_slice(),
            }
        }
        let mut out = Vec::with_capacity(15);
        if let Some(a) = &self.attention {
            out.push(mat("attention.w_s", &a.w_s));
            out.push(mat("attention.w_a", &a.w_a));
            if let Some(w_p) = &a.w_p {
                out.push(mat("attention.w_p", w_p));
            }
            out.push(mat("attention.w_x", &a.w_x));
            out.push(TensorRef {
                name: "attention.b",
                dims: vec![a.b.len()],
                data: &a.b,
            });
        }
        let l = &self.lstm;
        for (name, m) in [
            ("lstm.w_xi", &l.w_xi),
            ("lstm.w_xf", &l.w_xf),
            ("lstm.w_xc", &l.w_xc),
            ("lstm.w_xo", &l.w_xo),
            ("lstm.w_hi", &l.w_hi),
            ("lstm.w_hf", &l.w_hf),
            ("lstm.w_hc", &l.w_hc),
            ("lstm.w_ho", &l.w_ho),
            ("output.w_out", &l.w_out),
        ] {
            out.push(mat(name, m));
        }
        out.push(TensorRef {
            name: "output.b_out",
            dims: vec![l.b_out.len()],
            data: &l.b_out,
        });
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        fn mat<'a>(name: &'static str, m: &'a mut Matrix) -> TensorMut<'a> {
            TensorMut {
                name,
                dims: vec![m.rows(), m.cols()],
                data: m.as_mut_slice(),
            }
        }
        let mut out = Vec::with_capacity(15);
        if let Some(a) = &mut self.attention {
            out.push(mat("attention.w_s", &mut a.w_s));
            out.push(mat("attention.w_a", &mut a.w_a));
            if let Some(w_p) = &mut a.w_p {
                out.push(mat("attention.w_p", w_p));
            }
            out.push(mat("attention.w_x", &mut a.w_x));
            out.push(TensorMut {
                name: "attention.b",
                dims: vec![a.b.len()],
                data: &mut a.b,
            });
        }
        let l = &mut self.lstm;
        for (name, m) in [
            ("lstm.w_xi", &mut l.w_xi),
            ("lstm.w_xf", &mut l.w_xf),
            ("lstm.w_xc", &mut l.w_xc),
            ("lstm.w_xo", &mut l.w_xo),
            ("lstm.w_hi", &mut l.w_hi),
            ("lstm.w_hf", &mut l.w_hf),
            ("lstm.w_hc", &mut l.w_hc),
            ("lstm.w_ho", &mut l.w_ho),
            ("output.w_out", &mut l.w_out),
        ] {
            out.push(mat(name, m));
        }
        out.push(TensorMut {
            name: "output.b_out",
            dims: vec![l.b_out.len()],
            data: &mut l.b_out,
        });
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first block containing a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name)
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += alpha * other`; layouts must match.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        assert_eq!(self.shape, other.shape, "parameter layouts differ");
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += alpha * s;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(attention: AttentionMode) -> ModelShape {
        ModelShape {
            num_channels: 5,
            window_len: 7,
            feat_dim: 40,
            num_bands: 40,
            hidden: 64,
            num_classes: 10,
            attention,
        }
    }

    #[test]
    fn block_names_and_sizes() {
        let p = ModelParams::zeros(shape(AttentionMode::Learned { phase: true }));
        let names: Vec<_> = p.tensors().iter().map(|t| t.name).collect();
        assert_eq!(names.len(), 15);
        assert_eq!(names[2], "attention.w_p");
        let dims: Vec<_> = p.tensors().iter().map(|t| t.dims.clone()).collect();
        assert_eq!(dims[0], vec![64, 35]);
        assert_eq!(dims[2], vec![10 * 7 * 40, 35]);
        assert_eq!(dims[3], vec![1400, 35]);
        assert_eq!(dims[5], vec![1400, 64]);
        assert_eq!(dims[14], vec![10]);

        let u = ModelParams::zeros(shape(AttentionMode::Uniform));
        assert_eq!(u.tensors().len(), 10);
        let np = ModelParams::zeros(shape(AttentionMode::Learned { phase: false }));
        assert_eq!(np.tensors().len(), 14);
    }

    #[test]
    fn non_finite_detection_names_block() {
        let mut p = ModelParams::zeros(shape(AttentionMode::Uniform));
        assert_eq!(p.first_non_finite(), None);
        p.lstm.w_hc.set(3, 3, f64::NAN);
        assert_eq!(p.first_non_finite(), Some("lstm.w_hc"));
    }
}
