//! CLNN/MCLNN layers, the dense head, pooling, activations and their exact
//! reverse-mode gradients.
//!
//! Weight matrices are stored input-major: `W_u` is `l x e`, and a frame (a row
//! vector of length `l`) multiplies it from the left. A CLNN layer of order `n`
//! holds `2n + 1` such matrices, index `0` pairing with the oldest frame of the
//! window (`u = -n`) and index `2n` with the newest (`u = +n`).

use thiserror::Error;

use crate::error::ShapeError;
use crate::mask::{apply_mask, BinaryMask};
use crate::tensor::{add_into, mat_vec_accumulate, outer_accumulate, vec_mat_accumulate, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayerError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("window must hold exactly {expected} frames, got {actual}")]
    FrameCount { expected: usize, actual: usize },
    #[error("order {order} layer needs at least {} frames, got {frames}", 2 * order + 1)]
    InsufficientFrames { order: usize, frames: usize },
    #[error("frame block is empty")]
    EmptyBlock,
    #[error("invalid layer: {0}")]
    Invalid(String),
    #[error("tape inconsistent with layer: {0}")]
    Tape(String),
}

/// Activation family without parameters, as chosen in a model spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Prelu,
    Sigmoid,
    Linear,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Prelu => "prelu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prelu" => Some(ActivationKind::Prelu),
            "sigmoid" => Some(ActivationKind::Sigmoid),
            "linear" => Some(ActivationKind::Linear),
            _ => None,
        }
    }
}

/// Initial negative-side slope for PReLU neurons.
pub const PRELU_INITIAL_SLOPE: f64 = 0.25;

/// Activation with its learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    /// Per-neuron negative-side slopes.
    Prelu {
        slopes: Vec<f64>,
    },
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn new(kind: ActivationKind, width: usize) -> Self {
        match kind {
            ActivationKind::Prelu => Activation::Prelu {
                slopes: vec![PRELU_INITIAL_SLOPE; width],
            },
            ActivationKind::Sigmoid => Activation::Sigmoid,
            ActivationKind::Linear => Activation::Linear,
        }
    }

    pub fn kind(&self) -> ActivationKind {
        match self {
            Activation::Prelu { .. } => ActivationKind::Prelu,
            Activation::Sigmoid => ActivationKind::Sigmoid,
            Activation::Linear => ActivationKind::Linear,
        }
    }

    pub fn slopes(&self) -> Option<&[f64]> {
        match self {
            Activation::Prelu { slopes } => Some(slopes),
            _ => None,
        }
    }

    pub(crate) fn slopes_mut(&mut self) -> Option<&mut Vec<f64>> {
        match self {
            Activation::Prelu { slopes } => Some(slopes),
            _ => None,
        }
    }

    fn check_width(&self, width: usize) -> Result<(), LayerError> {
        if let Activation::Prelu { slopes } = self {
            if slopes.len() != width {
                return Err(ShapeError::new("prelu slopes", (width, 1), (slopes.len(), 1)).into());
            }
        }
        Ok(())
    }

    fn apply(&self, pre: &[f64], out: &mut [f64]) {
        match self {
            Activation::Prelu { slopes } => {
                for ((o, &x), &a) in out.iter_mut().zip(pre).zip(slopes) {
                    *o = if x > 0.0 { x } else { a * x };
                }
            }
            Activation::Sigmoid => {
                for (o, &x) in out.iter_mut().zip(pre) {
                    *o = sigmoid(x);
                }
            }
            Activation::Linear => out.copy_from_slice(pre),
        }
    }

    /// Writes `d loss / d pre` into `grad_pre` and accumulates slope gradients.
    fn backward(&self, pre: &[f64], out: &[f64], grad_out: &[f64], grad_pre: &mut [f64], grad_slopes: &mut [f64]) {
        match self {
            Activation::Prelu { slopes } => {
                for j in 0..pre.len() {
                    if pre[j] > 0.0 {
                        grad_pre[j] = grad_out[j];
                    } else {
                        grad_pre[j] = slopes[j] * grad_out[j];
                        grad_slopes[j] += pre[j] * grad_out[j];
                    }
                }
            }
            Activation::Sigmoid => {
                for j in 0..pre.len() {
                    grad_pre[j] = grad_out[j] * out[j] * (1.0 - out[j]);
                }
            }
            Activation::Linear => grad_pre.copy_from_slice(grad_out),
        }
    }

    fn slope_count(&self) -> usize {
        self.slopes().map_or(0, <[f64]>::len)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x` where positive, `slope * x` otherwise.
pub fn prelu(x: &[f64], slopes: &[f64]) -> Result<Vec<f64>, LayerError> {
    if x.len() != slopes.len() {
        return Err(ShapeError::new("prelu", (x.len(), 1), (slopes.len(), 1)).into());
    }
    let act = Activation::Prelu {
        slopes: slopes.to_vec(),
    };
    let mut out = vec![0.0; x.len()];
    act.apply(x, &mut out);
    Ok(out)
}

/// Numerically stable softmax (max subtracted before exponentiation).
///
/// Panics on an empty input.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    assert!(!x.is_empty(), "softmax of an empty vector");
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// `t x l` block of consecutive frames, one feature vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBlock(Matrix);

impl FrameBlock {
    pub fn new(frames: Matrix) -> Result<Self, LayerError> {
        if frames.rows() == 0 {
            return Err(LayerError::EmptyBlock);
        }
        Ok(Self(frames))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LayerError> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Frames `start..start + count`.
    pub fn window(&self, start: usize, count: usize) -> FrameBlock {
        FrameBlock(self.0.slice_rows(start, count))
    }
}

/// Per-dimension mean over the temporal axis.
pub fn global_mean_pool(block: &FrameBlock) -> Vec<f64> {
    let k = block.frames() as f64;
    let mut out = vec![0.0; block.width()];
    for frame in block.0.iter_rows() {
        add_into(&mut out, frame);
    }
    out.iter_mut().for_each(|v| *v /= k);
    out
}

/// Gradient of [`global_mean_pool`] with respect to its `k`-frame input.
pub fn global_mean_pool_backward(grad: &[f64], k: usize) -> Matrix {
    let scale = 1.0 / k as f64;
    let row: Vec<f64> = grad.iter().map(|g| g * scale).collect();
    let mut out = Matrix::zeros(k, grad.len());
    for r in 0..k {
        out.row_mut(r).copy_from_slice(&row);
    }
    out
}

/// Conditional layer over a sliding window of `2n + 1` frames, optionally masked.
#[derive(Debug, Clone, PartialEq)]
pub struct ClnnLayer {
    order: usize,
    weights: Vec<Matrix>,
    bias: Vec<f64>,
    mask: Option<BinaryMask>,
    activation: Activation,
}

/// Recorded forward pass of one [`ClnnLayer`] over one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ClnnTape {
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub output: Matrix,
    pub effective_weights: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClnnGradients {
    pub weights: Vec<Matrix>,
    pub bias: Vec<f64>,
    /// Empty unless the layer uses PReLU.
    pub slopes: Vec<f64>,
}

impl ClnnLayer {
    pub fn new(
        order: usize,
        weights: Vec<Matrix>,
        bias: Vec<f64>,
        mask: Option<BinaryMask>,
        activation: Activation,
    ) -> Result<Self, LayerError> {
        if weights.len() != 2 * order + 1 {
            return Err(LayerError::Invalid(format!(
                "order {order} needs {} weight matrices, got {}",
                2 * order + 1,
                weights.len()
            )));
        }
        let shape = weights[0].shape();
        if let Some(w) = weights.iter().find(|w| w.shape() != shape) {
            return Err(ShapeError::new("clnn weight tensor", shape, w.shape()).into());
        }
        if shape.0 == 0 || shape.1 == 0 {
            return Err(LayerError::Invalid(format!("empty weight shape {shape:?}")));
        }
        if bias.len() != shape.1 {
            return Err(ShapeError::new("clnn bias", (shape.1, 1), (bias.len(), 1)).into());
        }
        if let Some(m) = &mask {
            if m.shape() != shape {
                return Err(ShapeError::new("clnn mask", shape, m.shape()).into());
            }
        }
        activation.check_width(shape.1)?;
        Ok(Self {
            order,
            weights,
            bias,
            mask,
            activation,
        })
    }

    /// Layer with zero weights and bias.
    pub fn zeros(
        order: usize,
        input_width: usize,
        hidden_width: usize,
        mask: Option<BinaryMask>,
        activation: ActivationKind,
    ) -> Result<Self, LayerError> {
        Self::new(
            order,
            vec![Matrix::zeros(input_width, hidden_width); 2 * order + 1],
            vec![0.0; hidden_width],
            mask,
            Activation::new(activation, hidden_width),
        )
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn window_len(&self) -> usize {
        2 * self.order + 1
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.weights[0].cols()
    }

    /// Raw weights, index `u + n`.
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn mask(&self) -> Option<&BinaryMask> {
        self.mask.as_ref()
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    /// Weight matrices, bias, then slopes (if PReLU).
    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.weights.iter_mut().map(Matrix::as_mut_slice).collect();
        out.push(&mut self.bias);
        if let Some(s) = self.activation.slopes_mut() {
            out.push(s);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() * self.input_width() * self.hidden_width() + self.bias.len() + self.activation.slope_count()
    }

    /// `W_u o M` for every `u`, or the raw weights when unmasked.
    pub fn effective_weights(&self) -> Vec<Matrix> {
        match &self.mask {
            Some(mask) => self
                .weights
                .iter()
                .map(|w| apply_mask(w, mask).expect("mask shape validated at construction"))
                .collect(),
            None => self.weights.clone(),
        }
    }

    fn check_input(&self, block: &FrameBlock) -> Result<(), LayerError> {
        if block.width() != self.input_width() {
            return Err(ShapeError::new(
                "clnn input frame",
                (block.frames(), self.input_width()),
                (block.frames(), block.width()),
            )
            .into());
        }
        Ok(())
    }

    fn pre_activation(&self, input: &Matrix, effective: &[Matrix], t_out: usize) -> Matrix {
        let e = self.hidden_width();
        let mut pre = Matrix::zeros(t_out, e);
        for i in 0..t_out {
            let row = pre.row_mut(i);
            row.copy_from_slice(&self.bias);
            for (j, z) in effective.iter().enumerate() {
                vec_mat_accumulate(input.row(i + j), z, row);
            }
        }
        pre
    }

    /// Output for a single window of exactly `2n + 1` frames.
    pub fn window_forward(&self, window: &FrameBlock) -> Result<Vec<f64>, LayerError> {
        if window.frames() != self.window_len() {
            return Err(LayerError::FrameCount {
                expected: self.window_len(),
                actual: window.frames(),
            });
        }
        Ok(self.block_forward(window)?.into_matrix().into_vec())
    }

    /// Slides the window over `t` frames, producing `t - 2n` frames. Output
    /// frame `i` is centred on input frame `i + n`.
    pub fn block_forward(&self, block: &FrameBlock) -> Result<FrameBlock, LayerError> {
        Ok(FrameBlock(self.forward_taped(block)?.output))
    }

    pub fn forward_taped(&self, block: &FrameBlock) -> Result<ClnnTape, LayerError> {
        self.check_input(block)?;
        if block.frames() < self.window_len() {
            return Err(LayerError::InsufficientFrames {
                order: self.order,
                frames: block.frames(),
            });
        }
        let t_out = block.frames() - 2 * self.order;
        let effective = self.effective_weights();
        let pre = self.pre_activation(&block.0, &effective, t_out);
        let mut output = Matrix::zeros(t_out, self.hidden_width());
        for i in 0..t_out {
            self.activation.apply(pre.row(i), output.row_mut(i));
        }
        Ok(ClnnTape {
            input: block.0.clone(),
            pre_activation: pre,
            output,
            effective_weights: effective,
        })
    }

    /// Recomputes a tape's outputs from its recorded input and weights.
    pub fn replay(&self, tape: &ClnnTape) -> Matrix {
        let t_out = tape.output.rows();
        let pre = self.pre_activation(&tape.input, &tape.effective_weights, t_out);
        let mut output = Matrix::zeros(t_out, self.hidden_width());
        for i in 0..t_out {
            self.activation.apply(pre.row(i), output.row_mut(i));
        }
        output
    }

    /// Gradients of the parameters and of the input block, given
    /// `d loss / d output`. Weight gradients are zero wherever the mask is off.
    pub fn backward(&self, tape: &ClnnTape, grad_output: &Matrix) -> Result<(ClnnGradients, Matrix), LayerError> {
        let (l, e) = (self.input_width(), self.hidden_width());
        let t_out = tape.output.rows();
        if tape.input.cols() != l
            || tape.input.rows() != t_out + 2 * self.order
            || tape.pre_activation.shape() != (t_out, e)
            || tape.effective_weights.len() != self.window_len()
        {
            return Err(LayerError::Tape(format!(
                "input {:?}, pre-activation {:?}, {} weight matrices",
                tape.input.shape(),
                tape.pre_activation.shape(),
                tape.effective_weights.len()
            )));
        }
        if grad_output.shape() != (t_out, e) {
            return Err(ShapeError::new("clnn output gradient", (t_out, e), grad_output.shape()).into());
        }

        let mut grads = ClnnGradients {
            weights: vec![Matrix::zeros(l, e); self.window_len()],
            bias: vec![0.0; e],
            slopes: vec![0.0; self.activation.slope_count()],
        };
        let mut grad_input = Matrix::zeros(tape.input.rows(), l);
        let mut grad_pre = vec![0.0; e];
        for i in 0..t_out {
            self.activation.backward(
                tape.pre_activation.row(i),
                tape.output.row(i),
                grad_output.row(i),
                &mut grad_pre,
                &mut grads.slopes,
            );
            add_into(&mut grads.bias, &grad_pre);
            for (j, z) in tape.effective_weights.iter().enumerate() {
                outer_accumulate(tape.input.row(i + j), &grad_pre, &mut grads.weights[j]);
                mat_vec_accumulate(z, &grad_pre, grad_input.row_mut(i + j));
            }
        }
        if let Some(mask) = &self.mask {
            for g in &mut grads.weights {
                mask.zero_inactive(g);
            }
        }
        Ok((grads, grad_input))
    }

    /// Plain gradient step `p -= rate * g` on weights, bias and slopes.
    pub fn descend(&mut self, grads: &ClnnGradients, rate: f64) -> Result<(), LayerError> {
        let shape = self.weights[0].shape();
        if grads.weights.len() != self.weights.len()
            || grads.weights.iter().any(|g| g.shape() != shape)
            || grads.bias.len() != self.bias.len()
            || grads.slopes.len() != self.activation.slope_count()
        {
            return Err(LayerError::Invalid("gradient layout does not match layer".into()));
        }
        let mut sources: Vec<&[f64]> = grads.weights.iter().map(Matrix::as_slice).collect();
        sources.push(&grads.bias);
        if !grads.slopes.is_empty() {
            sources.push(&grads.slopes);
        }
        for (p, g) in self.parameters_mut().into_iter().zip(sources) {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= rate * g;
            }
        }
        Ok(())
    }
}

/// Fully connected layer `y = f(x W + b)` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTape {
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self, LayerError> {
        if bias.len() != weights.cols() {
            return Err(ShapeError::new("dense bias", (weights.cols(), 1), (bias.len(), 1)).into());
        }
        activation.check_width(weights.cols())?;
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.weights.as_mut_slice(), &mut self.bias];
        if let Some(s) = self.activation.slopes_mut() {
            out.push(s);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len() + self.activation.slope_count()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, LayerError> {
        Ok(self.forward_taped(x)?.output)
    }

    pub fn forward_taped(&self, x: &[f64]) -> Result<DenseTape, LayerError> {
        if x.len() != self.input_width() {
            return Err(ShapeError::new("dense input", (self.input_width(), 1), (x.len(), 1)).into());
        }
        let mut pre = self.bias.clone();
        vec_mat_accumulate(x, &self.weights, &mut pre);
        let mut output = vec![0.0; pre.len()];
        self.activation.apply(&pre, &mut output);
        Ok(DenseTape {
            input: x.to_vec(),
            pre_activation: pre,
            output,
        })
    }

    pub fn backward(&self, tape: &DenseTape, grad_output: &[f64]) -> Result<(DenseGradients, Vec<f64>), LayerError> {
        let (n_in, n_out) = self.weights.shape();
        if tape.input.len() != n_in || tape.pre_activation.len() != n_out {
            return Err(LayerError::Tape(format!(
                "dense tape input {} / pre-activation {}",
                tape.input.len(),
                tape.pre_activation.len()
            )));
        }
        if grad_output.len() != n_out {
            return Err(ShapeError::new("dense output gradient", (n_out, 1), (grad_output.len(), 1)).into());
        }
        let mut grads = DenseGradients {
            weights: Matrix::zeros(n_in, n_out),
            bias: vec![0.0; n_out],
            slopes: vec![0.0; self.activation.slope_count()],
        };
        self.activation.backward(
            &tape.pre_activation,
            &tape.output,
            grad_output,
            &mut grads.bias,
            &mut grads.slopes,
        );
        outer_accumulate(&tape.input, &grads.bias, &mut grads.weights);
        let mut grad_input = vec![0.0; n_in];
        mat_vec_accumulate(&self.weights, &grads.bias, &mut grad_input);
        Ok((grads, grad_input))
    }
}

/// `f(x W + b)` without constructing a layer.
pub fn dense_forward(
    x: &[f64],
    weights: &Matrix,
    bias: &[f64],
    activation: &Activation,
) -> Result<Vec<f64>, LayerError> {
    DenseLayer::new(weights.clone(), bias.to_vec(), activation.clone())?.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{generate_mask, MaskSpec};

    fn linear_layer(order: usize, weights: Vec<Matrix>, bias: Vec<f64>) -> ClnnLayer {
        ClnnLayer::new(order, weights, bias, None, Activation::Linear).unwrap()
    }

    #[test]
    fn zero_layer_gives_zero_vector() {
        let layer = ClnnLayer::zeros(1, 3, 4, None, ActivationKind::Linear).unwrap();
        let window = FrameBlock::new(Matrix::filled(3, 3, 2.5)).unwrap();
        assert_eq!(layer.window_forward(&window).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn order_zero_identity_is_identity_map() {
        let layer = linear_layer(0, vec![Matrix::identity(3)], vec![0.0; 3]);
        let frame = FrameBlock::from_rows(&[[1.5, -2.0, 0.25]]).unwrap();
        assert_eq!(layer.window_forward(&frame).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn small_integer_window_matches_hand_loop() {
        // n=1, l=2, e=2. Literal sum over u and i per output node.
        let w = vec![
            Matrix::from_rows(&[[1.0, 0.0], [2.0, -1.0]]).unwrap(),
            Matrix::from_rows(&[[0.0, 3.0], [1.0, 1.0]]).unwrap(),
            Matrix::from_rows(&[[-2.0, 1.0], [0.0, 2.0]]).unwrap(),
        ];
        let b = vec![1.0, -1.0];
        let x = [[1.0, 2.0], [3.0, -1.0], [0.0, 4.0]];
        let layer = linear_layer(1, w.clone(), b.clone());
        let got = layer.window_forward(&FrameBlock::from_rows(&x).unwrap()).unwrap();
        let mut expected = b.clone();
        for (j, out) in expected.iter_mut().enumerate() {
            for (u, wu) in w.iter().enumerate() {
                for i in 0..2 {
                    *out += x[u][i] * wu[(i, j)];
                }
            }
        }
        // u=-1: [1,2]->[5,-2]; u=0: [3,-1]->[-1,8]; u=+1: [0,4]->[0,8]; + bias
        assert_eq!(expected, vec![5.0, 13.0]);
        assert_eq!(got, expected);
    }

    #[test]
    fn window_frame_count_is_checked() {
        let layer = ClnnLayer::zeros(1, 2, 2, None, ActivationKind::Linear).unwrap();
        let err = layer
            .window_forward(&FrameBlock::new(Matrix::zeros(4, 2)).unwrap())
            .unwrap_err();
        assert_eq!(err, LayerError::FrameCount { expected: 3, actual: 4 });
    }

    #[test]
    fn block_shrinks_by_two_n() {
        let layer = ClnnLayer::zeros(4, 5, 3, None, ActivationKind::Prelu).unwrap();
        let out = layer
            .block_forward(&FrameBlock::new(Matrix::zeros(29, 5)).unwrap())
            .unwrap();
        assert_eq!(out.frames(), 21);
        let err = layer
            .block_forward(&FrameBlock::new(Matrix::zeros(8, 5)).unwrap())
            .unwrap_err();
        assert_eq!(err, LayerError::InsufficientFrames { order: 4, frames: 8 });
    }

    #[test]
    fn single_window_block_equals_window_forward() {
        let w: Vec<Matrix> = (0..3)
            .map(|u| Matrix::from_fn(2, 3, |r, c| (u * 6 + r * 3 + c) as f64 * 0.1 - 0.7))
            .collect();
        let layer = linear_layer(1, w, vec![0.1, 0.2, 0.3]);
        let block = FrameBlock::from_rows(&[[1.0, 2.0], [0.5, -0.5], [-1.0, 3.0]]).unwrap();
        let via_block = layer.block_forward(&block).unwrap().into_matrix().into_vec();
        assert_eq!(via_block, layer.window_forward(&block).unwrap());
    }

    #[test]
    fn window_orientation_oldest_frame_uses_first_matrix() {
        // Only W_{-n} is non-zero: output frame i must see input frame i.
        let mut w = vec![Matrix::zeros(1, 1); 3];
        w[0][(0, 0)] = 1.0;
        let layer = linear_layer(1, w, vec![0.0]);
        let block = FrameBlock::from_rows(&[[10.0], [20.0], [30.0], [40.0]]).unwrap();
        let out = layer.block_forward(&block).unwrap();
        assert_eq!(out.matrix().as_slice(), &[10.0, 20.0]);
    }

    #[test]
    fn effective_weights_cases() {
        let w: Vec<Matrix> = (0..3)
            .map(|u| Matrix::from_fn(4, 3, |r, c| (u * 12 + r * 3 + c) as f64 + 1.0))
            .collect();
        let plain = linear_layer(1, w.clone(), vec![0.0; 3]);
        assert_eq!(plain.effective_weights(), w);

        let mask = generate_mask(&MaskSpec::new(4, 3, 2, 0).unwrap());
        let masked = ClnnLayer::new(1, w.clone(), vec![0.0; 3], Some(mask.clone()), Activation::Linear).unwrap();
        for (z, raw) in masked.effective_weights().iter().zip(&w) {
            for r in 0..4 {
                for c in 0..3 {
                    let expected = if mask.get(r, c) { raw[(r, c)] } else { 0.0 };
                    assert_eq!(z[(r, c)], expected);
                }
            }
        }
    }

    #[test]
    fn mask_shape_checked_at_construction() {
        let mask = generate_mask(&MaskSpec::new(4, 3, 2, 0).unwrap());
        let err = ClnnLayer::zeros(0, 3, 4, Some(mask), ActivationKind::Linear).unwrap_err();
        assert!(matches!(err, LayerError::Shape(_)));
    }

    #[test]
    fn pooling_examples() {
        let block = FrameBlock::from_rows(&[[1.0, 3.0], [5.0, 7.0]]).unwrap();
        assert_eq!(global_mean_pool(&block), vec![3.0, 5.0]);
        let one = FrameBlock::from_rows(&[[0.1, -0.2]]).unwrap();
        assert_eq!(global_mean_pool(&one), vec![0.1, -0.2]);
        assert!(matches!(
            FrameBlock::new(Matrix::zeros(0, 2)),
            Err(LayerError::EmptyBlock)
        ));
    }

    #[test]
    fn prelu_examples() {
        assert_eq!(prelu(&[2.0, -2.0], &[0.25, 0.25]).unwrap(), vec![2.0, -0.5]);
        assert_eq!(prelu(&[0.0, 3.0], &[0.1, 0.1]).unwrap(), vec![0.0, 3.0]);
        assert_eq!(prelu(&[-4.0, 3.0], &[1.0, 1.0]).unwrap(), vec![-4.0, 3.0]);
        assert!(prelu(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.3; 4]), vec![0.25; 4]);
        let p = softmax(&[0.0, 800.0]);
        assert_eq!(p[1], 1.0);
        assert!(p[0] >= 0.0 && p[0] < 1e-300);
        let p = softmax(&[1.0, 2.0, 3.0]);
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, v) in p.iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / denom).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_examples() {
        let x = [1.0, -2.0, 3.0];
        let zero = dense_forward(&x, &Matrix::zeros(3, 2), &[0.0, 0.0], &Activation::Linear).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        let id = dense_forward(&x, &Matrix::identity(3), &[0.0; 3], &Activation::Linear).unwrap();
        assert_eq!(id, x.to_vec());
        let w = Matrix::from_fn(3, 2, |r, c| r as f64 - c as f64 * 0.5);
        let b = [0.5, -0.5];
        let got = dense_forward(&x, &w, &b, &Activation::Sigmoid).unwrap();
        for j in 0..2 {
            let mut s = b[j];
            for i in 0..3 {
                s += x[i] * w[(i, j)];
            }
            assert!((got[j] - sigmoid(s)).abs() < 1e-15);
        }
        assert!(dense_forward(&[1.0], &w, &b, &Activation::Linear).is_err());
    }

    #[test]
    fn zero_gradient_in_zero_gradient_out() {
        let mask = generate_mask(&MaskSpec::new(3, 2, 2, 0).unwrap());
        let w: Vec<Matrix> = (0..3).map(|u| Matrix::filled(3, 2, u as f64 - 1.0)).collect();
        let layer = ClnnLayer::new(
            1,
            w,
            vec![0.1, -0.1],
            Some(mask),
            Activation::new(ActivationKind::Prelu, 2),
        )
        .unwrap();
        let block = FrameBlock::new(Matrix::from_fn(5, 3, |r, c| (r + c) as f64 - 2.0)).unwrap();
        let tape = layer.forward_taped(&block).unwrap();
        let (g, gx) = layer.backward(&tape, &Matrix::zeros(3, 2)).unwrap();
        assert!(g.weights.iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
        assert!(g.bias.iter().chain(&g.slopes).all(|&v| v == 0.0));
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_linear_gradient_is_outer_product() {
        let w = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 * 0.3);
        let layer = linear_layer(0, vec![w], vec![0.0, 0.0]);
        let x = [1.0, -2.0, 0.5];
        let tape = layer.forward_taped(&FrameBlock::from_rows(&[x]).unwrap()).unwrap();
        let g = [0.7, -1.3];
        let (grads, _) = layer.backward(&tape, &Matrix::from_rows(&[g]).unwrap()).unwrap();
        let expected = Matrix::from_fn(3, 2, |r, c| x[r] * g[c]);
        assert_eq!(grads.weights[0], expected);
        assert_eq!(grads.bias, g.to_vec());
    }

    #[test]
    fn tape_replay_is_bit_identical() {
        let mask = generate_mask(&MaskSpec::new(4, 3, 3, 1).unwrap());
        let w: Vec<Matrix> = (0..5)
            .map(|u| Matrix::from_fn(4, 3, |r, c| ((u * 7 + r * 3 + c) as f64).sin()))
            .collect();
        let layer = ClnnLayer::new(
            2,
            w,
            vec![0.1, 0.0, -0.2],
            Some(mask),
            Activation::new(ActivationKind::Prelu, 3),
        )
        .unwrap();
        let block = FrameBlock::new(Matrix::from_fn(9, 4, |r, c| ((r * 4 + c) as f64).cos())).unwrap();
        let tape = layer.forward_taped(&block).unwrap();
        let replayed = layer.replay(&tape);
        let a: Vec<u64> = replayed.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = tape.output.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let a = ClnnLayer::zeros(1, 3, 2, None, ActivationKind::Linear).unwrap();
        let b = ClnnLayer::zeros(2, 3, 2, None, ActivationKind::Linear).unwrap();
        let tape = a.forward_taped(&FrameBlock::new(Matrix::zeros(5, 3)).unwrap()).unwrap();
        assert!(matches!(
            b.backward(&tape, &Matrix::zeros(3, 2)),
            Err(LayerError::Tape(_))
        ));
        assert!(matches!(
            a.backward(&tape, &Matrix::zeros(2, 2)),
            Err(LayerError::Shape(_))
        ));
    }
}
