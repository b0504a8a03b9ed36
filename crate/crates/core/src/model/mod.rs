//! Full MCLNN classifier: a stack of CLNN/MCLNN layers, global mean pooling
//! over the surviving extra frames, a dense hidden layer and a softmax output.

mod file;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use file::{decode_model, encode_model, load_model, save_model, LoadError, MODEL_FORMAT_VERSION};

use crate::error::ShapeError;
use crate::features::NormStats;
use crate::layers::{
    global_mean_pool, global_mean_pool_backward, softmax, Activation, ActivationKind, ClnnGradients, ClnnLayer,
    ClnnTape, DenseGradients, DenseLayer, DenseTape, FrameBlock, LayerError,
};
use crate::mask::{generate_mask, MaskError, MaskSpec};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("layer {layer}: {source}")]
    Mask {
        layer: usize,
        #[source]
        source: MaskError,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("segment must be {expected:?} (frames x features), got {actual:?}")]
    Segment {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
}

impl From<ShapeError> for ModelError {
    fn from(e: ShapeError) -> Self {
        ModelError::Layer(e.into())
    }
}

/// Band parameters of a layer mask; the mask's feature length and width come
/// from the layer's input and hidden widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaskBand {
    pub bandwidth: usize,
    pub overlap: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub hidden_width: usize,
    pub order: usize,
    pub mask: Option<MaskBand>,
}

impl LayerSpec {
    pub fn masked(hidden_width: usize, order: usize, bandwidth: usize, overlap: i64) -> Self {
        Self {
            hidden_width,
            order,
            mask: Some(MaskBand { bandwidth, overlap }),
        }
    }

    pub fn unmasked(hidden_width: usize, order: usize) -> Self {
        Self {
            hidden_width,
            order,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub feature_length: usize,
    pub layers: Vec<LayerSpec>,
    pub extra_frames: usize,
    pub dense_width: usize,
    pub class_count: usize,
    /// Activation for every hidden neuron (CLNN layers and the dense layer).
    pub activation: ActivationKind,
    /// Permit order-0 layers. Only meant for degenerate-case tests.
    pub allow_zero_order: bool,
}

/// Dense hidden width used when a config doesn't say otherwise.
pub const DEFAULT_DENSE_WIDTH: usize = 50;

impl ModelSpec {
    /// Two-layer architecture evaluated on GTZAN / ISMIR2004: 256 mel bins,
    /// layers (220 nodes, order 4, band 40 / overlap -10) and
    /// (200 nodes, order 4, band 10 / overlap 3), 10 extra frames, 50 dense
    /// nodes, PReLU everywhere.
    pub fn table3(class_count: usize) -> Self {
        Self {
            feature_length: 256,
            layers: vec![LayerSpec::masked(220, 4, 40, -10), LayerSpec::masked(200, 4, 10, 3)],
            extra_frames: 10,
            dense_width: DEFAULT_DENSE_WIDTH,
            class_count,
            activation: ActivationKind::Prelu,
            allow_zero_order: false,
        }
    }

    /// Width of the input to layer `i`.
    pub fn input_width(&self, layer: usize) -> usize {
        if layer == 0 {
            self.feature_length
        } else {
            self.layers[layer - 1].hidden_width
        }
    }

    pub fn final_width(&self) -> usize {
        self.layers.last().map_or(self.feature_length, |l| l.hidden_width)
    }

    /// Mask spec for layer `i`, if the layer is masked.
    pub fn mask_spec(&self, layer: usize) -> Result<Option<MaskSpec>, ModelError> {
        let ls = &self.layers[layer];
        ls.mask
            .map(|band| {
                MaskSpec::new(self.input_width(layer), ls.hidden_width, band.bandwidth, band.overlap)
                    .map_err(|source| ModelError::Mask { layer, source })
            })
            .transpose()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidArchitecture(msg));
        if self.feature_length == 0 {
            return bad("feature_length must be >= 1".into());
        }
        if self.layers.is_empty() {
            return bad("at least one conditional layer is required".into());
        }
        if self.extra_frames == 0 {
            return bad("extra_frames (k) must be >= 1".into());
        }
        if self.dense_width == 0 {
            return bad("dense_width must be >= 1".into());
        }
        if self.class_count == 0 {
            return bad("class_count must be >= 1".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.hidden_width == 0 {
                return bad(format!("layer {i}: hidden_width must be >= 1"));
            }
            if l.order == 0 && !self.allow_zero_order {
                return bad(format!("layer {i}: order must be >= 1"));
            }
            self.mask_spec(i)?;
        }
        Ok(())
    }
}

/// Frames consumed by the whole stack: `sum(2 n_m) + k`.
pub fn segment_size(spec: &ModelSpec) -> usize {
    spec.layers.iter().map(|l| 2 * l.order).sum::<usize>() + spec.extra_frames
}

/// Frame count entering each layer, followed by the count left for pooling.
pub fn frame_plan(spec: &ModelSpec) -> Result<Vec<usize>, ModelError> {
    let mut frames = segment_size(spec);
    let mut plan = Vec::with_capacity(spec.layers.len() + 1);
    plan.push(frames);
    for (i, l) in spec.layers.iter().enumerate() {
        if frames < 2 * l.order + 1 {
            return Err(ModelError::InvalidArchitecture(format!(
                "layer {i} receives {frames} frames but order {} needs {}",
                l.order,
                2 * l.order + 1
            )));
        }
        frames -= 2 * l.order;
        plan.push(frames);
    }
    if frames < 1 {
        return Err(ModelError::InvalidArchitecture("no frames left for pooling".into()));
    }
    Ok(plan)
}

/// Name of the weight initialization scheme written into model files.
pub const INIT_SCHEME: &str = "glorot-uniform";

/// A classifier with its parameters, label names and feature normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    spec: ModelSpec,
    layers: Vec<ClnnLayer>,
    dense: DenseLayer,
    output: DenseLayer,
    pub norm: Option<NormStats>,
    pub labels: Vec<String>,
    seed: u64,
}

/// Recorded forward pass of a whole model over one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTape {
    pub layers: Vec<ClnnTape>,
    pub pooled: Vec<f64>,
    pub dense: DenseTape,
    pub output: DenseTape,
    pub probabilities: Vec<f64>,
}

impl ModelTape {
    pub fn logits(&self) -> &[f64] {
        &self.output.output
    }

    /// Every PReLU pre-activation in the tape, `true` where positive.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for t in &self.layers {
            out.extend(t.pre_activation.as_slice().iter().map(|&v| v > 0.0));
        }
        out.extend(self.dense.pre_activation.iter().map(|&v| v > 0.0));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub layers: Vec<ClnnGradients>,
    pub dense: DenseGradients,
    pub output: DenseGradients,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl TrainedModel {
    /// Initializes every weight matrix uniformly in `+-sqrt(6 / (fan_in + fan_out))`
    /// (from the unmasked shape), biases to zero and PReLU slopes to 0.25.
    /// Masked-out weights are set to zero.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let l = spec.input_width(i);
            let e = ls.hidden_width;
            let mask = spec.mask_spec(i)?.map(|m| generate_mask(&m));
            let mut weights: Vec<Matrix> = (0..2 * ls.order + 1).map(|_| glorot(&mut rng, l, e)).collect();
            if let Some(m) = &mask {
                weights.iter_mut().for_each(|w| m.zero_inactive(w));
            }
            layers.push(ClnnLayer::new(
                ls.order,
                weights,
                vec![0.0; e],
                mask,
                Activation::new(spec.activation, e),
            )?);
        }
        let pooled = spec.final_width();
        let dense = DenseLayer::new(
            glorot(&mut rng, pooled, spec.dense_width),
            vec![0.0; spec.dense_width],
            Activation::new(spec.activation, spec.dense_width),
        )?;
        let output = DenseLayer::new(
            glorot(&mut rng, spec.dense_width, spec.class_count),
            vec![0.0; spec.class_count],
            Activation::Linear,
        )?;
        Ok(Self {
            spec: spec.clone(),
            layers,
            dense,
            output,
            norm: None,
            labels: Vec::new(),
            seed,
        })
    }

    /// Assembles a model from explicit parts, checking them against `spec`.
    pub fn from_parts(
        spec: ModelSpec,
        layers: Vec<ClnnLayer>,
        dense: DenseLayer,
        output: DenseLayer,
        seed: u64,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        let mismatch = |what: String| Err(ModelError::InvalidArchitecture(what));
        if layers.len() != spec.layers.len() {
            return mismatch(format!(
                "{} layers for a {}-layer spec",
                layers.len(),
                spec.layers.len()
            ));
        }
        for (i, (layer, ls)) in layers.iter().zip(&spec.layers).enumerate() {
            if layer.order() != ls.order
                || layer.input_width() != spec.input_width(i)
                || layer.hidden_width() != ls.hidden_width
                || layer.activation().kind() != spec.activation
            {
                return mismatch(format!("layer {i} does not match its spec"));
            }
            let expected_mask = spec.mask_spec(i)?;
            if layer.mask().map(|m| *m.spec()) != expected_mask {
                return mismatch(format!("layer {i} mask does not match its spec"));
            }
        }
        if dense.input_width() != spec.final_width()
            || dense.output_width() != spec.dense_width
            || dense.activation().kind() != spec.activation
        {
            return mismatch("dense layer does not match spec".into());
        }
        if output.input_width() != spec.dense_width
            || output.output_width() != spec.class_count
            || output.activation().kind() != ActivationKind::Linear
        {
            return mismatch("output layer does not match spec".into());
        }
        Ok(Self {
            spec,
            layers,
            dense,
            output,
            norm: None,
            labels: Vec::new(),
            seed,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[ClnnLayer] {
        &self.layers
    }

    pub fn dense(&self) -> &DenseLayer {
        &self.dense
    }

    pub fn output_layer(&self) -> &DenseLayer {
        &self.output
    }

    pub fn segment_size(&self) -> usize {
        segment_size(&self.spec)
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(ClnnLayer::parameter_count).sum::<usize>()
            + self.dense.parameter_count()
            + self.output.parameter_count()
    }

    fn check_segment(&self, segment: &FrameBlock) -> Result<(), ModelError> {
        let expected = (self.segment_size(), self.spec.feature_length);
        let actual = (segment.frames(), segment.width());
        if expected != actual {
            return Err(ModelError::Segment { expected, actual });
        }
        Ok(())
    }

    /// Class probabilities for one segment of `segment_size x feature_length`.
    pub fn forward(&self, segment: &FrameBlock) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_taped(segment)?.probabilities)
    }

    pub fn forward_taped(&self, segment: &FrameBlock) -> Result<ModelTape, ModelError> {
        self.check_segment(segment)?;
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut block = segment.clone();
        for layer in &self.layers {
            let tape = layer.forward_taped(&block)?;
            block = FrameBlock::new(tape.output.clone())?;
            tapes.push(tape);
        }
        let pooled = global_mean_pool(&block);
        let dense = self.dense.forward_taped(&pooled)?;
        let output = self.output.forward_taped(&dense.output)?;
        let probabilities = softmax(&output.output);
        Ok(ModelTape {
            layers: tapes,
            pooled,
            dense,
            output,
            probabilities,
        })
    }

    /// Parameter gradients given `d loss / d logits`.
    pub fn backward(&self, tape: &ModelTape, grad_logits: &[f64]) -> Result<ModelGradients, ModelError> {
        if tape.layers.len() != self.layers.len() {
            return Err(LayerError::Tape(format!(
                "{} layer tapes for {} layers",
                tape.layers.len(),
                self.layers.len()
            ))
            .into());
        }
        let (output, grad_dense) = self.output.backward(&tape.output, grad_logits)?;
        let (dense, grad_pooled) = self.dense.backward(&tape.dense, &grad_dense)?;
        let k = tape.layers.last().map_or(0, |t| t.output.rows());
        let mut grad_block = global_mean_pool_backward(&grad_pooled, k);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (layer, t) in self.layers.iter().zip(&tape.layers).rev() {
            let (g, grad_in) = layer.backward(t, &grad_block)?;
            layers.push(g);
            grad_block = grad_in;
        }
        layers.reverse();
        Ok(ModelGradients { layers, dense, output })
    }

    /// Cross-entropy loss and its parameter gradients for one labelled segment.
    pub fn loss_and_gradients(&self, segment: &FrameBlock, target: usize) -> Result<(f64, ModelGradients), ModelError> {
        if target >= self.class_count() {
            return Err(ModelError::TargetOutOfRange {
                target,
                classes: self.class_count(),
            });
        }
        let tape = self.forward_taped(segment)?;
        let loss = crate::training::cross_entropy_unchecked(&tape.probabilities, target);
        let mut grad = tape.probabilities.clone();
        grad[target] -= 1.0;
        Ok((loss, self.backward(&tape, &grad)?))
    }

    /// Every parameter tensor with a stable name, in the same order as
    /// [`ModelGradients::tensors`].
    pub fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let n = layer.order() as i64;
            for (j, w) in layer.weights().iter().enumerate() {
                out.push((format!("clnn{i}.weights[u={}]", j as i64 - n), w.as_slice()));
            }
            out.push((format!("clnn{i}.bias"), layer.bias()));
            if let Some(s) = layer.activation().slopes() {
                out.push((format!("clnn{i}.slopes"), s));
            }
        }
        out.push(("dense.weights".into(), self.dense.weights().as_slice()));
        out.push(("dense.bias".into(), self.dense.bias()));
        if let Some(s) = self.dense.activation().slopes() {
            out.push(("dense.slopes".into(), s));
        }
        out.push(("output.weights".into(), self.output.weights().as_slice()));
        out.push(("output.bias".into(), self.output.bias()));
        out
    }

    /// Mutable views of every parameter tensor, same order as [`Self::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.parameters_mut());
        }
        out.extend(self.dense.parameters_mut());
        out.extend(self.output.parameters_mut());
        out
    }
}

impl ModelGradients {
    pub fn zeros_like(model: &TrainedModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| ClnnGradients {
                weights: vec![Matrix::zeros(l.input_width(), l.hidden_width()); l.window_len()],
                bias: vec![0.0; l.hidden_width()],
                slopes: vec![0.0; l.activation().slopes().map_or(0, <[f64]>::len)],
            })
            .collect();
        let dense_like = |d: &DenseLayer| DenseGradients {
            weights: Matrix::zeros(d.input_width(), d.output_width()),
            bias: vec![0.0; d.output_width()],
            slopes: vec![0.0; d.activation().slopes().map_or(0, <[f64]>::len)],
        };
        Self {
            layers,
            dense: dense_like(&model.dense),
            output: dense_like(&model.output),
        }
    }

    /// Gradient tensors in parameter order. Empty slope vectors (non-PReLU)
    /// are skipped, matching [`TrainedModel::parameters`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().map(Matrix::as_slice));
            out.push(&l.bias);
            if !l.slopes.is_empty() {
                out.push(&l.slopes);
            }
        }
        for d in [&self.dense, &self.output] {
            out.push(d.weights.as_slice());
            out.push(&d.bias);
            if !d.slopes.is_empty() {
                out.push(&d.slopes);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.extend(l.weights.iter_mut().map(Matrix::as_mut_slice));
            out.push(&mut l.bias);
            if !l.slopes.is_empty() {
                out.push(&mut l.slopes);
            }
        }
        for d in [&mut self.dense, &mut self.output] {
            out.push(d.weights.as_mut_slice());
            out.push(&mut d.bias);
            if !d.slopes.is_empty() {
                out.push(&mut d.slopes);
            }
        }
        out
    }

    /// `self += other`, element by element in a fixed order.
    pub fn accumulate(&mut self, other: &ModelGradients) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::tensor::add_into(dst, src);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[cfg(test)]
mod tests;
