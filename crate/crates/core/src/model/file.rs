//! Binary model container.
//!
//! ```text
//! magic      8 bytes  "MCLNNMDL"
//! version    u32
//! init       str      weight initialization scheme
//! seed       u64
//! spec       feature_length u64, layer count u64,
//!            per layer: hidden_width u64, order u64, has_mask u8, bandwidth u64, overlap i64
//!            extra_frames u64, dense_width u64, class_count u64,
//!            activation u8, allow_zero_order u8
//! labels     count u64, then str each
//! norm       present u8; if 1: split str, frame_count u64, len u64, mean f64*len, std f64*len
//! tensors    count u64, then per tensor: rows u64, cols u64, rows*cols f64
//! ```
//!
//! Integers and floats are little-endian; `str` is a u64 byte length followed by
//! UTF-8. Tensors appear in [`TrainedModel::parameters`] order; each shape
//! header must match the shape implied by the spec.

use std::path::Path;

use thiserror::Error;

use super::{ModelError, ModelSpec, TrainedModel, INIT_SCHEME};
use crate::bytes::{ByteReader, ByteWriter, ReadFault};
use crate::error::{Error, Result};
use crate::features::{NormStats, SplitTag};
use crate::layers::ActivationKind;
use crate::model::{LayerSpec, MaskBand};

const MAGIC: &[u8; 8] = b"MCLNNMDL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model file truncated at byte {offset} (needed {needed} more)")]
    Truncated { offset: usize, needed: usize },
    #[error("shape inconsistency: {0}")]
    ShapeInconsistency(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

impl From<ReadFault> for LoadError {
    fn from(f: ReadFault) -> Self {
        match f {
            ReadFault::Truncated { offset, needed } => LoadError::Truncated { offset, needed },
            ReadFault::BadUtf8 { offset } => LoadError::Corrupt(format!("invalid UTF-8 at byte {offset}")),
            ReadFault::TooLarge { offset, value } => {
                LoadError::Corrupt(format!("implausible length {value} at byte {offset}"))
            }
        }
    }
}

fn activation_code(kind: ActivationKind) -> u8 {
    match kind {
        ActivationKind::Prelu => 0,
        ActivationKind::Sigmoid => 1,
        ActivationKind::Linear => 2,
    }
}

fn activation_from_code(code: u8) -> Result<ActivationKind, LoadError> {
    match code {
        0 => Ok(ActivationKind::Prelu),
        1 => Ok(ActivationKind::Sigmoid),
        2 => Ok(ActivationKind::Linear),
        c => Err(LoadError::Corrupt(format!("unknown activation code {c}"))),
    }
}

pub(crate) fn write_spec(w: &mut ByteWriter, spec: &ModelSpec) {
    w.usize(spec.feature_length);
    w.usize(spec.layers.len());
    for l in &spec.layers {
        w.usize(l.hidden_width);
        w.usize(l.order);
        match l.mask {
            Some(band) => {
                w.u8(1);
                w.usize(band.bandwidth);
                w.i64(band.overlap);
            }
            None => {
                w.u8(0);
                w.usize(0);
                w.i64(0);
            }
        }
    }
    w.usize(spec.extra_frames);
    w.usize(spec.dense_width);
    w.usize(spec.class_count);
    w.u8(activation_code(spec.activation));
    w.u8(spec.allow_zero_order as u8);
}

fn read_bool(r: &mut ByteReader<'_>, what: &str) -> Result<bool, LoadError> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(LoadError::Corrupt(format!("{what}: expected 0 or 1, got {v}"))),
    }
}

fn read_spec(r: &mut ByteReader<'_>) -> Result<ModelSpec, LoadError> {
    let feature_length = r.usize()?;
    let count = r.usize()?;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let hidden_width = r.usize()?;
        let order = r.usize()?;
        let has_mask = read_bool(r, "mask flag")?;
        let bandwidth = r.usize()?;
        let overlap = r.i64()?;
        layers.push(LayerSpec {
            hidden_width,
            order,
            mask: has_mask.then_some(MaskBand { bandwidth, overlap }),
        });
    }
    Ok(ModelSpec {
        feature_length,
        layers,
        extra_frames: r.usize()?,
        dense_width: r.usize()?,
        class_count: r.usize()?,
        activation: activation_from_code(r.u8()?)?,
        allow_zero_order: read_bool(r, "allow_zero_order")?,
    })
}

/// Shapes of every tensor of a model built from `spec`, in parameter order.
fn expected_shapes(model: &TrainedModel) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for layer in model.layers() {
        let (l, e) = (layer.input_width(), layer.hidden_width());
        out.extend(std::iter::repeat_n((l, e), layer.window_len()));
        out.push((1, e));
        if layer.activation().slopes().is_some() {
            out.push((1, e));
        }
    }
    for d in [model.dense(), model.output_layer()] {
        out.push((d.input_width(), d.output_width()));
        out.push((1, d.output_width()));
        if d.activation().slopes().is_some() {
            out.push((1, d.output_width()));
        }
    }
    out
}

pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(MODEL_FORMAT_VERSION);
    w.str(INIT_SCHEME);
    w.u64(model.seed());
    write_spec(&mut w, model.spec());
    w.usize(model.labels.len());
    for label in &model.labels {
        w.str(label);
    }
    match &model.norm {
        Some(norm) => {
            w.u8(1);
            w.str(norm.split.name());
            w.usize(norm.frame_count);
            w.usize(norm.mean.len());
            w.f64s(&norm.mean);
            w.f64s(&norm.std);
        }
        None => w.u8(0),
    }
    let shapes = expected_shapes(model);
    let params = model.parameters();
    w.usize(params.len());
    for ((_, values), (rows, cols)) in params.iter().zip(shapes) {
        w.usize(rows);
        w.usize(cols);
        w.f64s(values);
    }
    w.into_inner()
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel, LoadError> {
    let mut r = ByteReader::new(bytes);
    if r.take(MAGIC.len())? != MAGIC {
        return Err(LoadError::BadMagic);
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(LoadError::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let init = r.str()?;
    if init != INIT_SCHEME {
        return Err(LoadError::Corrupt(format!("unknown init scheme {init:?}")));
    }
    let seed = r.u64()?;
    let spec = read_spec(&mut r)?;
    let mut model = TrainedModel::build(&spec, seed)
        .map_err(|e: ModelError| LoadError::ShapeInconsistency(format!("stored spec is not buildable: {e}")))?;

    let label_count = r.usize()?;
    let mut labels = Vec::with_capacity(label_count.min(4096));
    for _ in 0..label_count {
        labels.push(r.str()?);
    }
    model.labels = labels;

    if read_bool(&mut r, "norm flag")? {
        let split = r.str()?;
        let split =
            SplitTag::parse(&split).ok_or_else(|| LoadError::Corrupt(format!("unknown split tag {split:?}")))?;
        let frame_count = r.usize()?;
        let len = r.usize()?;
        if len != spec.feature_length {
            return Err(LoadError::ShapeInconsistency(format!(
                "normalization length {len} != feature length {}",
                spec.feature_length
            )));
        }
        let mean = r.f64s(len)?;
        let std = r.f64s(len)?;
        model.norm = Some(NormStats {
            mean,
            std,
            split,
            frame_count,
        });
    }

    let shapes = expected_shapes(&model);
    let count = r.usize()?;
    if count != shapes.len() {
        return Err(LoadError::ShapeInconsistency(format!(
            "{count} tensors stored, spec implies {}",
            shapes.len()
        )));
    }
    for (i, (dst, expected)) in model.parameters_mut().into_iter().zip(shapes).enumerate() {
        let rows = r.usize()?;
        let cols = r.usize()?;
        if (rows, cols) != expected {
            return Err(LoadError::ShapeInconsistency(format!(
                "tensor {i} header says {rows}x{cols}, spec implies {}x{}",
                expected.0, expected.1
            )));
        }
        dst.copy_from_slice(&r.f64s(rows * cols)?);
    }
    if r.remaining() != 0 {
        return Err(LoadError::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    for (i, layer) in model.layers().iter().enumerate() {
        if let Some(mask) = layer.mask() {
            let leaked = layer
                .weights()
                .iter()
                .any(|w| w.as_slice().iter().zip(mask.cells()).any(|(&v, &on)| !on && v != 0.0));
            if leaked {
                return Err(LoadError::Corrupt(format!("layer {i} has non-zero masked weights")));
            }
        }
    }
    Ok(model)
}

/// Writes the model atomically (temp file, then rename).
pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_model(model)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_model(&bytes)?)
}
