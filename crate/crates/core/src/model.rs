//! Layer specifications, shape composition and the ZVPM model container.
//!
//! A ZVPM file is laid out as
//!
//! ```text
//! "ZVPM" | u32 LE version | u64 LE header_len | header (UTF-8 JSON) | f32 LE weight blobs
//! ```
//!
//! The header lists the layers in order. Each parameterised layer declares the
//! lengths of its weight and bias blobs, which follow the header in layer order
//! (weights first, then bias).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::tensor::Shape3;

pub const ZVPM_MAGIC: [u8; 4] = *b"ZVPM";
pub const ZVPM_VERSION: u32 = 1;

/// Upper bound on the header size accepted by the loader.
const MAX_HEADER_LEN: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_channels x in_channels x kernel_h x kernel_w`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    /// MACs needed for a single output activation.
    pub fn macs_per_activation(&self) -> u64 {
        (self.in_channels * self.kernel_h * self.kernel_w) as u64
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        if input.channels() != self.in_channels {
            return validation(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            ));
        }
        let span_h = input.height() + 2 * self.pad;
        let span_w = input.width() + 2 * self.pad;
        if span_h < self.kernel_h || span_w < self.kernel_w || self.stride == 0 {
            return validation(format!(
                "conv {}x{} stride {} pad {} produces no output on input {input}",
                self.kernel_h, self.kernel_w, self.stride, self.pad
            ));
        }
        Shape3::new(
            self.out_channels,
            (span_h - self.kernel_h) / self.stride + 1,
            (span_w - self.kernel_w) / self.stride + 1,
        )
        .map_err(|e| Error::Validation(e.to_string()))
    }

    fn check(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return validation("conv channel counts must be positive");
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return validation("conv kernel dimensions must be positive");
        }
        if self.stride == 0 {
            return validation("conv stride must be at least 1");
        }
        let expected = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.weights.len() != expected {
            return validation(format!(
                "conv weight count {} != {}x{}x{}x{} = {expected}",
                self.weights.len(),
                self.out_channels,
                self.in_channels,
                self.kernel_h,
                self.kernel_w
            ));
        }
        if self.bias.len() != self.out_channels {
            return validation(format!(
                "conv bias count {} != out_channels {}",
                self.bias.len(),
                self.out_channels
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
}

impl MaxPool2d {
    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        if self.kernel == 0 || self.stride == 0 {
            return validation("maxpool kernel and stride must be positive");
        }
        if self.kernel > input.height() || self.kernel > input.width() {
            return validation(format!(
                "maxpool kernel {} exceeds input {input}",
                self.kernel
            ));
        }
        Shape3::new(
            input.channels(),
            (input.height() - self.kernel) / self.stride + 1,
            (input.width() - self.kernel) / self.stride + 1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `out_features x in_features`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        if input.len() != self.in_features {
            return validation(format!(
                "linear expects {} inputs, got {} from {input}",
                self.in_features,
                input.len()
            ));
        }
        Shape3::vector(self.out_features).map_err(|e| Error::Validation(e.to_string()))
    }

    fn check(&self) -> Result<()> {
        if self.in_features == 0 || self.out_features == 0 {
            return validation("linear feature counts must be positive");
        }
        if self.weights.len() != self.in_features * self.out_features {
            return validation(format!(
                "linear weight count {} != {}x{}",
                self.weights.len(),
                self.out_features,
                self.in_features
            ));
        }
        if self.bias.len() != self.out_features {
            return validation(format!(
                "linear bias count {} != out_features {}",
                self.bias.len(),
                self.out_features
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(Conv2d),
    Relu,
    MaxPool(MaxPool2d),
    Flatten,
    Linear(Linear),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool,
    Flatten,
    Linear,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear => "linear",
        }
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv(_) => LayerKind::Conv,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::MaxPool(_) => LayerKind::MaxPool,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::Linear(_) => LayerKind::Linear,
        }
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        match self {
            LayerSpec::Conv(conv) => conv.output_shape(input),
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool(pool) => pool.output_shape(input),
            LayerSpec::Flatten => Shape3::vector(input.len()),
            LayerSpec::Linear(linear) => linear.output_shape(input),
        }
    }

    /// Analytic MAC cost of one output activation (0 for parameter-free layers).
    pub fn macs_per_activation(&self) -> u64 {
        match self {
            LayerSpec::Conv(conv) => conv.macs_per_activation(),
            LayerSpec::Linear(linear) => linear.in_features as u64,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub input_shape: Shape3,
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
}

impl Model {
    /// Checks every layer's parameters and that shapes compose from input to logits.
    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    /// Output shape of every layer, in order. Fails if the model is not valid.
    pub fn layer_shapes(&self) -> Result<Vec<Shape3>> {
        if self.layers.is_empty() {
            return validation("model has no layers");
        }
        if !self.layers.iter().any(|l| matches!(l, LayerSpec::Conv(_))) {
            return validation("model has no conv layer");
        }
        let mut shape = self.input_shape;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let checked = match layer {
                LayerSpec::Conv(conv) => conv.check(),
                LayerSpec::Linear(linear) => linear.check(),
                _ => Ok(()),
            };
            shape = checked
                .and_then(|_| layer.output_shape(shape))
                .map_err(|e| match e {
                    Error::Validation(msg) | Error::InvalidShape(msg) => {
                        Error::Validation(format!("layer {i} ({}): {msg}", layer.kind().as_str()))
                    }
                    other => other,
                })?;
            shapes.push(shape);
        }
        if shape.len() != self.class_count {
            return validation(format!(
                "final layer produces {} values but class_count is {}",
                shape.len(),
                self.class_count
            ));
        }
        Ok(shapes)
    }

    /// Layer indices of all conv layers, in order. The position in this list is the conv ordinal.
    pub fn conv_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Whether the layer at `index` is immediately followed by a ReLU.
    pub fn followed_by_relu(&self, index: usize) -> bool {
        matches!(self.layers.get(index + 1), Some(LayerSpec::Relu))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    name: String,
    input_shape: [usize; 3],
    class_count: usize,
    layers: Vec<LayerHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerHeader {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
        weight_len: usize,
        bias_len: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
        weight_len: usize,
        bias_len: usize,
    },
}

fn header_of(model: &Model) -> Header {
    let layers = model
        .layers
        .iter()
        .map(|layer| match layer {
            LayerSpec::Conv(c) => LayerHeader::Conv {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel_h: c.kernel_h,
                kernel_w: c.kernel_w,
                stride: c.stride,
                pad: c.pad,
                weight_len: c.weights.len(),
                bias_len: c.bias.len(),
            },
            LayerSpec::Relu => LayerHeader::Relu,
            LayerSpec::MaxPool(p) => LayerHeader::MaxPool {
                kernel: p.kernel,
                stride: p.stride,
            },
            LayerSpec::Flatten => LayerHeader::Flatten,
            LayerSpec::Linear(l) => LayerHeader::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
                weight_len: l.weights.len(),
                bias_len: l.bias.len(),
            },
        })
        .collect();
    Header {
        name: model.name.clone(),
        input_shape: model.input_shape.as_array(),
        class_count: model.class_count,
        layers,
    }
}

/// Serializes a validated model to ZVPM bytes.
pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    model.validate()?;
    let header = serde_json::to_vec(&header_of(model))
        .map_err(|e| Error::Format(format!("header encoding failed: {e}")))?;
    let mut out = Vec::with_capacity(16 + header.len());
    out.extend_from_slice(&ZVPM_MAGIC);
    out.extend_from_slice(&ZVPM_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for layer in &model.layers {
        let (weights, bias) = match layer {
            LayerSpec::Conv(c) => (&c.weights, &c.bias),
            LayerSpec::Linear(l) => (&l.weights, &l.bias),
            _ => continue,
        };
        for v in weights.iter().chain(bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_model(model)?;
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Parses a ZVPM stream. Truncation surfaces as an I/O error.
pub fn decode_model(r: &mut impl Read) -> Result<Model> {
    let magic: [u8; 4] = read_array(r)?;
    if magic != ZVPM_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02X?}")));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != ZVPM_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(read_array(r)?);
    if header_len > MAX_HEADER_LEN {
        return Err(Error::Format(format!(
            "header length {header_len} too large"
        )));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("malformed header: {e}")))?;

    let input_shape = Shape3::new(
        header.input_shape[0],
        header.input_shape[1],
        header.input_shape[2],
    )
    .map_err(|e| Error::Validation(e.to_string()))?;

    let mut layers = Vec::with_capacity(header.layers.len());
    for lh in header.layers {
        layers.push(match lh {
            LayerHeader::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                pad,
                weight_len,
                bias_len,
            } => LayerSpec::Conv(Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                pad,
                weights: read_f32s(r, weight_len)?,
                bias: read_f32s(r, bias_len)?,
            }),
            LayerHeader::Relu => LayerSpec::Relu,
            LayerHeader::MaxPool { kernel, stride } => {
                LayerSpec::MaxPool(MaxPool2d { kernel, stride })
            }
            LayerHeader::Flatten => LayerSpec::Flatten,
            LayerHeader::Linear {
                in_features,
                out_features,
                weight_len,
                bias_len,
            } => LayerSpec::Linear(Linear {
                in_features,
                out_features,
                weights: read_f32s(r, weight_len)?,
                bias: read_f32s(r, bias_len)?,
            }),
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after weight blobs".into()));
    }

    let model = Model {
        name: header.name,
        input_shape,
        layers,
        class_count: header.class_count,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let mut reader = BufReader::new(File::open(path)?);
    decode_model(&mut reader)
}
