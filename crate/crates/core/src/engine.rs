//! Baseline layer-by-layer execution with MAC instrumentation.
//!
//! Convolutions are direct nested loops. Each output activation accumulates in a
//! fixed order (input channel, kernel row, kernel column) and adds the bias last,
//! so any path that computes the same cell through [`conv_cell`] gets the same bits.

use serde::Serialize;

use crate::error::{validation, Result};
use crate::model::{Conv2d, LayerKind, LayerSpec, Linear, MaxPool2d, Model};
use crate::tensor::{Shape3, Tensor};

/// Pre-activation value of one conv output cell. Padding positions contribute nothing.
#[inline]
pub fn conv_cell(ifmap: &Tensor, conv: &Conv2d, oc: usize, oy: usize, ox: usize) -> f32 {
    let shape = ifmap.shape();
    let (h, w) = (shape.height() as isize, shape.width() as isize);
    let data = ifmap.data();
    let plane = shape.plane_len();
    let kernel_len = conv.kernel_h * conv.kernel_w;
    let filter =
        &conv.weights[oc * conv.in_channels * kernel_len..][..conv.in_channels * kernel_len];
    let iy0 = (oy * conv.stride) as isize - conv.pad as isize;
    let ix0 = (ox * conv.stride) as isize - conv.pad as isize;

    let mut acc = 0.0f32;
    for c in 0..conv.in_channels {
        let src = &data[c * plane..(c + 1) * plane];
        let taps = &filter[c * kernel_len..(c + 1) * kernel_len];
        for ky in 0..conv.kernel_h {
            let iy = iy0 + ky as isize;
            if iy < 0 || iy >= h {
                continue;
            }
            let row = &src[iy as usize * w as usize..][..w as usize];
            let tap_row = &taps[ky * conv.kernel_w..][..conv.kernel_w];
            for (kx, &tap) in tap_row.iter().enumerate() {
                let ix = ix0 + kx as isize;
                if ix < 0 || ix >= w {
                    continue;
                }
                acc += tap * row[ix as usize];
            }
        }
    }
    acc + conv.bias[oc]
}

/// Full convolution, adding the executed MAC count to `macs`.
pub fn conv2d_counted(ifmap: &Tensor, conv: &Conv2d, macs: &mut u64) -> Result<Tensor> {
    let out_shape = conv.output_shape(ifmap.shape())?;
    let per_activation = conv.macs_per_activation();
    let mut out = Tensor::zeros(out_shape);
    let data = out.data_mut();
    let mut i = 0;
    for oc in 0..out_shape.channels() {
        for oy in 0..out_shape.height() {
            for ox in 0..out_shape.width() {
                data[i] = conv_cell(ifmap, conv, oc, oy, ox);
                *macs += per_activation;
                i += 1;
            }
        }
    }
    Ok(out)
}

pub fn conv2d(ifmap: &Tensor, conv: &Conv2d) -> Result<Tensor> {
    conv2d_counted(ifmap, conv, &mut 0)
}

#[inline]
pub fn relu_value(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Elementwise `max(0, x)`; negatives (and `-0.0`) become exact `0.0`.
pub fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = relu_value(*v));
    out
}

pub fn maxpool2d(t: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let pool = MaxPool2d { kernel, stride };
    let out_shape = pool.output_shape(t.shape())?;
    let mut out = Tensor::zeros(out_shape);
    for c in 0..out_shape.channels() {
        for oy in 0..out_shape.height() {
            for ox in 0..out_shape.width() {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        best = best.max(t.at(c, oy * stride + ky, ox * stride + kx));
                    }
                }
                out.set(c, oy, ox, best);
            }
        }
    }
    Ok(out)
}

pub fn linear_counted(v: &[f32], layer: &Linear, macs: &mut u64) -> Result<Vec<f32>> {
    if v.len() != layer.in_features {
        return validation(format!(
            "linear expects {} inputs, got {}",
            layer.in_features,
            v.len()
        ));
    }
    Ok(layer
        .weights
        .chunks_exact(layer.in_features)
        .zip(&layer.bias)
        .map(|(row, &b)| {
            let mut acc = 0.0f32;
            for (&w, &x) in row.iter().zip(v) {
                acc += w * x;
            }
            *macs += layer.in_features as u64;
            acc + b
        })
        .collect())
}

pub fn linear(v: &[f32], layer: &Linear) -> Result<Vec<f32>> {
    linear_counted(v, layer, &mut 0)
}

/// Runs one layer on the baseline path, adding executed MACs to `macs`.
pub fn apply_layer(layer: &LayerSpec, input: &Tensor, macs: &mut u64) -> Result<Tensor> {
    match layer {
        LayerSpec::Conv(conv) => conv2d_counted(input, conv, macs),
        LayerSpec::Relu => Ok(relu(input)),
        LayerSpec::MaxPool(p) => maxpool2d(input, p.kernel, p.stride),
        LayerSpec::Flatten => input.clone().reshaped(Shape3::vector(input.len())?),
        LayerSpec::Linear(l) => Tensor::from_vector(linear_counted(input.data(), l, macs)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerMacs {
    pub layer_index: usize,
    pub kind: LayerKind,
    pub macs_baseline: u64,
    pub macs_executed: u64,
}

impl LayerMacs {
    pub fn macs_saved(&self) -> u64 {
        self.macs_baseline - self.macs_executed
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MacTotals {
    pub macs_baseline: u64,
    pub macs_executed: u64,
    pub macs_saved: u64,
}

/// Per-layer MAC counts for one or more forward passes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MacLedger {
    pub layers: Vec<LayerMacs>,
}

impl MacLedger {
    fn sum<'a>(rows: impl Iterator<Item = &'a LayerMacs>) -> MacTotals {
        rows.fold(MacTotals::default(), |t, r| MacTotals {
            macs_baseline: t.macs_baseline + r.macs_baseline,
            macs_executed: t.macs_executed + r.macs_executed,
            macs_saved: t.macs_saved + r.macs_saved(),
        })
    }

    pub fn totals(&self) -> MacTotals {
        Self::sum(self.layers.iter())
    }

    pub fn conv_totals(&self) -> MacTotals {
        Self::sum(self.layers.iter().filter(|r| r.kind == LayerKind::Conv))
    }

    /// Adds another ledger of the same model row by row.
    pub fn merge(&mut self, other: &MacLedger) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self
                .layers
                .iter()
                .zip(&other.layers)
                .any(|(a, b)| a.layer_index != b.layer_index || a.kind != b.kind)
        {
            return validation("cannot merge MAC ledgers of different models");
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.macs_baseline += b.macs_baseline;
            a.macs_executed += b.macs_executed;
        }
        Ok(())
    }
}

/// Outputs of every layer of one forward pass plus its MAC ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `outputs[i]` is the output of `model.layers[i]`.
    pub outputs: Vec<Tensor>,
    pub logits: Vec<f32>,
    pub ledger: MacLedger,
}

impl ForwardTrace {
    /// Input seen by layer `index`.
    pub fn layer_input<'a>(&'a self, input: &'a Tensor, index: usize) -> &'a Tensor {
        if index == 0 {
            input
        } else {
            &self.outputs[index - 1]
        }
    }
}

pub(crate) fn check_input(model: &Model, input: &Tensor) -> Result<Vec<Shape3>> {
    let shapes = model.layer_shapes()?;
    if input.shape() != model.input_shape {
        return validation(format!(
            "input shape {} does not match model input {}",
            input.shape(),
            model.input_shape
        ));
    }
    Ok(shapes)
}

pub fn forward_baseline(model: &Model, input: &Tensor) -> Result<ForwardTrace> {
    let shapes = check_input(model, input)?;
    let mut outputs: Vec<Tensor> = Vec::with_capacity(model.layers.len());
    let mut rows = Vec::with_capacity(model.layers.len());
    for (i, (layer, shape)) in model.layers.iter().zip(&shapes).enumerate() {
        let mut macs = 0;
        let out = apply_layer(layer, outputs.last().unwrap_or(input), &mut macs)?;
        debug_assert_eq!(out.shape(), *shape);
        rows.push(LayerMacs {
            layer_index: i,
            kind: layer.kind(),
            macs_baseline: shape.len() as u64 * layer.macs_per_activation(),
            macs_executed: macs,
        });
        outputs.push(out);
    }
    let logits = outputs
        .last()
        .map(|t| t.data().to_vec())
        .unwrap_or_default();
    Ok(ForwardTrace {
        outputs,
        logits,
        ledger: MacLedger { layers: rows },
    })
}

/// MAC cost of one inference derived from layer shapes alone.
pub fn analytic_macs(model: &Model) -> Result<MacLedger> {
    let shapes = model.layer_shapes()?;
    Ok(MacLedger {
        layers: model
            .layers
            .iter()
            .zip(shapes)
            .enumerate()
            .map(|(i, (layer, shape))| {
                let macs = shape.len() as u64 * layer.macs_per_activation();
                LayerMacs {
                    layer_index: i,
                    kind: layer.kind(),
                    macs_baseline: macs,
                    macs_executed: macs,
                }
            })
            .collect(),
    })
}
