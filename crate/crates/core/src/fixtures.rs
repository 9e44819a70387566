//! Seeded model and input generators.
//!
//! These back the checked-in `tiny_cnn` fixture and the randomized test suites.
//! Everything here is a pure function of the seed.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::write_idx_dataset;
use crate::engine::forward_baseline;
use crate::error::Result;
use crate::model::{save_model, Conv2d, LayerSpec, Linear, MaxPool2d, Model};
use crate::report::argmax;
use crate::tensor::{Shape3, Tensor};

pub const TINY_CNN_SEED: u64 = 2018;
pub const FIXTURE_IMAGES_SEED: u64 = 1812;
pub const FIXTURE_IMAGE_COUNT: usize = 256;
pub const FIXTURE_SIDE: usize = 16;

pub const TINY_CNN_FILE: &str = "tiny_cnn.zvpm";
pub const FIXTURE_IMAGES_FILE: &str = "fixture-images-idx3-ubyte";
pub const FIXTURE_LABELS_FILE: &str = "fixture-labels-idx1-ubyte";

fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_conv(
    rng: &mut impl Rng,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    bias_range: Option<(f32, f32)>,
) -> Conv2d {
    let fan_in = (in_channels * kernel * kernel) as f32;
    let a = (6.0 / fan_in).sqrt();
    Conv2d {
        in_channels,
        out_channels,
        kernel_h: kernel,
        kernel_w: kernel,
        stride,
        pad,
        weights: uniform_vec(rng, out_channels * in_channels * kernel * kernel, -a, a),
        bias: match bias_range {
            Some((lo, hi)) => uniform_vec(rng, out_channels, lo, hi),
            None => vec![0.0; out_channels],
        },
    }
}

fn random_linear(
    rng: &mut impl Rng,
    in_features: usize,
    out_features: usize,
    zero_bias: bool,
) -> Linear {
    let a = (6.0 / in_features as f32).sqrt();
    Linear {
        in_features,
        out_features,
        weights: uniform_vec(rng, in_features * out_features, -a, a),
        bias: if zero_bias {
            vec![0.0; out_features]
        } else {
            uniform_vec(rng, out_features, -0.1, 0.1)
        },
    }
}

/// Two conv layers with ReLU and 2x2 pooling, then a linear classifier over 10 classes.
pub fn tiny_cnn() -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(TINY_CNN_SEED);
    let conv1 = random_conv(&mut rng, 1, 4, 3, 1, 1, Some((-0.35, 0.05)));
    let conv2 = random_conv(&mut rng, 4, 8, 3, 1, 1, Some((-0.35, 0.05)));
    let side = FIXTURE_SIDE / 4;
    let fc = random_linear(&mut rng, 8 * side * side, 10, false);
    Model {
        name: "tiny_cnn".into(),
        input_shape: Shape3::new(1, FIXTURE_SIDE, FIXTURE_SIDE).unwrap(),
        layers: vec![
            LayerSpec::Conv(conv1),
            LayerSpec::Relu,
            LayerSpec::MaxPool(MaxPool2d {
                kernel: 2,
                stride: 2,
            }),
            LayerSpec::Conv(conv2),
            LayerSpec::Relu,
            LayerSpec::MaxPool(MaxPool2d {
                kernel: 2,
                stride: 2,
            }),
            LayerSpec::Flatten,
            LayerSpec::Linear(fc),
        ],
        class_count: 10,
    }
}

/// Strokes and boxes on a black background, 8-bit grayscale.
pub fn stroke_image(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<u8> {
    let mut img = vec![0u8; rows * cols];
    let shapes = rng.random_range(1..=3);
    for _ in 0..shapes {
        let intensity: u8 = rng.random_range(96..=255);
        let thick = rng.random_range(1..=2usize);
        match rng.random_range(0..3) {
            0 => {
                // filled box
                let y0 = rng.random_range(0..rows);
                let x0 = rng.random_range(0..cols);
                let y1 = (y0 + rng.random_range(2..=rows / 2)).min(rows);
                let x1 = (x0 + rng.random_range(2..=cols / 2)).min(cols);
                for y in y0..y1 {
                    for x in x0..x1 {
                        img[y * cols + x] = intensity;
                    }
                }
            }
            _ => {
                // line segment
                let (y0, x0) = (
                    rng.random_range(0..rows) as f32,
                    rng.random_range(0..cols) as f32,
                );
                let (y1, x1) = (
                    rng.random_range(0..rows) as f32,
                    rng.random_range(0..cols) as f32,
                );
                let steps = 2 * rows.max(cols);
                for s in 0..=steps {
                    let f = s as f32 / steps as f32;
                    let y = (y0 + f * (y1 - y0)).round() as usize;
                    let x = (x0 + f * (x1 - x0)).round() as usize;
                    for dy in 0..thick {
                        for dx in 0..thick {
                            if y + dy < rows && x + dx < cols {
                                img[(y + dy) * cols + x + dx] = intensity;
                            }
                        }
                    }
                }
            }
        }
    }
    img
}

pub fn stroke_images(count: usize, rows: usize, cols: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| stroke_image(&mut rng, rows, cols))
        .collect()
}

pub fn pixels_to_tensor(pixels: &[u8], rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        Shape3::new(1, rows, cols).unwrap(),
        pixels.iter().map(|&p| p as f32 * (1.0 / 255.0)).collect(),
    )
    .unwrap()
}

/// The fixture image set with labels taken from the baseline top-1 class of `model`.
pub fn fixture_dataset(model: &Model) -> Result<(Vec<Vec<u8>>, Vec<u8>)> {
    let images = stroke_images(
        FIXTURE_IMAGE_COUNT,
        FIXTURE_SIDE,
        FIXTURE_SIDE,
        FIXTURE_IMAGES_SEED,
    );
    let labels = images
        .iter()
        .map(|px| {
            let trace = forward_baseline(model, &pixels_to_tensor(px, FIXTURE_SIDE, FIXTURE_SIDE))?;
            Ok(argmax(&trace.logits) as u8)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((images, labels))
}

/// Writes the tiny_cnn model and its 256-image labelled set into `dir`.
pub fn write_fixture_set(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let model = tiny_cnn();
    save_model(&model, dir.join(TINY_CNN_FILE))?;
    let (images, labels) = fixture_dataset(&model)?;
    write_idx_dataset(
        &images,
        FIXTURE_SIDE,
        FIXTURE_SIDE,
        &labels,
        dir.join(FIXTURE_IMAGES_FILE),
        dir.join(FIXTURE_LABELS_FILE),
    )
}

#[derive(Debug, Clone)]
pub struct RandomModelParams {
    /// Fixed input shape; random `(1..=3, 6..=14, 6..=14)` when `None`.
    pub input_shape: Option<Shape3>,
    pub max_conv_layers: usize,
    pub max_channels: usize,
    pub class_count: usize,
    pub zero_bias: bool,
    /// Probability that a conv layer is followed by ReLU.
    pub relu_probability: f64,
}

impl Default for RandomModelParams {
    fn default() -> Self {
        RandomModelParams {
            input_shape: None,
            max_conv_layers: 3,
            max_channels: 6,
            class_count: 10,
            zero_bias: false,
            relu_probability: 0.85,
        }
    }
}

/// A random valid feed-forward model: conv stack (optional ReLU / pooling), flatten, linear head.
pub fn random_model(rng: &mut impl Rng, params: &RandomModelParams) -> Model {
    let input_shape = params.input_shape.unwrap_or_else(|| {
        Shape3::new(
            rng.random_range(1..=3),
            rng.random_range(6..=14),
            rng.random_range(6..=14),
        )
        .unwrap()
    });
    let bias_range = (!params.zero_bias).then_some((-0.4f32, 0.1f32));
    let conv_count = rng.random_range(1..=params.max_conv_layers.max(1));
    let mut layers = Vec::new();
    let mut shape = input_shape;
    for _ in 0..conv_count {
        let min_side = shape.height().min(shape.width());
        let kernel = rng.random_range(1..=3usize.min(min_side + 2));
        let pad = rng.random_range(0..=kernel / 2);
        let stride = if rng.random_bool(0.2) { 2 } else { 1 };
        let out_c = rng.random_range(1..=params.max_channels);
        let conv = random_conv(
            rng,
            shape.channels(),
            out_c,
            kernel,
            stride,
            pad,
            bias_range,
        );
        let Ok(next) = conv.output_shape(shape) else {
            continue;
        };
        layers.push(LayerSpec::Conv(conv));
        shape = next;
        if rng.random_bool(params.relu_probability) {
            layers.push(LayerSpec::Relu);
        }
        if shape.height() >= 6 && shape.width() >= 6 && rng.random_bool(0.3) {
            let pool = MaxPool2d {
                kernel: 2,
                stride: 2,
            };
            shape = pool.output_shape(shape).unwrap();
            layers.push(LayerSpec::MaxPool(pool));
        }
    }
    if layers.is_empty() {
        let conv = random_conv(rng, shape.channels(), 2, 1, 1, 0, bias_range);
        shape = conv.output_shape(shape).unwrap();
        layers.push(LayerSpec::Conv(conv));
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Flatten);
    let mut features = shape.len();
    if rng.random_bool(0.3) {
        let hidden = rng.random_range(4..=16);
        layers.push(LayerSpec::Linear(random_linear(
            rng,
            features,
            hidden,
            params.zero_bias,
        )));
        layers.push(LayerSpec::Relu);
        features = hidden;
    }
    layers.push(LayerSpec::Linear(random_linear(
        rng,
        features,
        params.class_count,
        params.zero_bias,
    )));
    let model = Model {
        name: "random".into(),
        input_shape,
        layers,
        class_count: params.class_count,
    };
    debug_assert!(model.validate().is_ok());
    model
}

/// Sparse blob-like input in `[0, 1]`: mostly background with a few bright regions.
pub fn random_input(rng: &mut impl Rng, shape: Shape3) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for c in 0..shape.channels() {
        let px = stroke_image(rng, shape.height().max(4), shape.width().max(4));
        let cols = shape.width().max(4);
        for y in 0..shape.height() {
            for x in 0..shape.width() {
                t.set(c, y, x, px[y * cols + x] as f32 / 255.0);
            }
        }
    }
    t
}
