//! Spatial-correlation profiling of conv ofmaps.
//!
//! For a window size `k`, each channel plane is tiled with complete, in-bounds,
//! non-overlapping `k x k` windows anchored at `(0, 0)`; partial windows at the
//! right and bottom margins are left out, so margin cells never count as grouped.
//! The zero-window fraction is the share of all activations that sit in windows
//! whose cells are all zero. It shares its denominator with the sparsity, so dividing
//! one by the other gives the share of zeros that are grouped. With `k = 1` it is the
//! plain sparsity.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::LabeledDataset;
use crate::engine::forward_baseline;
use crate::error::{validation, Error, Result};
use crate::model::Model;
use crate::tensor::{count_zeros, is_zero, Tensor};

pub const MAX_PROFILE_WINDOW: usize = 5;

/// Cells inside all-zero complete windows and all cells of the map, summed over channels.
/// `None` when `k` does not fit the plane.
pub fn window_zero_counts(ofmap: &Tensor, k: usize, threshold: f32) -> Option<(u64, u64)> {
    let shape = ofmap.shape();
    let (h, w) = (shape.height(), shape.width());
    if k == 0 || k > h.min(w) {
        return None;
    }
    let (rows, cols) = (h / k, w / k);
    let mut zero_cells = 0u64;
    for c in 0..shape.channels() {
        let plane = ofmap.plane(c);
        for wy in 0..rows {
            for wx in 0..cols {
                let all_zero = (wy * k..wy * k + k).all(|y| {
                    plane[y * w + wx * k..y * w + wx * k + k]
                        .iter()
                        .all(|&v| is_zero(v, threshold))
                });
                if all_zero {
                    zero_cells += (k * k) as u64;
                }
            }
        }
    }
    Some((zero_cells, shape.len() as u64))
}

/// Fraction of the map's activations that lie in all-zero `k x k` windows.
pub fn measure_window_fraction(ofmap: &Tensor, k: usize, threshold: f32) -> Result<f64> {
    if k == 0 {
        return validation("window size must be at least 1");
    }
    let (zeros, total) = window_zero_counts(ofmap, k, threshold).ok_or_else(|| {
        Error::UndefinedMetric(format!(
            "window {k}x{k} does not fit ofmap {}",
            ofmap.shape()
        ))
    })?;
    Ok(zeros as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowFraction {
    pub k: usize,
    /// `None` when the window does not fit this layer's ofmap.
    pub zero_window_fraction: Option<f64>,
    /// `zero_window_fraction / sparsity`; `None` when either is undefined or sparsity is 0.
    pub grouped_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCorrelation {
    pub layer_index: usize,
    pub conv_index: usize,
    pub ofmap_shape: [usize; 3],
    /// Whether the measured map is the post-ReLU output.
    pub post_relu: bool,
    pub sparsity: f64,
    pub windows: Vec<WindowFraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkWindow {
    pub k: usize,
    /// Unweighted mean over the layers where `k` fits.
    pub layer_mean: Option<f64>,
    /// Weighted by the number of activations per layer.
    pub activation_weighted: Option<f64>,
    pub grouped_layer_mean: Option<f64>,
    pub grouped_activation_weighted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkCorrelation {
    pub sparsity_layer_mean: f64,
    pub sparsity_activation_weighted: f64,
    pub windows: Vec<NetworkWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub model: String,
    pub image_count: usize,
    pub threshold: f32,
    pub window_sizes: Vec<usize>,
    pub layers: Vec<LayerCorrelation>,
    pub network: NetworkCorrelation,
}

/// Integer tallies for one conv layer; merged by summation.
#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerTally {
    zeros: u64,
    total: u64,
    /// Per requested `k`: (zero-window cells, all cells); `None` when `k` does not fit.
    windows: Vec<Option<(u64, u64)>>,
}

impl LayerTally {
    fn add(&mut self, other: &LayerTally) {
        self.zeros += other.zeros;
        self.total += other.total;
        for (a, b) in self.windows.iter_mut().zip(&other.windows) {
            if let (Some((za, ca)), Some((zb, cb))) = (a.as_mut(), b) {
                *za += zb;
                *ca += cb;
            }
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs the baseline pass on every image and aggregates per-layer correlation
/// statistics. Each image carries equal weight.
pub fn profile_model(
    model: &Model,
    dataset: &LabeledDataset,
    ks: &[usize],
    threshold: f32,
) -> Result<CorrelationReport> {
    if dataset.is_empty() {
        return validation("cannot profile an empty dataset");
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > MAX_PROFILE_WINDOW) {
        return validation(format!("window size {k} outside 1..={MAX_PROFILE_WINDOW}"));
    }
    if threshold.is_nan() || threshold < 0.0 {
        return validation("zero threshold must be non-negative");
    }
    let shapes = model.layer_shapes()?;
    dataset.check_against(model.input_shape, usize::MAX)?;

    // measured map per conv layer: the ReLU output when one follows
    let probes: Vec<(usize, usize, bool)> = model
        .conv_layer_indices()
        .into_iter()
        .map(|i| {
            let relu = model.followed_by_relu(i);
            (i, if relu { i + 1 } else { i }, relu)
        })
        .collect();

    let per_image = dataset
        .images
        .par_iter()
        .map(|img| {
            let trace = forward_baseline(model, img)?;
            Ok(probes
                .iter()
                .map(|&(_, out, _)| {
                    let map = &trace.outputs[out];
                    LayerTally {
                        zeros: count_zeros(map, threshold) as u64,
                        total: map.len() as u64,
                        windows: ks
                            .iter()
                            .map(|&k| window_zero_counts(map, k, threshold))
                            .collect(),
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tallies = per_image[0].clone();
    for image in &per_image[1..] {
        for (acc, t) in tallies.iter_mut().zip(image) {
            acc.add(t);
        }
    }

    let layers: Vec<LayerCorrelation> = probes
        .iter()
        .zip(&tallies)
        .enumerate()
        .map(|(conv_index, (&(layer_index, _, post_relu), tally))| {
            let sparsity = tally.zeros as f64 / tally.total as f64;
            LayerCorrelation {
                layer_index,
                conv_index,
                ofmap_shape: shapes[layer_index].as_array(),
                post_relu,
                sparsity,
                windows: ks
                    .iter()
                    .zip(&tally.windows)
                    .map(|(&k, counts)| {
                        let fraction = counts.and_then(|(z, c)| ratio(z, c));
                        WindowFraction {
                            k,
                            zero_window_fraction: fraction,
                            grouped_fraction: fraction
                                .filter(|_| sparsity > 0.0)
                                .map(|f| f / sparsity),
                        }
                    })
                    .collect(),
            }
        })
        .collect();

    let total_cells: u64 = tallies.iter().map(|t| t.total).sum();
    let total_zeros: u64 = tallies.iter().map(|t| t.zeros).sum();
    let network = NetworkCorrelation {
        sparsity_layer_mean: mean(layers.iter().map(|l| l.sparsity)).unwrap_or(0.0),
        sparsity_activation_weighted: total_zeros as f64 / total_cells as f64,
        windows: ks
            .iter()
            .enumerate()
            .map(|(ki, &k)| {
                let fitting: Vec<&LayerTally> =
                    tallies.iter().filter(|t| t.windows[ki].is_some()).collect();
                let zero_cells: u64 = fitting
                    .iter()
                    .filter_map(|t| t.windows[ki])
                    .map(|w| w.0)
                    .sum();
                let cells: u64 = fitting.iter().map(|t| t.total).sum();
                let zeros: u64 = fitting.iter().map(|t| t.zeros).sum();
                NetworkWindow {
                    k,
                    layer_mean: mean(
                        layers
                            .iter()
                            .filter_map(|l| l.windows[ki].zero_window_fraction),
                    ),
                    activation_weighted: ratio(zero_cells, cells),
                    grouped_layer_mean: mean(
                        layers.iter().filter_map(|l| l.windows[ki].grouped_fraction),
                    ),
                    grouped_activation_weighted: ratio(zero_cells, zeros),
                }
            })
            .collect(),
    };

    Ok(CorrelationReport {
        model: model.name.clone(),
        image_count: dataset.len(),
        threshold,
        window_sizes: ks.to_vec(),
        layers,
        network,
    })
}
