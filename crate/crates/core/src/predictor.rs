//! Zero-value prediction over diagonal windows.
//!
//! Each output channel of an enabled conv layer is tiled with non-overlapping
//! `k x k` windows anchored at `(0, 0)`; the plane is conceptually zero-padded up
//! to a multiple of `k`. Within each window the main-diagonal cells are computed
//! first. If every real diagonal cell is zero after ReLU (padded cells count as
//! zero), the remaining real cells of the window are written as `0.0` without
//! being computed. Otherwise they are computed normally.
//!
//! Skipped cells are still evaluated once, off the books, so every prediction can
//! be classified as true (the cell really was zero) or false. Those evaluations
//! are not charged to the executed MAC count.

use std::str::FromStr;

use serde::Serialize;

use crate::engine::{
    apply_layer, check_input, conv_cell, relu_value, ForwardTrace, LayerMacs, MacLedger,
};
use crate::error::{validation, Error, Result};
use crate::model::{Conv2d, LayerKind, LayerSpec, Model};
use crate::tensor::{is_zero, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionConfig {
    pub window_k: usize,
    /// One flag per conv layer, in conv order.
    pub enabled_layers: Vec<bool>,
    pub zero_threshold: f32,
}

/// Which conv layers to run with prediction, as given on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelection {
    /// Every conv layer that is followed by ReLU.
    All,
    None,
    /// Conv ordinals (0-based position among conv layers).
    Indices(Vec<usize>),
}

impl FromStr for LayerSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(LayerSelection::All),
            "none" | "" => Ok(LayerSelection::None),
            list => list
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Validation(format!("bad layer index {p:?}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(LayerSelection::Indices),
        }
    }
}

impl PredictionConfig {
    pub fn new(window_k: usize, enabled_layers: Vec<bool>, zero_threshold: f32) -> Result<Self> {
        let cfg = PredictionConfig {
            window_k,
            enabled_layers,
            zero_threshold,
        };
        cfg.check_params()?;
        Ok(cfg)
    }

    /// Prediction on every conv layer that is directly followed by ReLU.
    pub fn all_layers(model: &Model, window_k: usize) -> Result<Self> {
        Self::from_selection(model, window_k, &LayerSelection::All, 0.0)
    }

    pub fn disabled(model: &Model, window_k: usize) -> Result<Self> {
        Self::from_selection(model, window_k, &LayerSelection::None, 0.0)
    }

    pub fn from_selection(
        model: &Model,
        window_k: usize,
        selection: &LayerSelection,
        zero_threshold: f32,
    ) -> Result<Self> {
        let convs = model.conv_layer_indices();
        let enabled = match selection {
            LayerSelection::All => convs.iter().map(|&i| model.followed_by_relu(i)).collect(),
            LayerSelection::None => vec![false; convs.len()],
            LayerSelection::Indices(list) => {
                let mut mask = vec![false; convs.len()];
                for &j in list {
                    if j >= convs.len() {
                        return validation(format!(
                            "conv layer {j} requested but the model has {} conv layers",
                            convs.len()
                        ));
                    }
                    mask[j] = true;
                }
                mask
            }
        };
        let cfg = Self::new(window_k, enabled, zero_threshold)?;
        cfg.check_against(model)?;
        Ok(cfg)
    }

    fn check_params(&self) -> Result<()> {
        if self.window_k < 2 {
            return validation(format!(
                "window size must be at least 2, got {}",
                self.window_k
            ));
        }
        if self.zero_threshold.is_nan() || self.zero_threshold < 0.0 {
            return validation(format!(
                "zero threshold must be non-negative, got {}",
                self.zero_threshold
            ));
        }
        Ok(())
    }

    pub fn check_against(&self, model: &Model) -> Result<()> {
        self.check_params()?;
        let convs = model.conv_layer_indices();
        if self.enabled_layers.len() != convs.len() {
            return validation(format!(
                "layer mask has {} entries but the model has {} conv layers",
                self.enabled_layers.len(),
                convs.len()
            ));
        }
        for (j, (&on, &i)) in self.enabled_layers.iter().zip(&convs).enumerate() {
            if on && !model.followed_by_relu(i) {
                return validation(format!(
                    "conv layer {j} is not followed by ReLU and cannot be predicted"
                ));
            }
        }
        Ok(())
    }
}

/// One `k x k` prediction window of a `height x width` plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub k: usize,
    height: usize,
    width: usize,
}

impl Window {
    pub fn is_real(&self, y: usize, x: usize) -> bool {
        y < self.height && x < self.width
    }

    /// Every cell of the window as `(row, col, is_real)`, row-major.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        (self.row..self.row + self.k).flat_map(move |y| {
            (self.col..self.col + self.k).map(move |x| (y, x, self.is_real(y, x)))
        })
    }

    pub fn real_cell_count(&self) -> usize {
        (self.height.min(self.row + self.k) - self.row)
            * (self.width.min(self.col + self.k) - self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowGrid {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub windows: Vec<Window>,
}

impl WindowGrid {
    pub fn virtual_cell_count(&self) -> usize {
        self.padded_height * self.padded_width - self.height * self.width
    }
}

/// Tiles an `h x w` plane with `k x k` windows anchored at multiples of `k`.
pub fn partition_windows(h: usize, w: usize, k: usize) -> WindowGrid {
    assert!(k > 0, "window size must be positive");
    let rows = h.div_ceil(k);
    let cols = w.div_ceil(k);
    let windows = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| Window {
                row: r * k,
                col: c * k,
                k,
                height: h,
                width: w,
            })
        })
        .collect();
    WindowGrid {
        height: h,
        width: w,
        k,
        padded_height: rows * k,
        padded_width: cols * k,
        windows,
    }
}

/// Main-diagonal cells of a window in plane coordinates, split into real and padded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiagonalCells {
    pub real: Vec<(usize, usize)>,
    pub padded: Vec<(usize, usize)>,
}

pub fn diagonal_cells(window: &Window) -> DiagonalCells {
    let mut cells = DiagonalCells::default();
    for i in 0..window.k {
        let (y, x) = (window.row + i, window.col + i);
        if window.is_real(y, x) {
            cells.real.push((y, x));
        } else {
            cells.padded.push((y, x));
        }
    }
    cells
}

/// Activation breakdown and MAC accounting for one conv layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayerStats {
    pub layer_index: usize,
    pub conv_index: usize,
    pub macs_per_activation: u64,
    pub total_act: u64,
    pub zero_diag_act: u64,
    pub true_pred_act: u64,
    pub false_pred_act: u64,
    pub others_act: u64,
    pub predicted_count: u64,
    pub macs_baseline: u64,
    pub macs_executed: u64,
    pub macs_saved: u64,
}

impl LayerStats {
    pub fn empty(layer_index: usize, conv_index: usize, macs_per_activation: u64) -> Self {
        LayerStats {
            layer_index,
            conv_index,
            macs_per_activation,
            ..Default::default()
        }
    }

    /// Checks the partition and MAC identities; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let parts = self.zero_diag_act + self.true_pred_act + self.false_pred_act + self.others_act;
        if parts != self.total_act {
            return Err(format!(
                "layer {}: categories sum to {parts}, total is {}",
                self.layer_index, self.total_act
            ));
        }
        if self.predicted_count != self.true_pred_act + self.false_pred_act {
            return Err(format!(
                "layer {}: predicted {} != true {} + false {}",
                self.layer_index, self.predicted_count, self.true_pred_act, self.false_pred_act
            ));
        }
        if self.macs_saved != self.predicted_count * self.macs_per_activation {
            return Err(format!(
                "layer {}: saved {} != predicted {} x {}",
                self.layer_index, self.macs_saved, self.predicted_count, self.macs_per_activation
            ));
        }
        if self.macs_executed + self.macs_saved != self.macs_baseline {
            return Err(format!(
                "layer {}: executed {} + saved {} != baseline {}",
                self.layer_index, self.macs_executed, self.macs_saved, self.macs_baseline
            ));
        }
        Ok(())
    }
}

/// Fieldwise sum of two stats records of the same layer.
pub fn merge_stats(a: &LayerStats, b: &LayerStats) -> Result<LayerStats> {
    if a.layer_index != b.layer_index
        || a.conv_index != b.conv_index
        || a.macs_per_activation != b.macs_per_activation
    {
        return validation(format!(
            "cannot merge stats of layer {} with layer {}",
            a.layer_index, b.layer_index
        ));
    }
    Ok(LayerStats {
        layer_index: a.layer_index,
        conv_index: a.conv_index,
        macs_per_activation: a.macs_per_activation,
        total_act: a.total_act + b.total_act,
        zero_diag_act: a.zero_diag_act + b.zero_diag_act,
        true_pred_act: a.true_pred_act + b.true_pred_act,
        false_pred_act: a.false_pred_act + b.false_pred_act,
        others_act: a.others_act + b.others_act,
        predicted_count: a.predicted_count + b.predicted_count,
        macs_baseline: a.macs_baseline + b.macs_baseline,
        macs_executed: a.macs_executed + b.macs_executed,
        macs_saved: a.macs_saved + b.macs_saved,
    })
}

/// Merges per-layer stat lists of the same model pairwise.
pub fn merge_stat_lists(a: &[LayerStats], b: &[LayerStats]) -> Result<Vec<LayerStats>> {
    if a.len() != b.len() {
        return validation("stat lists cover different layer counts");
    }
    a.iter().zip(b).map(|(x, y)| merge_stats(x, y)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MacScope {
    ConvOnly,
    WholeNetwork,
}

impl FromStr for MacScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(MacScope::ConvOnly),
            "net" => Ok(MacScope::WholeNetwork),
            other => validation(format!("unknown scope {other:?} (expected conv or net)")),
        }
    }
}

/// Saved MACs over baseline MACs within `scope`.
pub fn mac_reduction(ledger: &MacLedger, scope: MacScope) -> Result<f64> {
    let totals = match scope {
        MacScope::ConvOnly => ledger.conv_totals(),
        MacScope::WholeNetwork => ledger.totals(),
    };
    if totals.macs_baseline == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no baseline MACs in {scope:?} scope"
        )));
    }
    Ok(totals.macs_saved as f64 / totals.macs_baseline as f64)
}

/// Conv layer followed by ReLU, with diagonal-first scheduling. Returns the
/// pre-ReLU ofmap in which predicted cells hold `0.0`.
fn predicted_conv(
    ifmap: &Tensor,
    conv: &Conv2d,
    window_k: usize,
    threshold: f32,
    stats: &mut LayerStats,
) -> Result<Tensor> {
    let out_shape = conv.output_shape(ifmap.shape())?;
    let per_activation = conv.macs_per_activation();
    let grid = partition_windows(out_shape.height(), out_shape.width(), window_k);
    let mut ofmap = Tensor::zeros(out_shape);
    let mut executed = 0u64;

    for oc in 0..out_shape.channels() {
        for window in &grid.windows {
            let diagonal = diagonal_cells(window);
            let mut triggered = true;
            for &(y, x) in &diagonal.real {
                let v = conv_cell(ifmap, conv, oc, y, x);
                executed += per_activation;
                ofmap.set(oc, y, x, v);
                triggered &= is_zero(relu_value(v), threshold);
            }
            let off_diagonal = window
                .cells()
                .filter(|&(y, x, real)| real && y - window.row != x - window.col);
            if triggered {
                stats.zero_diag_act += diagonal.real.len() as u64;
                for (y, x, _) in off_diagonal {
                    // shadow evaluation, statistics only
                    let oracle = relu_value(conv_cell(ifmap, conv, oc, y, x));
                    if is_zero(oracle, threshold) {
                        stats.true_pred_act += 1;
                    } else {
                        stats.false_pred_act += 1;
                    }
                    stats.predicted_count += 1;
                }
            } else {
                stats.others_act += diagonal.real.len() as u64;
                for (y, x, _) in off_diagonal {
                    ofmap.set(oc, y, x, conv_cell(ifmap, conv, oc, y, x));
                    executed += per_activation;
                    stats.others_act += 1;
                }
            }
        }
    }
    stats.total_act = out_shape.len() as u64;
    stats.macs_baseline = out_shape.len() as u64 * per_activation;
    stats.macs_executed = executed;
    stats.macs_saved = stats.predicted_count * per_activation;
    Ok(ofmap)
}

/// Forward pass with zero prediction on the enabled conv layers. Predicted
/// values propagate to downstream layers. Returns one [`LayerStats`] per conv layer.
pub fn forward_predicted(
    model: &Model,
    input: &Tensor,
    cfg: &PredictionConfig,
) -> Result<(ForwardTrace, Vec<LayerStats>)> {
    let shapes = check_input(model, input)?;
    cfg.check_against(model)?;

    let mut outputs: Vec<Tensor> = Vec::with_capacity(model.layers.len());
    let mut rows = Vec::with_capacity(model.layers.len());
    let mut stats = Vec::new();
    for (i, (layer, shape)) in model.layers.iter().zip(&shapes).enumerate() {
        let ifmap = outputs.last().unwrap_or(input);
        let macs_baseline = shape.len() as u64 * layer.macs_per_activation();
        let (out, macs_executed) = match layer {
            LayerSpec::Conv(conv) => {
                let conv_index = stats.len();
                let mut s = LayerStats::empty(i, conv_index, conv.macs_per_activation());
                let out = if cfg.enabled_layers[conv_index] {
                    predicted_conv(ifmap, conv, cfg.window_k, cfg.zero_threshold, &mut s)?
                } else {
                    let mut macs = 0;
                    let out = apply_layer(layer, ifmap, &mut macs)?;
                    s.total_act = out.len() as u64;
                    s.others_act = s.total_act;
                    s.macs_baseline = macs_baseline;
                    s.macs_executed = macs;
                    out
                };
                let executed = s.macs_executed;
                stats.push(s);
                (out, executed)
            }
            _ => {
                let mut macs = 0;
                (apply_layer(layer, ifmap, &mut macs)?, macs)
            }
        };
        rows.push(LayerMacs {
            layer_index: i,
            kind: layer.kind(),
            macs_baseline,
            macs_executed,
        });
        outputs.push(out);
    }
    debug_assert!(rows
        .iter()
        .filter(|r| r.kind == LayerKind::Conv)
        .zip(&stats)
        .all(|(r, s)| r.macs_executed == s.macs_executed));
    let logits = outputs
        .last()
        .map(|t| t.data().to_vec())
        .unwrap_or_default();
    Ok((
        ForwardTrace {
            outputs,
            logits,
            ledger: MacLedger { layers: rows },
        },
        stats,
    ))
}
