//! Direct-convolution CNN inference with zero-value prediction.
//!
//! Conv ofmaps are split into `k x k` windows whose diagonal is computed first;
//! when the whole diagonal is zero after ReLU the rest of the window is predicted
//! as zero and its MACs are skipped. The crate counts MACs exactly, classifies
//! every prediction against the true value, and profiles how zero activations
//! cluster spatially.

pub mod dataset;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod model;
pub mod predictor;
pub mod profiler;
pub mod report;
pub mod tensor;

pub use dataset::{load_idx_dataset, LabeledDataset};
pub use engine::{analytic_macs, forward_baseline, ForwardTrace, LayerMacs, MacLedger, MacTotals};
pub use error::{Error, Result};
pub use model::{load_model, save_model, Conv2d, LayerKind, LayerSpec, Linear, MaxPool2d, Model};
pub use predictor::{
    diagonal_cells, forward_predicted, mac_reduction, merge_stats, partition_windows,
    LayerSelection, LayerStats, MacScope, PredictionConfig, WindowGrid,
};
pub use profiler::{measure_window_fraction, profile_model, CorrelationReport};
pub use report::{evaluate, topk_accuracy, EvalResult};
pub use tensor::{count_zeros, Shape3, Tensor};
