//! Evaluation, profiling and inspection reports, plus the file-level commands
//! behind the `zvp` binary.
//!
//! JSON reports carry `"schema": 1`. They contain no timestamps, so identical
//! inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{load_idx_dataset, LabeledDataset};
use crate::engine::{analytic_macs, forward_baseline, MacLedger, MacTotals};
use crate::error::{validation, Error, Result};
use crate::model::{load_model, Model};
use crate::predictor::{
    forward_predicted, mac_reduction, merge_stat_lists, LayerSelection, LayerStats, MacScope,
    PredictionConfig,
};
use crate::profiler::{profile_model, CorrelationReport};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "text" => Ok(ReportFormat::Text),
            other => validation(format!("unknown format {other:?}")),
        }
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f32]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Whether `label` is among the `k` largest logits. A class outranks the label
/// if its logit is larger, or equal with a lower index.
pub fn in_top_k(logits: &[f32], label: usize, k: usize) -> bool {
    let target = logits[label];
    let rank = logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count();
    rank < k
}

pub fn topk_accuracy(logits: &[Vec<f32>], labels: &[usize], k: usize) -> Result<f64> {
    if logits.is_empty() {
        return validation("top-k accuracy of an empty set");
    }
    if logits.len() != labels.len() {
        return validation(format!(
            "{} logit vectors but {} labels",
            logits.len(),
            labels.len()
        ));
    }
    let mut hits = 0usize;
    for (row, &label) in logits.iter().zip(labels) {
        if k == 0 || k > row.len() {
            return validation(format!("k = {k} outside 1..={}", row.len()));
        }
        if label >= row.len() {
            return validation(format!("label {label} outside {} classes", row.len()));
        }
        hits += in_top_k(row, label, k) as usize;
    }
    Ok(hits as f64 / logits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracySummary {
    pub baseline: Accuracy,
    pub predicted: Accuracy,
    /// Baseline minus predicted.
    pub degradation: Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Breakdown {
    pub zero_diag: f64,
    pub true_pred: f64,
    pub false_pred: f64,
    pub others: f64,
}

impl Breakdown {
    fn of(zero_diag: u64, true_pred: u64, false_pred: u64, others: u64) -> Option<Self> {
        let total = zero_diag + true_pred + false_pred + others;
        (total > 0).then(|| Breakdown {
            zero_diag: zero_diag as f64 / total as f64,
            true_pred: true_pred as f64 / total as f64,
            false_pred: false_pred as f64 / total as f64,
            others: others as f64 / total as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub enabled: bool,
    #[serde(flatten)]
    pub stats: LayerStats,
    pub breakdown: Option<Breakdown>,
    /// Share of this layer's activations that were predicted instead of computed.
    pub activation_savings: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownSummary {
    /// Mean of per-layer fractions over the enabled layers.
    pub per_layer_mean: Option<Breakdown>,
    /// Counts pooled over the enabled layers.
    pub activation_weighted: Option<Breakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacReduction {
    pub conv_only: f64,
    pub whole_network: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerReport {
    #[serde(flatten)]
    pub ledger: MacLedger,
    pub totals: MacTotals,
    pub conv_totals: MacTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub window_k: usize,
    pub zero_threshold: f32,
    pub enabled_layers: Vec<bool>,
    /// `k` used for the "top5" figures: 5, or the class count if smaller.
    pub top5_k: usize,
    pub normalize_pixels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub schema: u32,
    pub model: String,
    pub image_count: usize,
    pub config: EvalConfig,
    pub accuracy: AccuracySummary,
    pub mac_reduction: MacReduction,
    pub activation_savings: f64,
    pub breakdown: BreakdownSummary,
    pub layers: Vec<LayerReport>,
    pub mac_ledger: LedgerReport,
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer_index,conv_index,enabled,macs_per_activation,total_act,zero_diag_act,\
             true_pred_act,false_pred_act,others_act,predicted_count,macs_baseline,\
             macs_executed,macs_saved\n",
        );
        for l in &self.layers {
            let s = &l.stats;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.layer_index,
                s.conv_index,
                l.enabled,
                s.macs_per_activation,
                s.total_act,
                s.zero_diag_act,
                s.true_pred_act,
                s.false_pred_act,
                s.others_act,
                s.predicted_count,
                s.macs_baseline,
                s.macs_executed,
                s.macs_saved
            );
        }
        out
    }

    pub fn reduction(&self, scope: MacScope) -> f64 {
        match scope {
            MacScope::ConvOnly => self.mac_reduction.conv_only,
            MacScope::WholeNetwork => self.mac_reduction.whole_network,
        }
    }
}

struct ImageOutcome {
    baseline_logits: Vec<f32>,
    predicted_logits: Vec<f32>,
    stats: Vec<LayerStats>,
    ledger: MacLedger,
}

/// Runs the baseline and the predicted pass over every image and summarizes both.
pub fn evaluate(
    model: &Model,
    dataset: &LabeledDataset,
    cfg: &PredictionConfig,
) -> Result<EvalResult> {
    if dataset.is_empty() {
        return validation("cannot evaluate an empty dataset");
    }
    model.validate()?;
    cfg.check_against(model)?;
    dataset.check_against(model.input_shape, model.class_count)?;

    let outcomes = dataset
        .images
        .par_iter()
        .map(|img| {
            let baseline = forward_baseline(model, img)?;
            let (predicted, stats) = forward_predicted(model, img, cfg)?;
            Ok(ImageOutcome {
                baseline_logits: baseline.logits,
                predicted_logits: predicted.logits,
                stats,
                ledger: predicted.ledger,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut stats = outcomes[0].stats.clone();
    let mut ledger = outcomes[0].ledger.clone();
    for o in &outcomes[1..] {
        stats = merge_stat_lists(&stats, &o.stats)?;
        ledger.merge(&o.ledger)?;
    }
    let (baseline_logits, predicted_logits): (Vec<_>, Vec<_>) = outcomes
        .into_iter()
        .map(|o| (o.baseline_logits, o.predicted_logits))
        .unzip();

    let top5_k = 5.min(model.class_count);
    let acc = |logits: &[Vec<f32>]| -> Result<Accuracy> {
        Ok(Accuracy {
            top1: topk_accuracy(logits, &dataset.labels, 1)?,
            top5: topk_accuracy(logits, &dataset.labels, top5_k)?,
        })
    };
    let baseline = acc(&baseline_logits)?;
    let predicted = acc(&predicted_logits)?;

    let layers: Vec<LayerReport> = stats
        .iter()
        .zip(&cfg.enabled_layers)
        .map(|(s, &enabled)| LayerReport {
            enabled,
            stats: *s,
            breakdown: Breakdown::of(
                s.zero_diag_act,
                s.true_pred_act,
                s.false_pred_act,
                s.others_act,
            ),
            activation_savings: s.predicted_count as f64 / s.total_act as f64,
        })
        .collect();
    let enabled: Vec<&LayerReport> = layers.iter().filter(|l| l.enabled).collect();
    let per_layer_mean = (!enabled.is_empty()).then(|| {
        let n = enabled.len() as f64;
        let sum = |f: fn(&Breakdown) -> f64| {
            enabled
                .iter()
                .filter_map(|l| l.breakdown.as_ref())
                .map(f)
                .sum::<f64>()
                / n
        };
        Breakdown {
            zero_diag: sum(|b| b.zero_diag),
            true_pred: sum(|b| b.true_pred),
            false_pred: sum(|b| b.false_pred),
            others: sum(|b| b.others),
        }
    });
    let pooled = |f: fn(&LayerStats) -> u64| enabled.iter().map(|l| f(&l.stats)).sum::<u64>();
    let activation_weighted = Breakdown::of(
        pooled(|s| s.zero_diag_act),
        pooled(|s| s.true_pred_act),
        pooled(|s| s.false_pred_act),
        pooled(|s| s.others_act),
    );
    let all_conv_act: u64 = stats.iter().map(|s| s.total_act).sum();
    let all_predicted: u64 = stats.iter().map(|s| s.predicted_count).sum();

    Ok(EvalResult {
        schema: REPORT_SCHEMA,
        model: model.name.clone(),
        image_count: dataset.len(),
        config: EvalConfig {
            window_k: cfg.window_k,
            zero_threshold: cfg.zero_threshold,
            enabled_layers: cfg.enabled_layers.clone(),
            top5_k,
            normalize_pixels: true,
        },
        accuracy: AccuracySummary {
            baseline,
            predicted,
            degradation: Accuracy {
                top1: baseline.top1 - predicted.top1,
                top5: baseline.top5 - predicted.top5,
            },
        },
        mac_reduction: MacReduction {
            conv_only: mac_reduction(&ledger, MacScope::ConvOnly)?,
            whole_network: mac_reduction(&ledger, MacScope::WholeNetwork)?,
        },
        activation_savings: all_predicted as f64 / all_conv_act as f64,
        breakdown: BreakdownSummary {
            per_layer_mean,
            activation_weighted,
        },
        layers,
        mac_ledger: LedgerReport {
            totals: ledger.totals(),
            conv_totals: ledger.conv_totals(),
            ledger,
        },
    })
}

pub fn correlation_json(report: &CorrelationReport) -> String {
    #[derive(Serialize)]
    struct Versioned<'a> {
        schema: u32,
        #[serde(flatten)]
        report: &'a CorrelationReport,
    }
    let mut s = serde_json::to_string_pretty(&Versioned {
        schema: REPORT_SCHEMA,
        report,
    })
    .expect("report serializes");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn correlation_csv(report: &CorrelationReport) -> String {
    let mut out =
        String::from("layer_index,conv_index,k,zero_window_fraction,sparsity,grouped_fraction\n");
    for l in &report.layers {
        for w in &l.windows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                l.layer_index,
                l.conv_index,
                w.k,
                opt(w.zero_window_fraction),
                l.sparsity,
                opt(w.grouped_fraction)
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectRow {
    pub index: usize,
    pub kind: &'static str,
    pub output_shape: [usize; 3],
    pub macs_per_activation: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectReport {
    pub schema: u32,
    pub model: String,
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<InspectRow>,
    pub total_macs: u64,
    pub conv_macs: u64,
}

pub fn inspect(model: &Model) -> Result<InspectReport> {
    let shapes = model.layer_shapes()?;
    let ledger = analytic_macs(model)?;
    let layers = model
        .layers
        .iter()
        .zip(&shapes)
        .zip(&ledger.layers)
        .enumerate()
        .map(|(index, ((layer, shape), row))| InspectRow {
            index,
            kind: layer.kind().as_str(),
            output_shape: shape.as_array(),
            macs_per_activation: layer.macs_per_activation(),
            macs: row.macs_baseline,
        })
        .collect();
    Ok(InspectReport {
        schema: REPORT_SCHEMA,
        model: model.name.clone(),
        input_shape: model.input_shape.as_array(),
        class_count: model.class_count,
        layers,
        total_macs: ledger.totals().macs_baseline,
        conv_macs: ledger.conv_totals().macs_baseline,
    })
}

impl InspectReport {
    pub fn to_text(&self) -> String {
        let shape = |s: &[usize; 3]| format!("({}, {}, {})", s[0], s[1], s[2]);
        let mut out = format!(
            "model {}  input {}  classes {}\n",
            self.model,
            shape(&self.input_shape),
            self.class_count
        );
        let _ = writeln!(
            out,
            "{:>3}  {:<8} {:<16} {:>10} {:>14}",
            "#", "kind", "output", "MACs/act", "MACs"
        );
        for r in &self.layers {
            let _ = writeln!(
                out,
                "{:>3}  {:<8} {:<16} {:>10} {:>14}",
                r.index,
                r.kind,
                shape(&r.output_shape),
                r.macs_per_activation,
                r.macs
            );
        }
        let _ = writeln!(
            out,
            "total MACs {} (conv {})",
            self.total_macs, self.conv_macs
        );
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,kind,channels,height,width,macs_per_activation,macs\n");
        for r in &self.layers {
            let [c, h, w] = r.output_shape;
            let _ = writeln!(
                out,
                "{},{},{c},{h},{w},{},{}",
                r.index, r.kind, r.macs_per_activation, r.macs
            );
        }
        out
    }
}

fn emit(text: &str, out_path: Option<&Path>) -> Result<()> {
    if let Some(path) = out_path {
        fs::write(path, text)?;
    }
    Ok(())
}

pub struct EvaluateArgs<'a> {
    pub model_path: &'a Path,
    pub images_path: &'a Path,
    pub labels_path: &'a Path,
    pub window_k: usize,
    pub layers: LayerSelection,
    pub zero_threshold: f32,
    pub normalize: bool,
    pub format: ReportFormat,
    pub out_path: Option<&'a Path>,
}

/// Loads model and data, evaluates, and writes the report if `out_path` is set.
/// Returns the result and its serialized form.
pub fn cmd_evaluate(args: &EvaluateArgs<'_>) -> Result<(EvalResult, String)> {
    let model = load_model(args.model_path)?;
    let dataset = load_idx_dataset(args.images_path, args.labels_path, args.normalize)?;
    let cfg =
        PredictionConfig::from_selection(&model, args.window_k, &args.layers, args.zero_threshold)?;
    let mut result = evaluate(&model, &dataset, &cfg)?;
    result.config.normalize_pixels = args.normalize;
    let text = match args.format {
        ReportFormat::Csv => result.to_csv(),
        _ => result.to_json(),
    };
    emit(&text, args.out_path)?;
    Ok((result, text))
}

pub struct ProfileArgs<'a> {
    pub model_path: &'a Path,
    pub images_path: &'a Path,
    pub labels_path: &'a Path,
    pub window_sizes: Vec<usize>,
    pub zero_threshold: f32,
    pub normalize: bool,
    pub format: ReportFormat,
    pub out_path: Option<&'a Path>,
}

pub fn cmd_profile(args: &ProfileArgs<'_>) -> Result<(CorrelationReport, String)> {
    let model = load_model(args.model_path)?;
    let dataset = load_idx_dataset(args.images_path, args.labels_path, args.normalize)?;
    let report = profile_model(&model, &dataset, &args.window_sizes, args.zero_threshold)?;
    let text = match args.format {
        ReportFormat::Csv => correlation_csv(&report),
        _ => correlation_json(&report),
    };
    emit(&text, args.out_path)?;
    Ok((report, text))
}

pub fn cmd_inspect(
    model_path: &Path,
    format: ReportFormat,
    out_path: Option<&Path>,
) -> Result<(InspectReport, String)> {
    let report = inspect(&load_model(model_path)?)?;
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Text => report.to_text(),
    };
    emit(&text, out_path)?;
    Ok((report, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_examples() {
        assert_eq!(topk_accuracy(&[vec![0.1, 0.9]], &[1], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&[vec![3.0, 1.0, 2.0]], &[2], 2).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&[vec![3.0, 1.0, 2.0]], &[1], 2).unwrap(), 0.0);
        let rows = vec![vec![0.3, -1.0, 7.0], vec![1.0, 1.0, 1.0]];
        for label in 0..3 {
            assert_eq!(topk_accuracy(&rows, &[label, label], 3).unwrap(), 1.0);
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        let row = vec![vec![1.0, 1.0, 1.0]];
        assert_eq!(topk_accuracy(&row, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&row, &[1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&row, &[1], 2).unwrap(), 1.0);
        assert_eq!(argmax(&[2.0, 5.0, 5.0]), 1);
    }

    #[test]
    fn topk_errors() {
        assert!(topk_accuracy(&[], &[], 1).is_err());
        assert!(topk_accuracy(&[vec![1.0]], &[0], 0).is_err());
        assert!(topk_accuracy(&[vec![1.0]], &[0], 2).is_err());
        assert!(topk_accuracy(&[vec![1.0, 2.0]], &[2], 1).is_err());
        assert!(topk_accuracy(&[vec![1.0, 2.0]], &[0, 1], 1).is_err());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
