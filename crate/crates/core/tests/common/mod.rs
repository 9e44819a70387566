//! Reference implementations used as test oracles.
//!
//! Everything here is written against the public data types only, with explicit
//! index arithmetic and `Tensor::get`, so it does not share code paths with the
//! engine or the predictor. Conv accumulation follows the engine's documented
//! order (input channel, kernel row, kernel column, then bias) so results can be
//! compared bit for bit.

#![allow(dead_code)]

use std::path::PathBuf;

use zvp::{Conv2d, LayerSpec, Linear, Model, Shape3, Tensor};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn blessing() -> bool {
    std::env::var_os("ZVP_BLESS").is_some()
}

pub fn oracle_conv(x: &Tensor, conv: &Conv2d) -> Tensor {
    let s = x.shape();
    let oh = (s.height() + 2 * conv.pad - conv.kernel_h) / conv.stride + 1;
    let ow = (s.width() + 2 * conv.pad - conv.kernel_w) / conv.stride + 1;
    let mut data = Vec::with_capacity(conv.out_channels * oh * ow);
    for o in 0..conv.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for c in 0..conv.in_channels {
                    for ky in 0..conv.kernel_h {
                        for kx in 0..conv.kernel_w {
                            let iy = (oy * conv.stride + ky) as i64 - conv.pad as i64;
                            let ix = (ox * conv.stride + kx) as i64 - conv.pad as i64;
                            if iy < 0 || ix < 0 || iy >= s.height() as i64 || ix >= s.width() as i64
                            {
                                continue;
                            }
                            let wi = ((o * conv.in_channels + c) * conv.kernel_h + ky)
                                * conv.kernel_w
                                + kx;
                            acc += conv.weights[wi] * x.get(c, iy as usize, ix as usize).unwrap();
                        }
                    }
                }
                data.push(acc + conv.bias[o]);
            }
        }
    }
    Tensor::new(Shape3::new(conv.out_channels, oh, ow).unwrap(), data).unwrap()
}

pub fn oracle_relu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).unwrap()
}

pub fn oracle_maxpool(x: &Tensor, k: usize, stride: usize) -> Tensor {
    let s = x.shape();
    let (oh, ow) = ((s.height() - k) / stride + 1, (s.width() - k) / stride + 1);
    let mut data = Vec::new();
    for c in 0..s.channels() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut vals = Vec::new();
                for ky in 0..k {
                    for kx in 0..k {
                        vals.push(x.get(c, oy * stride + ky, ox * stride + kx).unwrap());
                    }
                }
                data.push(vals.into_iter().fold(f32::NEG_INFINITY, f32::max));
            }
        }
    }
    Tensor::new(Shape3::new(s.channels(), oh, ow).unwrap(), data).unwrap()
}

pub fn oracle_linear(x: &[f32], l: &Linear) -> Vec<f32> {
    (0..l.out_features)
        .map(|o| {
            let mut acc = 0.0f32;
            for (i, &v) in x.iter().enumerate().take(l.in_features) {
                acc += l.weights[o * l.in_features + i] * v;
            }
            acc + l.bias[o]
        })
        .collect()
}

/// Output of every layer.
pub fn oracle_forward(model: &Model, input: &Tensor) -> Vec<Tensor> {
    let mut outs: Vec<Tensor> = Vec::new();
    for layer in &model.layers {
        let x = outs.last().unwrap_or(input);
        let y = match layer {
            LayerSpec::Conv(c) => oracle_conv(x, c),
            LayerSpec::Relu => oracle_relu(x),
            LayerSpec::MaxPool(p) => oracle_maxpool(x, p.kernel, p.stride),
            LayerSpec::Flatten => Tensor::from_vector(x.data().to_vec()).unwrap(),
            LayerSpec::Linear(l) => Tensor::from_vector(oracle_linear(x.data(), l)).unwrap(),
        };
        outs.push(y);
    }
    outs
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OracleCounts {
    pub zero_diag: u64,
    pub true_pred: u64,
    pub false_pred: u64,
    pub others: u64,
    pub predicted: u64,
}

/// Re-derives the prediction outcome of one conv layer from scratch.
///
/// `ifmap` is the input the predicted run fed to the layer and `produced` its
/// pre-ReLU output. Every diagonal and computed cell must equal the oracle
/// exactly, and every skipped cell must be `0.0`. Returns the category counts or
/// a description of the first mismatch.
pub fn oracle_check_layer(
    ifmap: &Tensor,
    conv: &Conv2d,
    produced: &Tensor,
    k: usize,
    threshold: f32,
) -> Result<OracleCounts, String> {
    let full = oracle_conv(ifmap, conv);
    let post = oracle_relu(&full);
    let s = full.shape();
    if produced.shape() != s {
        return Err(format!("shape {} vs oracle {}", produced.shape(), s));
    }
    let zero = |v: f32| v.abs() <= threshold;
    let mut n = OracleCounts::default();
    for c in 0..s.channels() {
        let mut wy = 0;
        while wy < s.height() {
            let mut wx = 0;
            while wx < s.width() {
                let mut trigger = true;
                let mut real_diag = 0;
                for i in 0..k {
                    let (y, x) = (wy + i, wx + i);
                    if y < s.height() && x < s.width() {
                        real_diag += 1;
                        let got = produced.get(c, y, x).unwrap();
                        let want = full.get(c, y, x).unwrap();
                        if got.to_bits() != want.to_bits() {
                            return Err(format!("diagonal ({c},{y},{x}) = {got}, oracle {want}"));
                        }
                        trigger &= zero(post.get(c, y, x).unwrap());
                    }
                }
                if trigger {
                    n.zero_diag += real_diag;
                } else {
                    n.others += real_diag;
                }
                for y in wy..(wy + k).min(s.height()) {
                    for x in wx..(wx + k).min(s.width()) {
                        if y - wy == x - wx {
                            continue;
                        }
                        let got = produced.get(c, y, x).unwrap();
                        if trigger {
                            if got.to_bits() != 0 {
                                return Err(format!("skipped ({c},{y},{x}) holds {got}"));
                            }
                            n.predicted += 1;
                            if zero(post.get(c, y, x).unwrap()) {
                                n.true_pred += 1;
                            } else {
                                n.false_pred += 1;
                            }
                        } else {
                            let want = full.get(c, y, x).unwrap();
                            if got.to_bits() != want.to_bits() {
                                return Err(format!(
                                    "computed ({c},{y},{x}) = {got}, oracle {want}"
                                ));
                            }
                            n.others += 1;
                        }
                    }
                }
                wx += k;
            }
            wy += k;
        }
    }
    Ok(n)
}

/// Share of all activations inside all-zero complete windows, enumerated with `get` only.
pub fn brute_force_fraction(t: &Tensor, k: usize) -> f64 {
    let s = t.shape();
    let mut zero = 0u64;
    for c in 0..s.channels() {
        for wy in 0..s.height() / k {
            for wx in 0..s.width() / k {
                let mut all = true;
                for dy in 0..k {
                    for dx in 0..k {
                        all &= t.get(c, wy * k + dy, wx * k + dx).unwrap() == 0.0;
                    }
                }
                if all {
                    zero += (k * k) as u64;
                }
            }
        }
    }
    zero as f64 / s.len() as f64
}

/// Recomputes the MAC reductions of an emitted evaluation report from its per-layer rows.
/// Returns `(conv_only, whole_network)`.
pub fn recompute_reduction(report: &serde_json::Value) -> (f64, f64) {
    let layers = report["layers"].as_array().unwrap();
    let mut saved = 0u64;
    let mut conv_baseline = 0u64;
    for l in layers {
        saved +=
            l["predicted_count"].as_u64().unwrap() * l["macs_per_activation"].as_u64().unwrap();
        conv_baseline += l["macs_baseline"].as_u64().unwrap();
    }
    let net_baseline: u64 = report["mac_ledger"]["layers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["macs_baseline"].as_u64().unwrap())
        .sum();
    (
        saved as f64 / conv_baseline as f64,
        saved as f64 / net_baseline as f64,
    )
}

/// Checks the internal consistency of an emitted evaluation report.
pub fn check_report(report: &serde_json::Value) -> Result<(), String> {
    let (conv, net) = recompute_reduction(report);
    let got_conv = report["mac_reduction"]["conv_only"].as_f64().unwrap();
    let got_net = report["mac_reduction"]["whole_network"].as_f64().unwrap();
    if got_conv != conv || got_net != net {
        return Err(format!(
            "reported reduction ({got_conv}, {got_net}) != recomputed ({conv}, {net})"
        ));
    }
    for l in report["layers"].as_array().unwrap() {
        let g = |k: &str| l[k].as_u64().unwrap();
        if g("zero_diag_act") + g("true_pred_act") + g("false_pred_act") + g("others_act")
            != g("total_act")
        {
            return Err(format!(
                "categories do not sum for layer {}",
                g("layer_index")
            ));
        }
        if g("macs_executed") + g("macs_saved") != g("macs_baseline") {
            return Err(format!(
                "MAC identity broken for layer {}",
                g("layer_index")
            ));
        }
        if g("macs_saved") != g("predicted_count") * g("macs_per_activation") {
            return Err(format!(
                "saved MACs mismatch for layer {}",
                g("layer_index")
            ));
        }
    }
    let acc = &report["accuracy"];
    for key in ["top1", "top5"] {
        let b = acc["baseline"][key].as_f64().unwrap();
        let p = acc["predicted"][key].as_f64().unwrap();
        let d = acc["degradation"][key].as_f64().unwrap();
        if d != b - p || !d.is_finite() {
            return Err(format!("{key} degradation {d} != {b} - {p}"));
        }
    }
    Ok(())
}
