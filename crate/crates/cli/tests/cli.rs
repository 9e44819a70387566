use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;
use zvp::dataset::write_idx_dataset;
use zvp::fixtures::{write_fixture_set, FIXTURE_IMAGES_FILE, FIXTURE_LABELS_FILE, TINY_CNN_FILE};
use zvp::{save_model, Conv2d, LayerSpec, Linear, Model, Shape3};

fn zvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zvp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_set(dir.path()).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn data_args(&self) -> Vec<String> {
        vec![
            "--model".into(),
            self.path(TINY_CNN_FILE),
            "--images".into(),
            self.path(FIXTURE_IMAGES_FILE),
            "--labels".into(),
            self.path(FIXTURE_LABELS_FILE),
        ]
    }

    fn run(&self, command: &str, extra: &[&str]) -> Output {
        let data = self.data_args();
        let mut args: Vec<&str> = vec![command];
        args.extend(data.iter().map(String::as_str));
        args.extend_from_slice(extra);
        zvp(&args)
    }
}

fn minimal_model() -> Model {
    Model {
        name: "minimal".into(),
        input_shape: Shape3::new(1, 1, 1).unwrap(),
        layers: vec![
            LayerSpec::Conv(Conv2d {
                in_channels: 1,
                out_channels: 1,
                kernel_h: 1,
                kernel_w: 1,
                stride: 1,
                pad: 0,
                weights: vec![1.0],
                bias: vec![0.0],
            }),
            LayerSpec::Flatten,
            LayerSpec::Linear(Linear {
                in_features: 1,
                out_features: 2,
                weights: vec![1.0, -1.0],
                bias: vec![0.0, 0.0],
            }),
        ],
        class_count: 2,
    }
}

#[test]
fn inspect_minimal_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("minimal.zvpm");
    save_model(&minimal_model(), &path).unwrap();
    let p = path.to_str().unwrap();

    let json: Value = serde_json::from_str(&stdout(&zvp(&[
        "inspect", "--model", p, "--format", "json",
    ])))
    .unwrap();
    let rows = json["layers"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let sum: u64 = rows.iter().map(|r| r["macs"].as_u64().unwrap()).sum();
    assert_eq!(json["total_macs"].as_u64(), Some(sum));
    assert_eq!(sum, 1 + 2);

    let csv = stdout(&zvp(&["inspect", "--model", p, "--format", "csv"]));
    assert_eq!(csv.lines().count(), 4);
    let text = stdout(&zvp(&["inspect", "--model", p]));
    assert!(text.contains("conv"));
}

#[test]
fn evaluate_is_reproducible() {
    let f = Fixture::new();
    let a = stdout(&f.run("evaluate", &["--window", "2"]));
    let b = stdout(&f.run("evaluate", &["--window", "2"]));
    assert_eq!(a, b);
    let json: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(json["config"]["window_k"], 2);
    assert!(json["mac_reduction"]["conv_only"].as_f64().unwrap() > 0.0);
}

#[test]
fn evaluate_writes_out_file_and_csv() {
    let f = Fixture::new();
    let out = f.path("eval.csv");
    let summary = stdout(&f.run(
        "evaluate",
        &["--format", "csv", "--scope", "net", "--out", &out],
    ));
    assert_eq!(summary.lines().count(), 1);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.lines().count() > 2);
}

#[test]
fn disabled_prediction_has_no_degradation() {
    let f = Fixture::new();
    let json: Value =
        serde_json::from_str(&stdout(&f.run("evaluate", &["--layers", "none"]))).unwrap();
    assert_eq!(json["accuracy"]["degradation"]["top1"].as_f64(), Some(0.0));
    assert_eq!(json["accuracy"]["degradation"]["top5"].as_f64(), Some(0.0));
    assert_eq!(json["mac_reduction"]["conv_only"].as_f64(), Some(0.0));
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    // k = 1 is not a prediction window
    let out = f.run("evaluate", &["--window", "1"]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(exit_code(&f.run("profile", &["--windows", "6"])), 2);

    let junk = f.path("junk.zvpm");
    std::fs::write(&junk, b"not a model at all").unwrap();
    assert_eq!(exit_code(&zvp(&["inspect", "--model", &junk])), 2);

    let missing = f.path("missing.zvpm");
    assert_eq!(exit_code(&zvp(&["inspect", "--model", &missing])), 1);
}

#[test]
fn profile_outputs() {
    let f = Fixture::new();
    let json: Value =
        serde_json::from_str(&stdout(&f.run("profile", &["--windows", "1"]))).unwrap();
    for layer in json["layers"].as_array().unwrap() {
        let windows = layer["windows"].as_array().unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0]["zero_window_fraction"], layer["sparsity"]);
    }
    let csv = stdout(&f.run("profile", &["--format", "csv"]));
    let convs = json["layers"].as_array().unwrap().len();
    assert_eq!(csv.lines().count(), 1 + convs * 5);
}

/// A 1x1 identity conv with bias -0.5 on binary images yields i.i.d. zeros with
/// probability `p`, so an all-zero k x k window occurs with probability p^(k*k).
fn iid_setup(dir: &Path, p: f64, images: usize, side: usize) -> (PathBuf, PathBuf, PathBuf) {
    let model = Model {
        name: "iid".into(),
        input_shape: Shape3::new(1, side, side).unwrap(),
        layers: vec![
            LayerSpec::Conv(Conv2d {
                in_channels: 1,
                out_channels: 1,
                kernel_h: 1,
                kernel_w: 1,
                stride: 1,
                pad: 0,
                weights: vec![1.0],
                bias: vec![-0.5],
            }),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Linear(Linear {
                in_features: side * side,
                out_features: 2,
                weights: vec![0.0; 2 * side * side],
                bias: vec![0.0, 0.0],
            }),
        ],
        class_count: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pixels: Vec<Vec<u8>> = (0..images)
        .map(|_| {
            (0..side * side)
                .map(|_| if rng.random_bool(p) { 0 } else { 255 })
                .collect()
        })
        .collect();
    let paths = (
        dir.join("iid.zvpm"),
        dir.join("iid-images"),
        dir.join("iid-labels"),
    );
    save_model(&model, &paths.0).unwrap();
    write_idx_dataset(&pixels, side, side, &vec![0; images], &paths.1, &paths.2).unwrap();
    paths
}

#[test]
fn iid_maps_match_independence_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let (p, images, side) = (0.7, 300, 60);
    let (model, imgs, labels) = iid_setup(dir.path(), p, images, side);
    let out = zvp(&[
        "profile",
        "--model",
        model.to_str().unwrap(),
        "--images",
        imgs.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
    ]);
    let json: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let layer = &json["layers"][0];
    let sparsity = layer["sparsity"].as_f64().unwrap();
    let n = (images * side * side) as f64;
    assert!(
        (sparsity - p).abs() <= 4.0 * (p * (1.0 - p) / n).sqrt(),
        "sparsity {sparsity}"
    );
    for w in layer["windows"].as_array().unwrap() {
        let k = w["k"].as_u64().unwrap() as i32;
        let q = p.powi(k * k);
        // 60 is a multiple of every k, so every cell lies in a complete window
        let windows = n / f64::from(k * k);
        let sigma = (q * (1.0 - q) / windows).sqrt();
        let f = w["zero_window_fraction"].as_f64().unwrap();
        assert!(
            (f - q).abs() <= 4.0 * sigma,
            "k={k}: {f} vs {q} (sigma {sigma})"
        );
    }
}
