use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zvp::predictor::{LayerSelection, MacScope};
use zvp::report::{
    cmd_evaluate, cmd_inspect, cmd_profile, EvaluateArgs, ProfileArgs, ReportFormat,
};

/// Zero-value prediction for CNN inference: MAC accounting, sparsity profiling and accuracy impact.
#[derive(Parser)]
#[command(name = "zvp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// ZVPM model file.
    #[arg(long)]
    model: PathBuf,
    /// IDX image file.
    #[arg(long)]
    images: PathBuf,
    /// IDX label file.
    #[arg(long)]
    labels: PathBuf,
    /// Feed raw 0..255 pixel values instead of scaling them to [0, 1].
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer table with output shapes and analytic MAC counts.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        /// text, json or csv.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure sparsity and all-zero window fractions of every conv ofmap.
    Profile {
        #[command(flatten)]
        data: DataArgs,
        /// Window sizes to measure, 1..=5.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        windows: Vec<usize>,
        #[arg(long, default_value_t = 0.0)]
        threshold: f32,
        /// json or csv.
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run baseline and predicted inference and compare accuracy and MAC cost.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Prediction window size k.
        #[arg(long, default_value_t = 3)]
        window: usize,
        /// Conv layers to predict: all, none, or comma-separated conv ordinals.
        #[arg(long, default_value = "all")]
        layers: LayerSelection,
        #[arg(long, default_value_t = 0.0)]
        threshold: f32,
        /// MAC reduction scope shown in the summary line: conv or net.
        #[arg(long, default_value = "conv")]
        scope: MacScope,
        /// json or csv.
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> zvp::Result<()> {
    match cli.command {
        Command::Inspect { model, format, out } => {
            let (report, text) = cmd_inspect(&model, format, out.as_deref())?;
            match out {
                Some(path) => println!(
                    "{}: {} layers, {} MACs -> {}",
                    report.model,
                    report.layers.len(),
                    report.total_macs,
                    path.display()
                ),
                None => print!("{text}"),
            }
        }
        Command::Profile {
            data,
            windows,
            threshold,
            format,
            out,
        } => {
            let (report, text) = cmd_profile(&ProfileArgs {
                model_path: &data.model,
                images_path: &data.images,
                labels_path: &data.labels,
                window_sizes: windows,
                zero_threshold: threshold,
                normalize: !data.no_normalize,
                format,
                out_path: out.as_deref(),
            })?;
            match out {
                Some(path) => println!(
                    "{}: profiled {} conv layers over {} images -> {}",
                    report.model,
                    report.layers.len(),
                    report.image_count,
                    path.display()
                ),
                None => print!("{text}"),
            }
        }
        Command::Evaluate {
            data,
            window,
            layers,
            threshold,
            scope,
            format,
            out,
        } => {
            let (result, text) = cmd_evaluate(&EvaluateArgs {
                model_path: &data.model,
                images_path: &data.images,
                labels_path: &data.labels,
                window_k: window,
                layers,
                zero_threshold: threshold,
                normalize: !data.no_normalize,
                format,
                out_path: out.as_deref(),
            })?;
            match out {
                Some(path) => {
                    let label = match scope {
                        MacScope::ConvOnly => "conv",
                        MacScope::WholeNetwork => "net",
                    };
                    println!(
                        "{}: k={} images={} mac_reduction[{label}]={:.4} top1_degradation={:.4} top5_degradation={:.4} -> {}",
                        result.model,
                        result.config.window_k,
                        result.image_count,
                        result.reduction(scope),
                        result.accuracy.degradation.top1,
                        result.accuracy.degradation.top5,
                        path.display()
                    );
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
