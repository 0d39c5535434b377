//! Command-line front end for the table-structure toolkit: target
//! generation, decoding, evaluation, gridifying, synthesis, loss evaluation
//! and visualization.
//!
//! Exit codes: 0 success, 2 invalid input, 3 internal invariant violation.

mod eval;
mod viz;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use tsrkit::annotation::TableAnnotation;
use tsrkit::bundle::{
    load_raw_output, load_target_bundle, save_raw_output, save_target_bundle, write_atomic,
};
use tsrkit::config::LossConfig;
use tsrkit::decoder::{decode_table, DecodeConfig};
use tsrkit::gridify::cells_to_grids;
use tsrkit::losses::overall_loss;
use tsrkit::synth::{gen_table, render_oracle, SynthConfig, WarpKind};
use tsrkit::targets::assemble_target_bundle;
use tsrkit::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tsrkit", version, about = "Table structure recognition toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON file whose keys mirror the long flag names; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for multi-file commands (0 = one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Seed for the synthetic-table generator.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Print the resolved configuration to stderr before running.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a training-target bundle from an annotation.
    GenTargets {
        /// Annotation JSON describing the table.
        annotation: PathBuf,
        /// Output directory for the bundle (rasters + sparse.json).
        out_dir: PathBuf,
        /// Convert cells to grids before generating targets.
        #[arg(long)]
        gridify: bool,
        /// Resolution divisor between the image and the target rasters.
        #[arg(long)]
        downscale: Option<u32>,
    },
    /// Parse table structure out of a directory of network-output tensors.
    Decode {
        /// Directory holding the output rasters plus meta.json.
        tensors: PathBuf,
        /// Path for the decoded annotation JSON; diagnostics are written
        /// next to it as <name>.diagnostics.json.
        out: PathBuf,
        /// Peak threshold for both center and corner heatmap channels.
        #[arg(long)]
        tau: Option<f64>,
        /// Cap on extracted peaks per channel.
        #[arg(long)]
        max_k: Option<usize>,
        /// Corner alignment radius in low-resolution pixels.
        #[arg(long)]
        r_align: Option<f64>,
        /// Out-of-image tolerance for regressed corners.
        #[arg(long)]
        eps_back: Option<f64>,
    },
    /// Score predicted annotations against ground truth.
    Eval {
        /// Directory of ground-truth annotation JSON files.
        #[arg(long)]
        gt: PathBuf,
        /// Directory of predicted annotation JSON files (same names).
        #[arg(long)]
        pred: PathBuf,
        /// IoU threshold for cell matching.
        #[arg(long)]
        iou: Option<f64>,
        /// Weight of the F-beta combination of detection F1 and accuracy.
        #[arg(long)]
        beta: Option<f64>,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a cell annotation to its grid form.
    Gridify {
        /// Annotation JSON with (possibly merged) cells.
        input: PathBuf,
        /// Output path for the grid-form annotation JSON.
        out: PathBuf,
    },
    /// Generate a synthetic table with its ideal output tensors.
    Synth {
        /// Output directory (annotation.json + tensors/).
        #[arg(long)]
        out: PathBuf,
        /// Row count range, inclusive (e.g. 2..6).
        #[arg(long)]
        rows: Option<String>,
        /// Column count range, inclusive (e.g. 2..6).
        #[arg(long)]
        cols: Option<String>,
        /// Probability that a grid slot anchors a merged block.
        #[arg(long)]
        merge_probability: Option<f64>,
        /// Largest row/column extent of a merged block.
        #[arg(long)]
        max_merge_span: Option<u32>,
        /// Geometric distortion applied after layout.
        #[arg(long, value_enum)]
        warp: Option<WarpArg>,
        /// Corner jitter budget as a fraction of the image diagonal.
        #[arg(long)]
        warp_magnitude: Option<f64>,
        #[arg(long)]
        image_height: Option<u32>,
        #[arg(long)]
        image_width: Option<u32>,
    },
    /// Generate, render and decode a seed range, verifying the round trip.
    Roundtrip {
        /// Inclusive seed range, e.g. 0..499. Seeds congruent to 2 mod 4
        /// are affine-warped, 3 mod 4 homography-warped.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        image_height: Option<u32>,
        #[arg(long)]
        image_width: Option<u32>,
    },
    /// Evaluate the training losses of predicted tensors against targets.
    EvalLoss {
        /// Target bundle directory (gen-targets output).
        #[arg(long)]
        targets: PathBuf,
        /// Predicted tensor directory (same layout as decode input).
        #[arg(long)]
        pred: PathBuf,
        /// Breakdown file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lambda_u: Option<f64>,
        #[arg(long)]
        lambda_v: Option<f64>,
        #[arg(long)]
        lambda_e: Option<f64>,
        #[arg(long)]
        focal_alpha: Option<f64>,
        #[arg(long)]
        focal_beta: Option<f64>,
        #[arg(long)]
        span_cap: Option<f64>,
    },
    /// Render an annotation or an interpolation map as a PNG.
    Viz {
        /// Annotation JSON, tensor directory, or target bundle directory.
        input: PathBuf,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
        /// Which interpolation map to render for tensor inputs.
        #[arg(long, value_enum)]
        map: Option<MapAxis>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpArg {
    None,
    Affine,
    Homography,
}

impl WarpArg {
    fn kind(self) -> WarpKind {
        match self {
            WarpArg::None => WarpKind::None,
            WarpArg::Affine => WarpKind::Affine,
            WarpArg::Homography => WarpKind::Homography,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapAxis {
    Row,
    Col,
}

/// Optional defaults loaded from `--config`. Keys are the long flag names;
/// values given on the command line take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    threads: Option<usize>,
    seed: Option<u64>,
    downscale: Option<u32>,
    gridify: Option<bool>,
    tau: Option<f64>,
    max_k: Option<usize>,
    r_align: Option<f64>,
    eps_back: Option<f64>,
    iou: Option<f64>,
    beta: Option<f64>,
    rows: Option<String>,
    cols: Option<String>,
    merge_probability: Option<f64>,
    max_merge_span: Option<u32>,
    warp: Option<WarpArg>,
    warp_magnitude: Option<f64>,
    image_height: Option<u32>,
    image_width: Option<u32>,
    seeds: Option<String>,
    map: Option<MapAxis>,
    lambda_u: Option<f64>,
    lambda_v: Option<f64>,
    lambda_e: Option<f64>,
    focal_alpha: Option<f64>,
    focal_beta: Option<f64>,
    span_cap: Option<f64>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("config {} is not valid: {e}", path.display())))
    }
}

/// Parses an inclusive `A..B` range.
fn parse_range(text: &str, what: &str) -> Result<(u64, u64)> {
    let parsed = text.split_once("..").and_then(|(a, b)| {
        let a = a.trim().parse::<u64>().ok()?;
        let b = b.trim().parse::<u64>().ok()?;
        (a <= b).then_some((a, b))
    });
    parsed.ok_or_else(|| {
        Error::Format(format!("{what} must be an inclusive range like 0..9, got {text:?}"))
    })
}

fn load_annotation(path: &Path) -> Result<TableAnnotation> {
    let ann = TableAnnotation::load(path)?;
    ann.ensure_valid()?;
    Ok(ann)
}

/// Diagnostics sidecar for a decoded annotation at `out`.
fn diagnostics_path(out: &Path) -> PathBuf {
    out.with_extension("diagnostics.json")
}

pub(crate) fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.global.config.as_deref())?;
    let threads = cli.global.threads.or(file.threads).unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Internal(format!("cannot size the thread pool: {e}")))?;
    }
    let verbose = cli.global.verbose;
    let show = |cfg: serde_json::Value| {
        if verbose {
            eprintln!("config: {cfg}");
        }
    };

    match cli.command {
        Command::GenTargets { annotation, out_dir, gridify, downscale } => {
            let gridify = gridify || file.gridify.unwrap_or(false);
            let cfg = LossConfig {
                downscale: downscale.or(file.downscale).unwrap_or(LossConfig::default().downscale),
                ..LossConfig::default()
            };
            cfg.validate()?;
            show(serde_json::json!({
                "annotation": annotation, "out-dir": out_dir,
                "gridify": gridify, "downscale": cfg.downscale, "threads": threads,
            }));
            let mut ann = load_annotation(&annotation)?;
            if gridify {
                ann = cells_to_grids(&ann)?;
            }
            let bundle = assemble_target_bundle(&ann, &cfg);
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            save_target_bundle(&out_dir, &bundle)
        }

        Command::Decode { tensors, out, tau, max_k, r_align, eps_back } => {
            let defaults = DecodeConfig::default();
            let tau = tau.or(file.tau);
            let cfg = DecodeConfig {
                tau_center: tau.unwrap_or(defaults.tau_center),
                tau_corner: tau.unwrap_or(defaults.tau_corner),
                max_k: max_k.or(file.max_k).unwrap_or(defaults.max_k),
                r_align: r_align.or(file.r_align).unwrap_or(defaults.r_align),
                eps_back: eps_back.or(file.eps_back).unwrap_or(defaults.eps_back),
            };
            show(serde_json::json!({
                "tensors": tensors, "out": out, "tau": cfg.tau_center,
                "max-k": cfg.max_k, "r-align": cfg.r_align, "eps-back": cfg.eps_back,
            }));
            let raw = load_raw_output(&tensors)?;
            let decoded = decode_table(&raw, &cfg)?;
            decoded.annotation.save(&out)?;
            let diag = serde_json::json!({
                "cells": decoded.annotation.cells.len(),
                "scores": decoded.scores,
                "diagnostics": decoded.diagnostics,
                "overlap_violations": decoded.overlap_violations,
            });
            emit_json(&diag, Some(&diagnostics_path(&out)))
        }

        Command::Eval { gt, pred, iou, beta, out } => {
            let args = eval::EvalArgs {
                gt,
                pred,
                iou: iou.or(file.iou).unwrap_or(0.5),
                beta: beta.or(file.beta).unwrap_or(0.5),
                out,
            };
            show(serde_json::json!({
                "gt": args.gt, "pred": args.pred, "iou": args.iou,
                "beta": args.beta, "threads": threads,
            }));
            eval::cmd_eval(args)
        }

        Command::Gridify { input, out } => {
            show(serde_json::json!({ "input": input, "out": out }));
            let ann = load_annotation(&input)?;
            let grids = cells_to_grids(&ann)?;
            grids.save(&out)
        }

        Command::Synth {
            out,
            rows,
            cols,
            merge_probability,
            max_merge_span,
            warp,
            warp_magnitude,
            image_height,
            image_width,
        } => {
            let d = SynthConfig::default();
            let range32 = |text: Option<String>, fallback: (u32, u32), what| -> Result<(u32, u32)> {
                match text {
                    Some(t) => parse_range(&t, what).map(|(a, b)| (a as u32, b as u32)),
                    None => Ok(fallback),
                }
            };
            let (min_rows, max_rows) =
                range32(rows.or(file.rows.clone()), (d.min_rows, d.max_rows), "--rows")?;
            let (min_cols, max_cols) =
                range32(cols.or(file.cols.clone()), (d.min_cols, d.max_cols), "--cols")?;
            let cfg = SynthConfig {
                min_rows,
                max_rows,
                min_cols,
                max_cols,
                merge_probability: merge_probability
                    .or(file.merge_probability)
                    .unwrap_or(d.merge_probability),
                max_merge_span: max_merge_span.or(file.max_merge_span).unwrap_or(d.max_merge_span),
                warp: warp.or(file.warp).map_or(d.warp, WarpArg::kind),
                warp_magnitude: warp_magnitude.or(file.warp_magnitude).unwrap_or(d.warp_magnitude),
                image_height: image_height.or(file.image_height).unwrap_or(d.image_height),
                image_width: image_width.or(file.image_width).unwrap_or(d.image_width),
                seed: cli.global.seed.or(file.seed).unwrap_or(0),
            };
            show(serde_json::to_value(cfg).unwrap_or_default());
            let ann = gen_table(&cfg)?;
            fs::create_dir_all(&out)?;
            ann.save(out.join("annotation.json"))?;
            let raw = render_oracle(&ann, &LossConfig::default());
            save_raw_output(&out.join("tensors"), &raw)?;
            println!("seed {}: {} cells -> {}", cfg.seed, ann.cells.len(), out.display());
            Ok(())
        }

        Command::Roundtrip { seeds, image_height, image_width } => {
            let text = seeds.or(file.seeds.clone()).unwrap_or_else(|| "0..499".into());
            let (first, last) = parse_range(&text, "--seeds")?;
            let args = eval::RoundtripArgs {
                first,
                last,
                image_height: image_height.or(file.image_height).unwrap_or(1024),
                image_width: image_width.or(file.image_width).unwrap_or(1024),
            };
            show(serde_json::json!({
                "seeds": format!("{first}..{last}"),
                "image-height": args.image_height, "image-width": args.image_width,
                "threads": threads,
            }));
            eval::cmd_roundtrip(args)
        }

        Command::EvalLoss {
            targets,
            pred,
            out,
            lambda_u,
            lambda_v,
            lambda_e,
            focal_alpha,
            focal_beta,
            span_cap,
        } => {
            let d = LossConfig::default();
            let bundle = load_target_bundle(&targets)?;
            let cfg = LossConfig {
                lambda_u: lambda_u.or(file.lambda_u).unwrap_or(d.lambda_u),
                lambda_v: lambda_v.or(file.lambda_v).unwrap_or(d.lambda_v),
                lambda_e: lambda_e.or(file.lambda_e).unwrap_or(d.lambda_e),
                focal_alpha: focal_alpha.or(file.focal_alpha).unwrap_or(d.focal_alpha),
                focal_beta: focal_beta.or(file.focal_beta).unwrap_or(d.focal_beta),
                span_cap: span_cap.or(file.span_cap).unwrap_or(d.span_cap),
                downscale: bundle.meta.downscale,
            };
            cfg.validate()?;
            show(serde_json::to_value(cfg).unwrap_or_default());
            let raw = load_raw_output(&pred)?;
            let evaluation = overall_loss(&raw, &bundle, &cfg)?;
            for w in &evaluation.warnings {
                eprintln!("warning: {w}");
            }
            emit_json(&evaluation.breakdown, out.as_deref())
        }

        Command::Viz { input, out, map } => {
            let axis = map.or(file.map).unwrap_or(MapAxis::Row);
            show(serde_json::json!({ "input": input, "out": out, "map": format!("{axis:?}") }));
            let stats = viz::cmd_viz(&input, &out, axis)?;
            println!("{}", stats.summary(&out));
            Ok(())
        }
    }
}
