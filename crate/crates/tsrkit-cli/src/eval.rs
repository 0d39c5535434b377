//! The `eval` and `roundtrip` commands: corpus scoring with a JSON report,
//! and the generate→render→decode identity harness.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use tsrkit::annotation::TableAnnotation;
use tsrkit::config::LossConfig;
use tsrkit::decoder::{decode_table, DecodeConfig};
use tsrkit::metrics::teds::{teds, to_structure_tree};
use tsrkit::metrics::{
    adjacency_counts, f_beta, logical_accuracy, match_cells, DetectionCounts, LogicalAccuracy,
    RelationCounts,
};
use tsrkit::synth::{gen_table, render_oracle, SynthConfig, WarpKind};
use tsrkit::{Error, Result};

pub struct EvalArgs {
    pub gt: PathBuf,
    pub pred: PathBuf,
    pub iou: f64,
    pub beta: f64,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DetectionReport {
    matched: usize,
    gt_total: usize,
    pred_total: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl DetectionReport {
    fn from_counts(c: &DetectionCounts) -> Self {
        let (precision, recall, f1) = c.prf();
        DetectionReport {
            matched: c.matched,
            gt_total: c.gt_total,
            pred_total: c.pred_total,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Serialize)]
struct RelationReport {
    true_positive: usize,
    gt_total: usize,
    pred_total: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl RelationReport {
    fn from_counts(c: &RelationCounts) -> Self {
        let (precision, recall, f1) = c.prf();
        RelationReport {
            true_positive: c.true_positive,
            gt_total: c.gt_total,
            pred_total: c.pred_total,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Serialize)]
struct DocumentReport {
    name: String,
    physical: DetectionReport,
    adjacency: RelationReport,
    logical: LogicalAccuracy,
    teds: f64,
    f_beta: f64,
    #[serde(skip)]
    physical_counts: DetectionCounts,
    #[serde(skip)]
    adjacency_counts: RelationCounts,
}

#[derive(Serialize)]
struct LogicalMean {
    acc: f64,
    row_start: f64,
    row_end: f64,
    col_start: f64,
    col_end: f64,
}

#[derive(Serialize)]
struct AggregateReport {
    documents: usize,
    physical: DetectionReport,
    adjacency: RelationReport,
    logical_mean: LogicalMean,
    teds_mean: f64,
    f_beta: f64,
}

#[derive(Serialize)]
struct EvalReport {
    aggregation: &'static str,
    iou_threshold: f64,
    beta: f64,
    documents: Vec<DocumentReport>,
    aggregate: AggregateReport,
}

const AGGREGATION_NOTE: &str = "precision/recall/F1 micro-averaged over summed counts; \
     logical accuracies and TEDS averaged over documents; corpus F-beta combines the \
     micro-averaged physical F1 with the mean logical accuracy";

/// Annotation files in `dir` keyed by file name. Decoder diagnostics
/// sidecars (`*.diagnostics.json`) are ignored so a decode output directory
/// evaluates as-is.
fn list_annotations(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir)
        .map_err(|e| Error::Format(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::Format(format!("cannot list {}: {e}", dir.display())))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if name.ends_with(".json") && !name.ends_with(".diagnostics.json") {
            out.insert(name.to_string(), path);
        }
    }
    if out.is_empty() {
        return Err(Error::Format(format!("no annotation files in {}", dir.display())));
    }
    Ok(out)
}

fn score_document(
    name: &str,
    gt_path: &Path,
    pred_path: &Path,
    iou: f64,
    beta: f64,
) -> Result<DocumentReport> {
    let gt = TableAnnotation::load(gt_path)?;
    gt.ensure_valid()?;
    let pred = TableAnnotation::load(pred_path)?;
    pred.ensure_valid()?;

    let matching = match_cells(&gt, &pred, iou);
    let physical = DetectionCounts {
        matched: matching.pairs.len(),
        gt_total: gt.cells.len(),
        pred_total: pred.cells.len(),
    };
    let logical = logical_accuracy(&gt, &pred, iou);
    let adjacency = adjacency_counts(&gt, &pred, iou);
    let teds_score = teds(&to_structure_tree(&gt)?, &to_structure_tree(&pred)?);
    let (_, _, f1) = physical.prf();

    Ok(DocumentReport {
        name: name.to_string(),
        physical: DetectionReport::from_counts(&physical),
        adjacency: RelationReport::from_counts(&adjacency),
        logical,
        teds: teds_score,
        f_beta: f_beta(f1, logical.acc, beta),
        physical_counts: physical,
        adjacency_counts: adjacency,
    })
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let gt_files = list_annotations(&args.gt)?;
    let pred_files = list_annotations(&args.pred)?;

    let missing: Vec<&String> = gt_files.keys().filter(|k| !pred_files.contains_key(*k)).collect();
    let extra: Vec<&String> = pred_files.keys().filter(|k| !gt_files.contains_key(*k)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Format(format!(
            "prediction files do not match ground truth: missing {missing:?}, unexpected {extra:?}"
        )));
    }

    let names: Vec<&String> = gt_files.keys().collect();
    let documents: Vec<DocumentReport> = names
        .par_iter()
        .map(|name| score_document(name, &gt_files[*name], &pred_files[*name], args.iou, args.beta))
        .collect::<Result<_>>()?;

    let mut physical = DetectionCounts::default();
    let mut adjacency = RelationCounts::default();
    let mut logical_sum = [0.0f64; 5];
    let mut teds_sum = 0.0;
    for doc in &documents {
        physical.add(&doc.physical_counts);
        adjacency.add(&doc.adjacency_counts);
        for (slot, value) in logical_sum.iter_mut().zip([
            doc.logical.acc,
            doc.logical.row_start,
            doc.logical.row_end,
            doc.logical.col_start,
            doc.logical.col_end,
        ]) {
            *slot += value;
        }
        teds_sum += doc.teds;
    }
    let n = documents.len() as f64;
    let (_, _, f1) = physical.prf();
    let logical_mean = LogicalMean {
        acc: logical_sum[0] / n,
        row_start: logical_sum[1] / n,
        row_end: logical_sum[2] / n,
        col_start: logical_sum[3] / n,
        col_end: logical_sum[4] / n,
    };
    let aggregate = AggregateReport {
        documents: documents.len(),
        physical: DetectionReport::from_counts(&physical),
        adjacency: RelationReport::from_counts(&adjacency),
        f_beta: f_beta(f1, logical_mean.acc, args.beta),
        logical_mean,
        teds_mean: teds_sum / n,
    };

    let report = EvalReport {
        aggregation: AGGREGATION_NOTE,
        iou_threshold: args.iou,
        beta: args.beta,
        documents,
        aggregate,
    };
    crate::emit_json(&report, args.out.as_deref())
}

pub struct RoundtripArgs {
    pub first: u64,
    pub last: u64,
    pub image_height: u32,
    pub image_width: u32,
}

struct SeedOutcome {
    seed: u64,
    warp: WarpKind,
    cells: usize,
    max_corner_err: f64,
    failure: Option<String>,
}

/// Warp schedule over seeds: every fourth seed affine, every fourth
/// homography, the rest unwarped.
fn warp_for_seed(seed: u64) -> WarpKind {
    match seed % 4 {
        2 => WarpKind::Affine,
        3 => WarpKind::Homography,
        _ => WarpKind::None,
    }
}

fn run_seed(seed: u64, args: &RoundtripArgs) -> SeedOutcome {
    let cfg = SynthConfig {
        seed,
        warp: warp_for_seed(seed),
        image_height: args.image_height,
        image_width: args.image_width,
        ..SynthConfig::default()
    };
    let mut outcome = SeedOutcome {
        seed,
        warp: cfg.warp,
        cells: 0,
        max_corner_err: 0.0,
        failure: None,
    };
    let ann = match gen_table(&cfg) {
        Ok(a) => a,
        Err(e) => {
            outcome.failure = Some(format!("generation failed: {e}"));
            return outcome;
        }
    };
    outcome.cells = ann.cells.len();
    let raw = render_oracle(&ann, &LossConfig::default());
    let decoded = match decode_table(&raw, &DecodeConfig::default()) {
        Ok(d) => d.annotation,
        Err(e) => {
            outcome.failure = Some(format!("decode failed: {e}"));
            return outcome;
        }
    };

    let matching = match_cells(&ann, &decoded, 0.5);
    let counts = DetectionCounts {
        matched: matching.pairs.len(),
        gt_total: ann.cells.len(),
        pred_total: decoded.cells.len(),
    };
    let (_, _, f1) = counts.prf();
    let logical = logical_accuracy(&ann, &decoded, 0.5);
    for pair in &matching.pairs {
        let gt_quad = &ann.cells[pair.gt].quad;
        let pred_quad = &decoded.cells[pair.pred].quad;
        for (a, b) in gt_quad.corners.iter().zip(pred_quad.corners.iter()) {
            outcome.max_corner_err = outcome.max_corner_err.max((a.x - b.x).hypot(a.y - b.y));
        }
    }

    if f1 != 1.0 {
        outcome.failure = Some(format!(
            "physical F1 {} (gt {}, decoded {})",
            f1,
            ann.cells.len(),
            decoded.cells.len()
        ));
    } else if logical.acc != 1.0 {
        outcome.failure = Some(format!("logical accuracy {}", logical.acc));
    } else if outcome.max_corner_err > 2.0 {
        outcome.failure = Some(format!("max corner error {:.3} px", outcome.max_corner_err));
    }
    outcome
}

pub fn cmd_roundtrip(args: RoundtripArgs) -> Result<()> {
    let start = Instant::now();
    let outcomes: Vec<SeedOutcome> =
        (args.first..=args.last).into_par_iter().map(|seed| run_seed(seed, &args)).collect();

    let total = outcomes.len();
    let mut failures = 0usize;
    let mut max_err = 0.0f64;
    let mut homography = 0usize;
    let mut affine = 0usize;
    for o in &outcomes {
        max_err = max_err.max(o.max_corner_err);
        match o.warp {
            WarpKind::Homography => homography += 1,
            WarpKind::Affine => affine += 1,
            WarpKind::None => {}
        }
        if let Some(msg) = &o.failure {
            failures += 1;
            println!("FAIL seed {} ({:?}, {} cells): {}", o.seed, o.warp, o.cells, msg);
        }
    }
    println!(
        "{}/{} seeds round-trip exactly ({} homography, {} affine); max corner error {:.3} px; {:.1} s",
        total - failures,
        total,
        homography,
        affine,
        max_err,
        start.elapsed().as_secs_f64(),
    );
    if failures > 0 {
        Err(Error::Internal(format!("{failures} of {total} seeds failed the round trip")))
    } else {
        Ok(())
    }
}
