//! Evaluation metrics: physical cell detection, logical-location accuracy,
//! adjacency-relation F1, structure similarity (see [`teds`]), and the
//! combined F-beta score.

pub mod teds;

use std::collections::{BTreeMap, BTreeSet};

use crate::annotation::TableAnnotation;
use crate::geom::polygon_iou;

/// One matched (gt, pred) pair with its IoU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub gt: usize,
    pub pred: usize,
    pub iou: f64,
}

/// One-to-one correspondence between ground-truth and predicted cells.
#[derive(Debug, Clone, Default)]
pub struct CellMatching {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

impl CellMatching {
    /// Map from predicted cell index to its matched GT cell index.
    pub fn pred_to_gt(&self) -> BTreeMap<usize, usize> {
        self.pairs.iter().map(|p| (p.pred, p.gt)).collect()
    }
}

/// Greedy one-to-one matching of cells by descending quad IoU.
///
/// Only pairs with IoU >= `iou_threshold` are considered; ties are broken
/// by (gt index, pred index), making the result deterministic.
pub fn match_cells(
    gt: &TableAnnotation,
    pred: &TableAnnotation,
    iou_threshold: f64,
) -> CellMatching {
    let mut candidates: Vec<MatchedPair> = Vec::new();
    for (gi, g) in gt.cells.iter().enumerate() {
        for (pi, p) in pred.cells.iter().enumerate() {
            let iou = polygon_iou(&g.quad, &p.quad);
            if iou >= iou_threshold {
                candidates.push(MatchedPair { gt: gi, pred: pi, iou });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou.total_cmp(&a.iou).then_with(|| a.gt.cmp(&b.gt)).then_with(|| a.pred.cmp(&b.pred))
    });

    let mut gt_taken = vec![false; gt.cells.len()];
    let mut pred_taken = vec![false; pred.cells.len()];
    let mut pairs = Vec::new();
    for cand in candidates {
        if !gt_taken[cand.gt] && !pred_taken[cand.pred] {
            gt_taken[cand.gt] = true;
            pred_taken[cand.pred] = true;
            pairs.push(cand);
        }
    }
    pairs.sort_by_key(|p| p.gt);

    CellMatching {
        pairs,
        unmatched_gt: (0..gt.cells.len()).filter(|&i| !gt_taken[i]).collect(),
        unmatched_pred: (0..pred.cells.len()).filter(|&i| !pred_taken[i]).collect(),
    }
}

/// Raw counts behind [`physical_prf`], exposed for micro-averaging over a
/// corpus (sum the counts, then compute P/R/F1 once).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub matched: usize,
    pub gt_total: usize,
    pub pred_total: usize,
}

impl DetectionCounts {
    pub fn add(&mut self, other: &DetectionCounts) {
        self.matched += other.matched;
        self.gt_total += other.gt_total;
        self.pred_total += other.pred_total;
    }

    pub fn prf(&self) -> (f64, f64, f64) {
        let p = ratio(self.matched, self.pred_total);
        let r = ratio(self.matched, self.gt_total);
        (p, r, harmonic(p, r))
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

pub fn physical_counts(
    gt: &TableAnnotation,
    pred: &TableAnnotation,
    iou_threshold: f64,
) -> DetectionCounts {
    let matching = match_cells(gt, pred, iou_threshold);
    DetectionCounts {
        matched: matching.pairs.len(),
        gt_total: gt.cells.len(),
        pred_total: pred.cells.len(),
    }
}

/// Precision/recall/F1 of cell detection at the given IoU threshold.
/// Empty denominators yield 0.
pub fn physical_prf(
    gt: &TableAnnotation,
    pred: &TableAnnotation,
    iou_threshold: f64,
) -> (f64, f64, f64) {
    physical_counts(gt, pred, iou_threshold).prf()
}

/// Logical-location accuracy over GT cells.
///
/// `acc` requires all four indices correct; the per-index fields score each
/// index independently. All five use |gt| as the denominator, and an
/// unmatched GT cell counts as wrong everywhere.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LogicalAccuracy {
    pub acc: f64,
    pub row_start: f64,
    pub row_end: f64,
    pub col_start: f64,
    pub col_end: f64,
    /// True when |gt| = 0, in which case all five scores default to 1.0.
    pub empty_gt: bool,
}

pub fn logical_accuracy(
    gt: &TableAnnotation,
    pred: &TableAnnotation,
    iou_threshold: f64,
) -> LogicalAccuracy {
    if gt.cells.is_empty() {
        return LogicalAccuracy {
            acc: 1.0,
            row_start: 1.0,
            row_end: 1.0,
            col_start: 1.0,
            col_end: 1.0,
            empty_gt: true,
        };
    }
    let matching = match_cells(gt, pred, iou_threshold);
    let n = gt.cells.len() as f64;
    let (mut all, mut rs, mut re, mut cs, mut ce) = (0u32, 0u32, 0u32, 0u32, 0u32);
    for pair in &matching.pairs {
        let g = gt.cells[pair.gt].logical;
        let p = pred.cells[pair.pred].logical;
        rs += (g.row_start == p.row_start) as u32;
        re += (g.row_end == p.row_end) as u32;
        cs += (g.col_start == p.col_start) as u32;
        ce += (g.col_end == p.col_end) as u32;
        all += (g == p) as u32;
    }
    LogicalAccuracy {
        acc: all as f64 / n,
        row_start: rs as f64 / n,
        row_end: re as f64 / n,
        col_start: cs as f64 / n,
        col_end: ce as f64 / n,
        empty_gt: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationKind {
    Horizontal,
    Vertical,
}

/// Directed adjacency between two cells, keyed by cell index:
/// `(left_or_top, right_or_bottom, kind)`.
pub type Relation = (usize, usize, RelationKind);

/// All adjacency relations of a table.
///
/// Cells a and b are horizontally adjacent iff b starts in the column right
/// after a ends and their row ranges intersect; vertical is the transpose.
/// Uses start-index buckets so each cell only scans candidates that could
/// be adjacent, but computes the same set as full pair enumeration.
pub fn adjacency_relations(ann: &TableAnnotation) -> BTreeSet<Relation> {
    let mut by_col_start: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut by_row_start: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, cell) in ann.cells.iter().enumerate() {
        by_col_start.entry(cell.logical.col_start).or_default().push(i);
        by_row_start.entry(cell.logical.row_start).or_default().push(i);
    }

    let mut relations = BTreeSet::new();
    for (a, cell) in ann.cells.iter().enumerate() {
        let la = cell.logical;
        if let Some(next) = by_col_start.get(&(la.col_end + 1)) {
            for &b in next {
                let lb = ann.cells[b].logical;
                if la.row_start <= lb.row_end && lb.row_start <= la.row_end {
                    relations.insert((a, b, RelationKind::Horizontal));
                }
            }
        }
        if let Some(next) = by_row_start.get(&(la.row_end + 1)) {
            for &b in next {
                let lb = ann.cells[b].logical;
                if la.col_start <= lb.col_end && lb.col_start <= la.col_end {
                    relations.insert((a, b, RelationKind::Vertical));
                }
            }
        }
    }
    relations
}

/// Raw counts behind [`adjacency_prf`], exposed for micro-averaging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RelationCounts {
    pub true_positive: usize,
    pub gt_total: usize,
    pub pred_total: usize,
}

impl RelationCounts {
    pub fn add(&mut self, other: &RelationCounts) {
        self.true_positive += other.true_positive;
        self.gt_total += other.gt_total;
        self.pred_total += other.pred_total;
    }

    pub fn prf(&self) -> (f64, f64, f64) {
        if self.gt_total == 0 && self.pred_total == 0 {
            // Two relation-free tables agree perfectly.
            return (1.0, 1.0, 1.0);
        }
        let p = ratio(self.true_positive, self.pred_total);
        let r = ratio(self.true_positive, self.gt_total);
        (p, r, harmonic(p, r))
    }
}

pub fn adjacency_counts(
    gt: &TableAnnotation,
    pred: &TableAnnotation,
    iou_threshold: f64,
) -> RelationCounts {
    let gt_rels = adjacency_relations(gt);
    let pred_rels = adjacency_relations(pred);
    let map = match_cells(gt, pred, iou_threshold).pred_to_gt();

    // Remap predicted relations onto GT cell identities; a relation with an
    // unmatched endpoint can never be a true positive (it still counts in
    // the precision denominator).
    let mut tp = 0usize;
    for &(a, b, kind) in &pred_rels {
        if let (Some(&ga), Some(&gb)) = (map.get(&a), map.get(&b)) {
            if gt_rels.contains(&(ga, gb, kind)) {
                tp += 1;
            }
        }
    }
    RelationCounts { true_positive: tp, gt_total: gt_rels.len(), pred_total: pred_rels.len() }
}

/// Precision/recall/F1 of adjacency relations, with predicted cells mapped
/// to GT identities through IoU matching.
pub fn adjacency_prf(
    gt: &TableAnnotation,
    pred: &TableAnnotation,
    iou_threshold: f64,
) -> (f64, f64, f64) {
    adjacency_counts(gt, pred, iou_threshold).prf()
}

/// Weighted harmonic mean of detection F1 and logical accuracy.
///
/// `beta < 1` weights the physical F1 more heavily; returns 0 when the
/// denominator vanishes.
pub fn f_beta(f1_physical: f64, logical_acc: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * f1_physical + logical_acc;
    if den == 0.0 { 0.0 } else { (1.0 + b2) * f1_physical * logical_acc / den }
}
