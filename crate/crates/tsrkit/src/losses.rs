//! Training losses with exact values and analytic subgradients.
//!
//! Five terms: penalty-reduced focal loss plus sub-pixel offset loss for the
//! keypoint heads, a quality-weighted L1 loss for the paired center/corner
//! vectors (with a pull-to-zero term for unused corner slots), an
//! integer-snapping boundary loss on the interpolation maps, and a span loss
//! tying the span head to both the targets and the maps.
//!
//! The quality weights (`omega` for vectors, `d` for spans) are treated as
//! constants: they rescale the L1 terms but are not differentiated through.
//! [`spatial_loss_with_omegas`] and [`span_loss_with_weights`] expose the
//! frozen-weight losses directly so finite-difference checks can hold the
//! weights fixed while probing the differentiated part.
//!
//! At-the-kink subgradients of |x| are taken as 0.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::LossConfig;
use crate::decoder::RawNetworkOutput;
use crate::raster::RasterMap;
use crate::targets::{OffsetTarget, TargetBundle};
use crate::{Error, Result};

/// Heatmap predictions are clamped into this open interval before logs.
pub const HEATMAP_CLAMP: (f64, f64) = (1e-6, 1.0 - 1e-6);

/// All loss components for one prediction/target pair.
///
/// `logical` is the sum of `boundary` and `span`; `overall` is the sum of
/// `keypoint`, `offset`, `spatial` and `logical`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub keypoint: f64,
    pub offset: f64,
    pub spatial: f64,
    pub boundary: f64,
    pub span: f64,
    pub logical: f64,
    pub overall: f64,
}

/// Gradients of the overall loss with respect to every prediction tensor.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub heatmap: RasterMap,
    pub offsets: RasterMap,
    pub center2corners: RasterMap,
    pub corners2center: RasterMap,
    pub spans: RasterMap,
    pub row_map: RasterMap,
    pub col_map: RasterMap,
}

impl LossGradients {
    fn zeros_like(pred: &RawNetworkOutput) -> Self {
        let z = |r: &RasterMap| RasterMap::zeros(r.height(), r.width(), r.channels());
        LossGradients {
            heatmap: z(&pred.heatmap),
            offsets: z(&pred.offsets),
            center2corners: z(&pred.center2corners),
            corners2center: z(&pred.corners2center),
            spans: z(&pred.spans),
            row_map: z(&pred.row_map),
            col_map: z(&pred.col_map),
        }
    }
}

/// Breakdown, gradients and any warnings from one full evaluation.
#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub breakdown: LossBreakdown,
    pub gradients: LossGradients,
    pub warnings: Vec<String>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn nearest_pixel(map: &RasterMap, y: f64, x: f64) -> (usize, usize) {
    let yi = (y.round() as i64).clamp(0, map.height() as i64 - 1) as usize;
    let xi = (x.round() as i64).clamp(0, map.width() as i64 - 1) as usize;
    (yi, xi)
}

/// Quality weight for one cell's paired vector blocks: the prediction error
/// of the center-to-corner block `u` and corner-to-center block `v`, relative
/// to the magnitude of `u`, mapped through a quarter sine wave. Returns the
/// weight plus a degeneracy flag (`|u| = 0`, where the weight defaults to 1).
pub fn pairing_weight(u: &[f64], u_hat: &[f64], v: &[f64], v_hat: &[f64]) -> (f64, bool) {
    debug_assert_eq!(u.len(), u_hat.len());
    debug_assert_eq!(v.len(), v_hat.len());
    let u_norm: f64 = u.iter().map(|a| a.abs()).sum();
    if u_norm == 0.0 {
        return (1.0, true);
    }
    let err: f64 = u
        .iter()
        .zip(u_hat)
        .chain(v.iter().zip(v_hat))
        .map(|(a, b)| (a - b).abs())
        .sum();
    ((PI / 2.0 * (err / u_norm).min(1.0)).sin(), false)
}

/// Where cell `cell`'s corner `k` lives in the corner targets:
/// `(y, x, slot, gt_vector)`.
type SlotLookup = BTreeMap<(usize, u8), (usize, usize, usize, [f64; 2])>;

fn slot_lookup(target: &TargetBundle) -> SlotLookup {
    let mut lookup = SlotLookup::new();
    for entry in &target.corners2center {
        for (slot, s) in entry.slots.iter().enumerate() {
            if let (true, Some(cell), Some(corner)) = (s.valid, s.cell, s.corner) {
                lookup.insert(
                    (cell, corner),
                    (entry.pos.y as usize, entry.pos.x as usize, slot, s.vector),
                );
            }
        }
    }
    lookup
}

/// Per-cell pairing weights for the current predictions, in
/// `target.center2corners` order.
pub fn spatial_omegas(
    pred_c2c: &RasterMap,
    pred_cn2c: &RasterMap,
    target: &TargetBundle,
) -> (Vec<f64>, Vec<String>) {
    let lookup = slot_lookup(target);
    let mut omegas = Vec::with_capacity(target.center2corners.len());
    let mut warnings = Vec::new();
    for entry in &target.center2corners {
        let (py, px) = (entry.pos.y as usize, entry.pos.x as usize);
        let u_hat: Vec<f64> = (0..8).map(|c| pred_c2c.get(py, px, c)).collect();
        let mut v = Vec::with_capacity(8);
        let mut v_hat = Vec::with_capacity(8);
        for k in 0..4u8 {
            if let Some(&(y, x, slot, gt)) = lookup.get(&(entry.cell, k)) {
                v.extend_from_slice(&gt);
                v_hat.push(pred_cn2c.get(y, x, 2 * slot));
                v_hat.push(pred_cn2c.get(y, x, 2 * slot + 1));
            }
        }
        let (omega, degenerate) = pairing_weight(&entry.vectors, &u_hat, &v, &v_hat);
        if degenerate {
            warnings.push(format!(
                "cell {} has a zero center-to-corner block; its pairing weight defaults to 1",
                entry.cell
            ));
        }
        omegas.push(omega);
    }
    (omegas, warnings)
}

/// Spatial vector loss and its gradients.
#[derive(Debug, Clone)]
pub struct SpatialResult {
    pub value: f64,
    pub c2c_grad: RasterMap,
    pub cn2c_grad: RasterMap,
    pub omegas: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Vector-pair loss with caller-supplied frozen pairing weights: the
/// per-cell weighted L1 over both vector blocks, normalized by 8n, plus the
/// pull-to-zero term over unused corner slots averaged per component.
pub fn spatial_loss_with_omegas(
    pred_c2c: &RasterMap,
    pred_cn2c: &RasterMap,
    target: &TargetBundle,
    cfg: &LossConfig,
    omegas: &[f64],
) -> SpatialResult {
    assert_eq!(omegas.len(), target.center2corners.len());
    let lookup = slot_lookup(target);
    let n = target.center2corners.len();
    let mut c2c_grad = RasterMap::zeros(pred_c2c.height(), pred_c2c.width(), 8);
    let mut cn2c_grad = RasterMap::zeros(pred_cn2c.height(), pred_cn2c.width(), 8);
    let mut value = 0.0;

    if n > 0 {
        let norm = 1.0 / (8.0 * n as f64);
        for (entry, &omega) in target.center2corners.iter().zip(omegas) {
            let (py, px) = (entry.pos.y as usize, entry.pos.x as usize);
            for c in 0..8 {
                let diff = pred_c2c.get(py, px, c) - entry.vectors[c];
                value += norm * omega * cfg.lambda_u * diff.abs();
                c2c_grad.add(py, px, c, norm * omega * cfg.lambda_u * sign(diff));
            }
            for k in 0..4u8 {
                if let Some(&(y, x, slot, gt)) = lookup.get(&(entry.cell, k)) {
                    for axis in 0..2 {
                        let c = 2 * slot + axis;
                        let diff = pred_cn2c.get(y, x, c) - gt[axis];
                        value += norm * omega * cfg.lambda_v * diff.abs();
                        cn2c_grad.add(y, x, c, norm * omega * cfg.lambda_v * sign(diff));
                    }
                }
            }
        }
    }

    // Unused corner slots are regressed toward zero.
    let mut invalid = Vec::new();
    for entry in &target.corners2center {
        for (slot, s) in entry.slots.iter().enumerate() {
            if !s.valid {
                invalid.push((entry.pos.y as usize, entry.pos.x as usize, slot));
            }
        }
    }
    if !invalid.is_empty() {
        let norm = 1.0 / (2.0 * invalid.len() as f64);
        for (y, x, slot) in invalid {
            for axis in 0..2 {
                let p = pred_cn2c.get(y, x, 2 * slot + axis);
                value += cfg.lambda_e * norm * p.abs();
                cn2c_grad.add(y, x, 2 * slot + axis, cfg.lambda_e * norm * sign(p));
            }
        }
    }

    SpatialResult {
        value,
        c2c_grad,
        cn2c_grad,
        omegas: omegas.to_vec(),
        warnings: Vec::new(),
    }
}

/// Vector-pair loss with pairing weights computed from the predictions.
pub fn spatial_loss(
    pred_c2c: &RasterMap,
    pred_cn2c: &RasterMap,
    target: &TargetBundle,
    cfg: &LossConfig,
) -> SpatialResult {
    let (omegas, warnings) = spatial_omegas(pred_c2c, pred_cn2c, target);
    let mut out = spatial_loss_with_omegas(pred_c2c, pred_cn2c, target, cfg, &omegas);
    out.warnings = warnings;
    out
}

/// Boundary loss and its gradients with respect to the predicted maps.
#[derive(Debug, Clone)]
pub struct BoundaryResult {
    pub value: f64,
    pub row_map_grad: RasterMap,
    pub col_map_grad: RasterMap,
    pub warnings: Vec<String>,
}

/// Integer-proximity weight: 1 at integers, 0.25 at half-integers.
fn integer_weight(v: f64) -> f64 {
    let d = 1.0 - (v - v.round()).abs();
    d * d
}

/// Weighted L1 between predicted and reference interpolation maps over the
/// table mask. Pixels near integer reference values (row/column boundaries)
/// weigh more; the weights come from the reference maps only.
pub fn boundary_loss(
    pred_row: &RasterMap,
    pred_col: &RasterMap,
    gt_row: &RasterMap,
    gt_col: &RasterMap,
    mask: &RasterMap,
) -> BoundaryResult {
    let (h, w) = (mask.height(), mask.width());
    assert_eq!((pred_row.height(), pred_row.width()), (h, w));
    assert_eq!((pred_col.height(), pred_col.width()), (h, w));
    assert_eq!((gt_row.height(), gt_row.width()), (h, w));
    assert_eq!((gt_col.height(), gt_col.width()), (h, w));
    let mut row_map_grad = RasterMap::zeros(h, w, 1);
    let mut col_map_grad = RasterMap::zeros(h, w, 1);

    let mask_sum: f64 = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.get(y, x, 0) != 0.0)
        .count() as f64;
    if mask_sum == 0.0 {
        return BoundaryResult {
            value: 0.0,
            row_map_grad,
            col_map_grad,
            warnings: vec!["empty table mask; boundary loss is 0".into()],
        };
    }

    let norm = 1.0 / (2.0 * mask_sum);
    let mut value = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x, 0) == 0.0 {
                continue;
            }
            let (gr, gc) = (gt_row.get(y, x, 0), gt_col.get(y, x, 0));
            let (fr, fc) = (integer_weight(gr), integer_weight(gc));
            let dr = pred_row.get(y, x, 0) - gr;
            let dc = pred_col.get(y, x, 0) - gc;
            value += norm * (fr * dr.abs() + fc * dc.abs());
            row_map_grad.add(y, x, 0, norm * fr * sign(dr));
            col_map_grad.add(y, x, 0, norm * fc * sign(dc));
        }
    }
    BoundaryResult { value, row_map_grad, col_map_grad, warnings: Vec::new() }
}

/// Row and column spans implied by the interpolation maps at a cell's four
/// corners (low-resolution positions, `[x, y]`, upper-left first, clockwise).
/// Row span reads the row map at bottom minus top corners; column span reads
/// the column map at right minus left corners. Lookups are nearest-pixel,
/// border-clamped.
pub fn span_from_maps(
    corners: &[[f64; 2]; 4],
    row_map: &RasterMap,
    col_map: &RasterMap,
) -> ([f64; 2], [f64; 2]) {
    let at = |map: &RasterMap, c: &[f64; 2]| map.sample_nearest(c[1], c[0], 0);
    let s_row = [
        at(row_map, &corners[3]) - at(row_map, &corners[0]),
        at(row_map, &corners[2]) - at(row_map, &corners[1]),
    ];
    let s_col = [
        at(col_map, &corners[1]) - at(col_map, &corners[0]),
        at(col_map, &corners[2]) - at(col_map, &corners[3]),
    ];
    (s_row, s_col)
}

/// Span-agreement weight: total deviation of the predicted span and the
/// map-implied span (mean of its two components) from the target, capped at
/// `cap` and mapped through a quarter sine wave.
pub fn span_weight(s_hat: f64, s: f64, s_tilde: [f64; 2], cap: f64) -> f64 {
    let tilde_dev = ((s_tilde[0] - s).abs() + (s_tilde[1] - s).abs()) / 2.0;
    let dev = (s_hat - s).abs() + tilde_dev;
    (PI / (2.0 * cap) * dev.min(cap)).sin()
}

/// Cell corner positions on the low-resolution grid, reconstructed from the
/// center target and its corner vectors.
fn cell_corners(target: &TargetBundle) -> BTreeMap<usize, [[f64; 2]; 4]> {
    target
        .center2corners
        .iter()
        .map(|e| {
            let mut corners = [[0.0; 2]; 4];
            for k in 0..4 {
                corners[k] = [
                    e.center[0] + e.vectors[2 * k],
                    e.center[1] + e.vectors[2 * k + 1],
                ];
            }
            (e.cell, corners)
        })
        .collect()
}

/// Per-cell `(d_row, d_col)` weights for the current predictions, in
/// `target.spans` order. Cells without a center target get zero weights.
pub fn span_weights(
    pred_spans: &RasterMap,
    pred_row: &RasterMap,
    pred_col: &RasterMap,
    target: &TargetBundle,
    cfg: &LossConfig,
) -> Vec<[f64; 2]> {
    let corners = cell_corners(target);
    target
        .spans
        .iter()
        .map(|t| {
            let Some(c) = corners.get(&t.cell) else {
                return [0.0, 0.0];
            };
            let (py, px) = (t.pos.y as usize, t.pos.x as usize);
            let (s_row, s_col) = span_from_maps(c, pred_row, pred_col);
            [
                span_weight(pred_spans.get(py, px, 0), t.span[0], s_row, cfg.span_cap),
                span_weight(pred_spans.get(py, px, 1), t.span[1], s_col, cfg.span_cap),
            ]
        })
        .collect()
}

/// Span loss and its gradients.
#[derive(Debug, Clone)]
pub struct SpanResult {
    pub value: f64,
    pub spans_grad: RasterMap,
    pub row_map_grad: RasterMap,
    pub col_map_grad: RasterMap,
    pub weights: Vec<[f64; 2]>,
}

/// Span loss with caller-supplied frozen agreement weights: a weighted L1
/// between the span head and the targets (normalized by 2n), plus a weighted
/// L1 between the map-implied spans and the targets (normalized by 4n, the
/// two components of each implied span averaged).
pub fn span_loss_with_weights(
    pred_spans: &RasterMap,
    pred_row: &RasterMap,
    pred_col: &RasterMap,
    target: &TargetBundle,
    weights: &[[f64; 2]],
) -> SpanResult {
    assert_eq!(weights.len(), target.spans.len());
    let corners = cell_corners(target);
    let n = target.spans.len();
    let mut spans_grad = RasterMap::zeros(pred_spans.height(), pred_spans.width(), 2);
    let mut row_map_grad = RasterMap::zeros(pred_row.height(), pred_row.width(), 1);
    let mut col_map_grad = RasterMap::zeros(pred_col.height(), pred_col.width(), 1);
    if n == 0 {
        return SpanResult {
            value: 0.0,
            spans_grad,
            row_map_grad,
            col_map_grad,
            weights: Vec::new(),
        };
    }

    let norm_s = 1.0 / (2.0 * n as f64);
    let norm_t = 1.0 / (4.0 * n as f64);
    let mut value = 0.0;
    for (t, w) in target.spans.iter().zip(weights) {
        let (py, px) = (t.pos.y as usize, t.pos.x as usize);
        for axis in 0..2 {
            let diff = pred_spans.get(py, px, axis) - t.span[axis];
            value += norm_s * w[axis] * diff.abs();
            spans_grad.add(py, px, axis, norm_s * w[axis] * sign(diff));
        }
        let Some(c) = corners.get(&t.cell) else { continue };
        let (s_row, s_col) = span_from_maps(c, pred_row, pred_col);
        // Row components read the row map at (bottom − top) corner pairs,
        // column components the column map at (right − left) pairs.
        let specs = [
            (true, s_row[0], t.span[0], w[0], 3usize, 0usize),
            (true, s_row[1], t.span[0], w[0], 2, 1),
            (false, s_col[0], t.span[1], w[1], 1, 0),
            (false, s_col[1], t.span[1], w[1], 2, 3),
        ];
        for (is_row, s_tilde, s, wt, plus, minus) in specs {
            let diff = s_tilde - s;
            value += norm_t * wt * diff.abs() / 2.0;
            let g = norm_t * wt * sign(diff) / 2.0;
            let grad = if is_row { &mut row_map_grad } else { &mut col_map_grad };
            let (py, px) = nearest_pixel(grad, c[plus][1], c[plus][0]);
            grad.add(py, px, 0, g);
            let (my, mx) = nearest_pixel(grad, c[minus][1], c[minus][0]);
            grad.add(my, mx, 0, -g);
        }
    }
    SpanResult { value, spans_grad, row_map_grad, col_map_grad, weights: weights.to_vec() }
}

/// Span loss with agreement weights computed from the predictions.
pub fn span_loss(
    pred_spans: &RasterMap,
    pred_row: &RasterMap,
    pred_col: &RasterMap,
    target: &TargetBundle,
    cfg: &LossConfig,
) -> SpanResult {
    let weights = span_weights(pred_spans, pred_row, pred_col, target, cfg);
    span_loss_with_weights(pred_spans, pred_row, pred_col, target, &weights)
}

/// Keypoint losses and their gradients.
#[derive(Debug, Clone)]
pub struct KeypointResult {
    /// Penalty-reduced focal loss over both heatmap channels.
    pub focal: f64,
    /// Mean L1 of the sub-pixel offsets at keypoint pixels.
    pub offset: f64,
    pub heatmap_grad: RasterMap,
    pub offsets_grad: RasterMap,
}

/// Penalty-reduced pixelwise focal loss plus mean-L1 offset loss. Peak
/// pixels (target exactly 1) count toward the normalizer; everything else is
/// background weighted down by its Gaussian value. Predictions are clamped
/// into [`HEATMAP_CLAMP`] before logs; the gradient is zero outside the
/// clamp interval.
pub fn keypoint_loss(
    pred_heatmap: &RasterMap,
    pred_offsets: &RasterMap,
    gt_heatmap: &RasterMap,
    gt_offsets: &[OffsetTarget],
    cfg: &LossConfig,
) -> KeypointResult {
    let (h, w, ch) = (gt_heatmap.height(), gt_heatmap.width(), gt_heatmap.channels());
    assert_eq!((pred_heatmap.height(), pred_heatmap.width(), pred_heatmap.channels()), (h, w, ch));
    let mut heatmap_grad = RasterMap::zeros(h, w, ch);
    let mut offsets_grad = RasterMap::zeros(pred_offsets.height(), pred_offsets.width(), 2);
    let (alpha, beta) = (cfg.focal_alpha, cfg.focal_beta);

    let mut peaks = 0usize;
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                if gt_heatmap.get(y, x, c) == 1.0 {
                    peaks += 1;
                }
            }
        }
    }
    let norm = 1.0 / peaks.max(1) as f64;

    let mut focal = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let g = gt_heatmap.get(y, x, c);
                let p_raw = pred_heatmap.get(y, x, c);
                let p = p_raw.clamp(HEATMAP_CLAMP.0, HEATMAP_CLAMP.1);
                let (l, dl) = if g == 1.0 {
                    let l = -(1.0 - p).powf(alpha) * p.ln();
                    let dl = alpha * (1.0 - p).powf(alpha - 1.0) * p.ln()
                        - (1.0 - p).powf(alpha) / p;
                    (l, dl)
                } else {
                    let damp = (1.0 - g).powf(beta);
                    let l = -damp * p.powf(alpha) * (1.0 - p).ln();
                    let dl = damp
                        * (p.powf(alpha) / (1.0 - p)
                            - alpha * p.powf(alpha - 1.0) * (1.0 - p).ln());
                    (l, dl)
                };
                focal += norm * l;
                if p_raw > HEATMAP_CLAMP.0 && p_raw < HEATMAP_CLAMP.1 {
                    heatmap_grad.add(y, x, c, norm * dl);
                }
            }
        }
    }

    let off_norm = 1.0 / gt_offsets.len().max(1) as f64;
    let mut offset = 0.0;
    for t in gt_offsets {
        let (py, px) = (t.pos.y as usize, t.pos.x as usize);
        for axis in 0..2 {
            let diff = pred_offsets.get(py, px, axis) - t.offset[axis];
            offset += off_norm * diff.abs();
            offsets_grad.add(py, px, axis, off_norm * sign(diff));
        }
    }

    KeypointResult { focal, offset, heatmap_grad, offsets_grad }
}

/// Evaluates every loss term for a prediction against its target bundle and
/// sums component gradients into one gradient set.
pub fn overall_loss(
    pred: &RawNetworkOutput,
    target: &TargetBundle,
    cfg: &LossConfig,
) -> Result<LossEvaluation> {
    pred.validate_dims()?;
    if pred.meta != target.meta {
        return Err(Error::Format(format!(
            "prediction metadata {:?} does not match target metadata {:?}",
            pred.meta, target.meta
        )));
    }
    let (lh, lw) = target.meta.lowres_dims();
    if (pred.heatmap.height(), pred.heatmap.width()) != (lh, lw) {
        return Err(Error::Format(format!(
            "prediction tensors are {}x{} but metadata implies {lh}x{lw}",
            pred.heatmap.height(),
            pred.heatmap.width()
        )));
    }

    let mut warnings = Vec::new();
    let kp = keypoint_loss(&pred.heatmap, &pred.offsets, &target.heatmap, &target.offsets, cfg);
    let spatial = spatial_loss(&pred.center2corners, &pred.corners2center, target, cfg);
    warnings.extend(spatial.warnings.iter().cloned());
    let boundary = boundary_loss(
        &pred.row_map,
        &pred.col_map,
        &target.row_map,
        &target.col_map,
        &target.mask,
    );
    warnings.extend(boundary.warnings.iter().cloned());
    let span = span_loss(&pred.spans, &pred.row_map, &pred.col_map, target, cfg);

    let mut gradients = LossGradients::zeros_like(pred);
    gradients.heatmap = kp.heatmap_grad;
    gradients.offsets = kp.offsets_grad;
    gradients.center2corners = spatial.c2c_grad;
    gradients.corners2center = spatial.cn2c_grad;
    gradients.spans = span.spans_grad;
    for y in 0..lh {
        for x in 0..lw {
            gradients.row_map.add(
                y,
                x,
                0,
                boundary.row_map_grad.get(y, x, 0) + span.row_map_grad.get(y, x, 0),
            );
            gradients.col_map.add(
                y,
                x,
                0,
                boundary.col_map_grad.get(y, x, 0) + span.col_map_grad.get(y, x, 0),
            );
        }
    }

    let logical = boundary.value + span.value;
    let breakdown = LossBreakdown {
        keypoint: kp.focal,
        offset: kp.offset,
        spatial: spatial.value,
        boundary: boundary.value,
        span: span.value,
        logical,
        overall: kp.focal + kp.offset + spatial.value + logical,
    };
    Ok(LossEvaluation { breakdown, gradients, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{
        BundleMeta, CenterVectors, CornerSlot, CornerVectors, PixelPos, SpanTarget,
    };

    fn empty_bundle(h: usize, w: usize) -> TargetBundle {
        TargetBundle {
            heatmap: RasterMap::zeros(h, w, 2),
            offsets: Vec::new(),
            center2corners: Vec::new(),
            corners2center: Vec::new(),
            spans: Vec::new(),
            row_map: RasterMap::zeros(h, w, 1),
            col_map: RasterMap::zeros(h, w, 1),
            mask: RasterMap::zeros(h, w, 1),
            meta: BundleMeta { height: (h * 4) as u32, width: (w * 4) as u32, downscale: 4 },
            warnings: Vec::new(),
        }
    }

    #[test]
    fn pairing_weight_hits_the_analytic_anchors() {
        let u = [3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let v = [0.0; 8];
        // Perfect prediction.
        assert_eq!(pairing_weight(&u, &u, &v, &v).0, 0.0);
        // Error equal to |u|.
        let mut u_hat = u;
        u_hat[0] = 6.0;
        assert!((pairing_weight(&u, &u_hat, &v, &v).0 - 1.0).abs() < 1e-15);
        // Error ratio 1/3.
        u_hat[0] = 4.0;
        assert!((pairing_weight(&u, &u_hat, &v, &v).0 - 0.5).abs() < 1e-15);
        // Degenerate block.
        let z = [0.0; 8];
        let (w, degenerate) = pairing_weight(&z, &z, &v, &v);
        assert_eq!(w, 1.0);
        assert!(degenerate);
    }

    #[test]
    fn unused_slot_pull_matches_hand_arithmetic() {
        // One center entry, two corner entries with two valid slots each:
        // four unused slots in total. One unused slot predicts (3, 4).
        let mut target = empty_bundle(8, 8);
        target.center2corners.push(CenterVectors {
            pos: PixelPos::new(4, 4),
            cell: 0,
            center: [4.0, 4.0],
            vectors: [-1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0],
        });
        let slot = |cell: usize, corner: u8, vx: f64, vy: f64| CornerSlot {
            vector: [vx, vy],
            valid: true,
            cell: Some(cell),
            corner: Some(corner),
        };
        target.corners2center.push(CornerVectors {
            pos: PixelPos::new(3, 3),
            corner: [3.0, 3.0],
            slots: [slot(0, 0, 1.0, 1.0), slot(0, 1, -1.0, 1.0), CornerSlot::empty(), CornerSlot::empty()],
        });
        target.corners2center.push(CornerVectors {
            pos: PixelPos::new(5, 5),
            corner: [5.0, 5.0],
            slots: [slot(0, 2, -1.0, -1.0), slot(0, 3, 1.0, -1.0), CornerSlot::empty(), CornerSlot::empty()],
        });

        // Predictions equal to every target; one unused slot nonzero.
        let mut c2c = RasterMap::zeros(8, 8, 8);
        for (c, v) in target.center2corners[0].vectors.iter().enumerate() {
            c2c.set(4, 4, c, *v);
        }
        let mut cn2c = RasterMap::zeros(8, 8, 8);
        for e in &target.corners2center {
            for (s, sl) in e.slots.iter().enumerate() {
                if sl.valid {
                    cn2c.set(e.pos.y as usize, e.pos.x as usize, 2 * s, sl.vector[0]);
                    cn2c.set(e.pos.y as usize, e.pos.x as usize, 2 * s + 1, sl.vector[1]);
                }
            }
        }
        cn2c.set(3, 3, 4, 3.0); // unused slot 2 of the first corner
        cn2c.set(3, 3, 5, 4.0);

        let cfg = LossConfig::default();
        let got = spatial_loss(&c2c, &cn2c, &target, &cfg);
        // Matched blocks are perfect, so only the unused-slot term remains:
        // (3 + 4) / (2 * 4 unused slots) = 0.875, scaled by 0.2.
        assert!((got.value - 0.175).abs() < 1e-12, "{}", got.value);
        assert_eq!(got.omegas, vec![0.0]);
        // Gradient points along the sign of the unused prediction.
        assert!((got.cn2c_grad.get(3, 3, 4) - 0.2 / 8.0).abs() < 1e-12);
        assert!((got.cn2c_grad.get(3, 3, 5) - 0.2 / 8.0).abs() < 1e-12);
        assert_eq!(got.cn2c_grad.get(5, 5, 4), 0.0);
    }

    #[test]
    fn boundary_weights_follow_distance_to_integers() {
        assert_eq!(integer_weight(2.0), 1.0);
        assert_eq!(integer_weight(1.5), 0.25);
        assert_eq!(integer_weight(0.25), 0.5625);
    }

    #[test]
    fn boundary_loss_is_zero_at_truth_and_ignores_unmasked_pixels() {
        let mut gt_row = RasterMap::zeros(4, 4, 1);
        let mut gt_col = RasterMap::zeros(4, 4, 1);
        let mut mask = RasterMap::zeros(4, 4, 1);
        for y in 0..4 {
            for x in 0..4 {
                gt_row.set(y, x, 0, y as f64 / 3.0);
                gt_col.set(y, x, 0, x as f64 / 3.0);
                if y < 2 {
                    mask.set(y, x, 0, 1.0);
                }
            }
        }
        let zero = boundary_loss(&gt_row, &gt_col, &gt_row, &gt_col, &mask);
        assert_eq!(zero.value, 0.0);

        // Perturbing an unmasked pixel changes nothing.
        let mut pred = gt_row.clone();
        pred.set(3, 3, 0, 99.0);
        let same = boundary_loss(&pred, &gt_col, &gt_row, &gt_col, &mask);
        assert_eq!(same.value, 0.0);
        assert_eq!(same.row_map_grad.get(3, 3, 0), 0.0);

        // Perturbing a masked pixel with integer reference weighs fully:
        // |0.5| * 1.0 / (2 * 8 mask pixels).
        let mut pred = gt_row.clone();
        pred.set(0, 0, 0, 0.5);
        let hit = boundary_loss(&pred, &gt_col, &gt_row, &gt_col, &mask);
        assert!((hit.value - 0.5 / 16.0).abs() < 1e-15);
        assert!((hit.row_map_grad.get(0, 0, 0) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_warns_and_returns_zero() {
        let z = RasterMap::zeros(4, 4, 1);
        let got = boundary_loss(&z, &z, &z, &z, &z);
        assert_eq!(got.value, 0.0);
        assert_eq!(got.warnings.len(), 1);
    }

    /// A 32x32 image with one 16x16 cell whose corners sit on exact
    /// low-resolution pixels, plus linear-ramp maps that make the implied
    /// spans exactly 1.
    fn one_cell_bundle() -> TargetBundle {
        let mut target = empty_bundle(8, 8);
        target.center2corners.push(CenterVectors {
            pos: PixelPos::new(4, 4),
            cell: 0,
            center: [4.0, 4.0],
            vectors: [-2.0, -2.0, 2.0, -2.0, 2.0, 2.0, -2.0, 2.0],
        });
        target.spans.push(SpanTarget { pos: PixelPos::new(4, 4), cell: 0, span: [1.0, 1.0] });
        for y in 0..8 {
            for x in 0..8 {
                target.row_map.set(y, x, 0, (y as f64 - 2.0) / 4.0);
                target.col_map.set(y, x, 0, (x as f64 - 2.0) / 4.0);
                target.mask.set(y, x, 0, 1.0);
            }
        }
        target
    }

    #[test]
    fn span_loss_matches_the_single_cell_example() {
        let target = one_cell_bundle();
        let mut pred_spans = RasterMap::zeros(8, 8, 2);
        pred_spans.set(4, 4, 0, 1.1); // row span off by 0.1
        pred_spans.set(4, 4, 1, 1.0);
        let got =
            span_loss(&pred_spans, &target.row_map, &target.col_map, &target, &LossConfig::default());
        let d_r = (5.0 * PI / 2.0 * 0.1).sin();
        assert!((got.weights[0][0] - d_r).abs() < 1e-15);
        assert_eq!(got.weights[0][1], 0.0);
        assert!((got.value - 0.5 * d_r * 0.1).abs() < 1e-15, "{}", got.value);
        // Gradient on the row-span channel only.
        assert!((got.spans_grad.get(4, 4, 0) - 0.5 * d_r).abs() < 1e-15);
        assert_eq!(got.spans_grad.get(4, 4, 1), 0.0);
    }

    #[test]
    fn span_loss_vanishes_at_perfect_predictions() {
        let target = one_cell_bundle();
        let mut pred_spans = RasterMap::zeros(8, 8, 2);
        pred_spans.set(4, 4, 0, 1.0);
        pred_spans.set(4, 4, 1, 1.0);
        let got =
            span_loss(&pred_spans, &target.row_map, &target.col_map, &target, &LossConfig::default());
        assert_eq!(got.value, 0.0);
        assert_eq!(got.weights, vec![[0.0, 0.0]]);
    }

    #[test]
    fn map_implied_spans_feed_gradients_into_the_maps() {
        let target = one_cell_bundle();
        let mut pred_spans = RasterMap::zeros(8, 8, 2);
        pred_spans.set(4, 4, 0, 1.0);
        pred_spans.set(4, 4, 1, 1.0);
        // Shift the predicted row map up by 0.05 at the bottom-left corner
        // pixel (6, 2): first row component becomes 1.05.
        let mut pred_row = target.row_map.clone();
        pred_row.set(6, 2, 0, pred_row.get(6, 2, 0) + 0.05);
        let got =
            span_loss(&pred_spans, &pred_row, &target.col_map, &target, &LossConfig::default());
        let d_r = (5.0 * PI / 2.0 * 0.025f64.min(0.2)).sin();
        let expected = 0.25 * d_r * 0.05 / 2.0;
        assert!((got.value - expected).abs() < 1e-12, "{} vs {expected}", got.value);
        assert!(got.row_map_grad.get(6, 2, 0) > 0.0);
        assert!(got.row_map_grad.get(2, 2, 0) < 0.0);
        // Boundary-loss-free sanity: the col map saw no perturbation.
        assert_eq!(got.col_map_grad, RasterMap::zeros(8, 8, 1));
    }

    #[test]
    fn span_weight_caps_at_one() {
        assert_eq!(span_weight(3.0, 1.0, [1.0, 1.0], 0.2), 1.0);
        assert!((span_weight(1.1, 1.0, [1.0, 1.0], 0.2) - (PI / 4.0).sin()).abs() < 1e-15);
        assert_eq!(span_weight(1.0, 1.0, [1.0, 1.0], 0.2), 0.0);
    }

    #[test]
    fn focal_loss_matches_the_background_example() {
        let mut gt = RasterMap::zeros(4, 4, 2);
        gt.set(0, 0, 0, 1.0); // one peak so the normalizer is 1
        let mut pred = gt.clone();
        pred.set(2, 2, 0, 0.5); // background pixel predicted at 0.5
        let zeros2 = RasterMap::zeros(4, 4, 2);
        let got = keypoint_loss(&pred, &zeros2, &gt, &[], &LossConfig::default());
        // Peak contributes -(1-1+eps)^2*ln(1-eps) ~ 0; background pixel
        // contributes 0.25 * ln 2.
        assert!((got.focal - 0.25 * 2.0f64.ln()).abs() < 1e-9, "{}", got.focal);
        assert_eq!(got.offset, 0.0);
        // Background gradient pushes the prediction down.
        assert!(got.heatmap_grad.get(2, 2, 0) > 0.0);
        // A perfectly hit peak sits on the clamp boundary: no gradient.
        assert_eq!(got.heatmap_grad.get(0, 0, 0), 0.0);

        // An under-confident peak is pulled up (negative gradient).
        let mut low = pred.clone();
        low.set(0, 0, 0, 0.9);
        let got = keypoint_loss(&low, &zeros2, &gt, &[], &LossConfig::default());
        assert!(got.heatmap_grad.get(0, 0, 0) < 0.0);
    }

    #[test]
    fn offset_loss_averages_over_keypoints() {
        let gt = RasterMap::zeros(4, 4, 2);
        let pred_hm = gt.clone();
        let mut pred_off = RasterMap::zeros(4, 4, 2);
        pred_off.set(1, 1, 0, 0.3);
        pred_off.set(2, 2, 1, 0.4);
        let targets = vec![
            OffsetTarget { pos: PixelPos::new(1, 1), offset: [0.1, 0.0] },
            OffsetTarget { pos: PixelPos::new(2, 2), offset: [0.0, 0.0] },
        ];
        let got = keypoint_loss(&pred_hm, &pred_off, &gt, &targets, &LossConfig::default());
        assert!((got.offset - (0.2 + 0.4) / 2.0).abs() < 1e-15);
        assert!((got.offsets_grad.get(1, 1, 0) - 0.5).abs() < 1e-15);
        assert!((got.offsets_grad.get(2, 2, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn overall_loss_adds_up_and_sums_map_gradients() {
        let target = one_cell_bundle();
        let (lh, lw) = target.meta.lowres_dims();
        let mut pred = crate::bundle::densify(&target);
        pred.heatmap = RasterMap::zeros(lh, lw, 2);
        for y in 0..lh {
            for x in 0..lw {
                pred.row_map.set(y, x, 0, pred.row_map.get(y, x, 0) + 0.01);
            }
        }
        pred.spans.set(4, 4, 0, 1.05);
        let got = overall_loss(&pred, &target, &LossConfig::default()).unwrap();
        let b = got.breakdown;
        assert!((b.logical - (b.boundary + b.span)).abs() < 1e-12);
        assert!((b.overall - (b.keypoint + b.offset + b.spatial + b.logical)).abs() < 1e-12);
        assert!(b.boundary > 0.0);
        assert!(b.span > 0.0);
        // Row-map gradient at a span corner pixel carries both components.
        let boundary_only = boundary_loss(
            &pred.row_map,
            &pred.col_map,
            &target.row_map,
            &target.col_map,
            &target.mask,
        );
        let span_only =
            span_loss(&pred.spans, &pred.row_map, &pred.col_map, &target, &LossConfig::default());
        let expect =
            boundary_only.row_map_grad.get(6, 2, 0) + span_only.row_map_grad.get(6, 2, 0);
        assert!((got.gradients.row_map.get(6, 2, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn mismatched_metadata_is_an_input_error() {
        let target = one_cell_bundle();
        let mut pred = crate::bundle::densify(&target);
        pred.meta.width += 4;
        let err = overall_loss(&pred, &target, &LossConfig::default()).unwrap_err();
        assert!(err.is_input_error());
    }
}
