//! One-stage decoding of raw network output tensors into a structured table.
//!
//! Stages, all on the low-resolution grid:
//! 1. [`extract_peaks`] — thresholded 8-neighbour local maxima on a heatmap
//!    channel, refined by the sub-pixel offset head;
//! 2. [`regress_cells`] — one approximate cell per center keypoint from the
//!    center-to-corners vectors and the span head;
//! 3. [`align_corners`] — snaps regressed corners to nearby detected corner
//!    keypoints, but only when that keypoint carries a corner-to-center slot
//!    pointing back at the cell (mutual verification);
//! 4. [`assign_logical`] — row/column start indices read from the
//!    interpolation maps at the aligned upper-left corner, extents from the
//!    span head.
//!
//! [`decode_table`] chains the stages and scales coordinates back to full
//! resolution. Decoding is deterministic: equal-score and plateau ties break
//! by row-major pixel order.

use serde::{Deserialize, Serialize};

use crate::annotation::{Cell, LogicalLoc, TableAnnotation};
use crate::geom::{Point2, Quad};
use crate::raster::RasterMap;
use crate::targets::BundleMeta;
use crate::{Error, Result};

/// Raw output tensors as a network would produce them, all on the
/// low-resolution grid.
#[derive(Debug, Clone)]
pub struct RawNetworkOutput {
    /// 2 channels: 0 = cell centers, 1 = cell corners.
    pub heatmap: RasterMap,
    /// 2 channels: sub-pixel (dx, dy) shared by both keypoint kinds.
    pub offsets: RasterMap,
    /// 8 channels: center-to-corner displacements, (x, y) per corner slot.
    pub center2corners: RasterMap,
    /// 8 channels: corner-to-center displacements, 4 slots of (x, y).
    pub corners2center: RasterMap,
    /// 2 channels: (row_span, col_span).
    pub spans: RasterMap,
    /// 1 channel: fractional row index map.
    pub row_map: RasterMap,
    /// 1 channel: fractional column index map.
    pub col_map: RasterMap,
    pub meta: BundleMeta,
}

impl RawNetworkOutput {
    /// Checks channel counts and that every raster shares one grid shape.
    pub fn validate_dims(&self) -> Result<()> {
        let (h, w) = (self.heatmap.height(), self.heatmap.width());
        let expect = [
            ("heatmap", &self.heatmap, 2usize),
            ("offsets", &self.offsets, 2),
            ("center2corners", &self.center2corners, 8),
            ("corners2center", &self.corners2center, 8),
            ("spans", &self.spans, 2),
            ("rowmap", &self.row_map, 1),
            ("colmap", &self.col_map, 1),
        ];
        for (name, r, channels) in expect {
            if r.channels() != channels {
                return Err(Error::Format(format!(
                    "{name} has {} channels, expected {channels}",
                    r.channels()
                )));
            }
            if (r.height(), r.width()) != (h, w) {
                return Err(Error::Format(format!(
                    "{name} is {}x{}, expected {h}x{w}",
                    r.height(),
                    r.width()
                )));
            }
        }
        Ok(())
    }
}

/// Decoder thresholds and radii (low-resolution pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub tau_center: f64,
    pub tau_corner: f64,
    pub max_k: usize,
    /// Snap radius for corner alignment.
    pub r_align: f64,
    /// Back-pointing tolerance for corner-to-center verification.
    pub eps_back: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            tau_center: 0.3,
            tau_corner: 0.3,
            max_k: 3000,
            r_align: 2.0,
            eps_back: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeypointKind {
    Center,
    Corner,
}

/// A detected keypoint: source pixel, offset-refined position and score.
#[derive(Debug, Clone, Copy)]
pub struct Keypoint {
    pub pixel: (usize, usize),
    pub position: Point2,
    pub score: f64,
    pub kind: KeypointKind,
}

/// A cell after center regression, before/after corner alignment.
#[derive(Debug, Clone)]
pub struct ApproxCell {
    pub center: Point2,
    pub corners: [Point2; 4],
    pub span: [f64; 2],
    pub score: f64,
    pub degenerate: bool,
    pub aligned_corners: u8,
}

/// Per-cell decode diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub score: f64,
    pub aligned_corners: u8,
    pub clamped_indices: bool,
    pub clamped_spans: bool,
    pub clamped_coords: bool,
    pub degenerate_quad: bool,
}

/// Decoded table plus per-cell scores and diagnostics. Logical overlaps are
/// reported, not suppressed.
#[derive(Debug, Clone)]
pub struct DecodedTable {
    pub annotation: TableAnnotation,
    pub scores: Vec<f64>,
    pub diagnostics: Vec<CellDiagnostics>,
    pub overlap_violations: Vec<(usize, usize)>,
}

/// Thresholded 8-neighbour local maxima of one heatmap channel, refined by
/// the offset head. Plateau ties keep only the row-major-first pixel; the
/// result is sorted by descending score (row-major for equal scores) and
/// truncated to `max_k`.
pub fn extract_peaks(
    heatmap: &RasterMap,
    channel: usize,
    offsets: &RasterMap,
    tau: f64,
    max_k: usize,
    kind: KeypointKind,
) -> Vec<Keypoint> {
    let (h, w) = (heatmap.height(), heatmap.width());
    let mut peaks = Vec::new();
    for y in 0..h {
        'pixel: for x in 0..w {
            let v = heatmap.get(y, x, channel);
            if v < tau {
                continue;
            }
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || ny >= h as i64 || nx < 0 || nx >= w as i64 {
                        continue;
                    }
                    let nv = heatmap.get(ny as usize, nx as usize, channel);
                    if nv > v {
                        continue 'pixel;
                    }
                    // Equal-valued plateau: only the row-major-first pixel
                    // is kept.
                    if nv == v && (ny, nx) < (y as i64, x as i64) {
                        continue 'pixel;
                    }
                }
            }
            let position = Point2::new(
                x as f64 + offsets.get(y, x, 0),
                y as f64 + offsets.get(y, x, 1),
            );
            peaks.push(Keypoint { pixel: (y, x), position, score: v, kind });
        }
    }
    peaks.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then_with(|| a.pixel.cmp(&b.pixel))
    });
    peaks.truncate(max_k);
    peaks
}

/// One approximate cell per center keypoint: corners from the
/// center-to-corners head, spans from the span head, both sampled at the
/// center's source pixel.
pub fn regress_cells(
    centers: &[Keypoint],
    center2corners: &RasterMap,
    spans: &RasterMap,
) -> Vec<ApproxCell> {
    centers
        .iter()
        .map(|kp| {
            let (y, x) = kp.pixel;
            let mut corners = [Point2::new(0.0, 0.0); 4];
            for k in 0..4 {
                corners[k] = Point2::new(
                    kp.position.x + center2corners.get(y, x, 2 * k),
                    kp.position.y + center2corners.get(y, x, 2 * k + 1),
                );
            }
            let span = [spans.get(y, x, 0), spans.get(y, x, 1)];
            let degenerate = crate::geom::shoelace_area(&corners) <= 1e-9;
            ApproxCell {
                center: kp.position,
                corners,
                span,
                score: kp.score,
                degenerate,
                aligned_corners: 0,
            }
        })
        .collect()
}

/// Snaps each regressed corner to the nearest detected corner keypoint within
/// `r_align`, if that keypoint has a corner-to-center slot pointing back to
/// within `eps_back` of the cell center; otherwise the regressed position is
/// kept. Distance ties break by row-major keypoint pixel.
pub fn align_corners(
    cells: &mut [ApproxCell],
    corner_keypoints: &[Keypoint],
    corners2center: &RasterMap,
    cfg: &DecodeConfig,
) {
    for cell in cells.iter_mut() {
        let mut aligned = 0u8;
        for k in 0..4 {
            let target = cell.corners[k];
            let mut best: Option<(f64, (usize, usize), Point2)> = None;
            for kp in corner_keypoints {
                let dist = kp.position.distance(&target);
                if dist > cfg.r_align {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((bd, bp, _)) => {
                        dist < *bd || (dist == *bd && kp.pixel < *bp)
                    }
                };
                if better {
                    best = Some((dist, kp.pixel, kp.position));
                }
            }
            if let Some((_, pixel, position)) = best {
                let (y, x) = pixel;
                let points_back = (0..4).any(|slot| {
                    let back = Point2::new(
                        position.x + corners2center.get(y, x, 2 * slot),
                        position.y + corners2center.get(y, x, 2 * slot + 1),
                    );
                    back.distance(&cell.center) <= cfg.eps_back
                });
                if points_back {
                    cell.corners[k] = position;
                    aligned += 1;
                }
            }
        }
        cell.aligned_corners = aligned;
    }
}

/// Logical location from the interpolation maps: start indices are rounded
/// map lookups at the aligned upper-left corner (nearest pixel, border
/// clamped); extents come from the floored span head with a floor of one.
/// Returns the location plus (clamped_indices, clamped_spans) flags.
pub fn assign_logical(
    cell: &ApproxCell,
    row_map: &RasterMap,
    col_map: &RasterMap,
) -> (LogicalLoc, bool, bool) {
    let c1 = cell.corners[0];
    let mut clamped_indices = false;
    let mut clamped_spans = false;

    let mut row_start = row_map.sample_nearest(c1.y, c1.x, 0).round() as i64;
    let mut col_start = col_map.sample_nearest(c1.y, c1.x, 0).round() as i64;
    if row_start < 0 {
        row_start = 0;
        clamped_indices = true;
    }
    if col_start < 0 {
        col_start = 0;
        clamped_indices = true;
    }
    let mut row_span = cell.span[0].floor() as i64;
    let mut col_span = cell.span[1].floor() as i64;
    if row_span < 1 {
        row_span = 1;
        clamped_spans = true;
    }
    if col_span < 1 {
        col_span = 1;
        clamped_spans = true;
    }
    let loc = LogicalLoc::new(
        row_start as u32,
        (row_start + row_span - 1) as u32,
        col_start as u32,
        (col_start + col_span - 1) as u32,
    );
    (loc, clamped_indices, clamped_spans)
}

/// Full decode: peaks, regression, alignment, logical assignment, then
/// magnification back to full resolution with border clamping.
pub fn decode_table(raw: &RawNetworkOutput, cfg: &DecodeConfig) -> Result<DecodedTable> {
    raw.validate_dims()?;
    let centers = extract_peaks(
        &raw.heatmap,
        0,
        &raw.offsets,
        cfg.tau_center,
        cfg.max_k,
        KeypointKind::Center,
    );
    let corners = extract_peaks(
        &raw.heatmap,
        1,
        &raw.offsets,
        cfg.tau_corner,
        cfg.max_k,
        KeypointKind::Corner,
    );
    let mut cells = regress_cells(&centers, &raw.center2corners, &raw.spans);
    align_corners(&mut cells, &corners, &raw.corners2center, cfg);

    let d = raw.meta.downscale as f64;
    let (img_w, img_h) = (raw.meta.width as f64, raw.meta.height as f64);
    let mut out_cells = Vec::with_capacity(cells.len());
    let mut scores = Vec::with_capacity(cells.len());
    let mut diagnostics = Vec::with_capacity(cells.len());
    for cell in &cells {
        let (logical, clamped_indices, clamped_spans) =
            assign_logical(cell, &raw.row_map, &raw.col_map);
        let mut clamped_coords = false;
        let corners = cell.corners.map(|p| {
            let x = p.x * d;
            let y = p.y * d;
            let cx = x.clamp(0.0, img_w);
            let cy = y.clamp(0.0, img_h);
            if cx != x || cy != y {
                clamped_coords = true;
            }
            Point2::new(cx, cy)
        });
        out_cells.push(Cell { quad: Quad::new(corners).normalized(), logical });
        scores.push(cell.score);
        diagnostics.push(CellDiagnostics {
            score: cell.score,
            aligned_corners: cell.aligned_corners,
            clamped_indices,
            clamped_spans,
            clamped_coords,
            degenerate_quad: cell.degenerate,
        });
    }

    let annotation = TableAnnotation::new(out_cells, raw.meta.width, raw.meta.height);
    let mut overlap_violations = Vec::new();
    for a in 0..annotation.cells.len() {
        for b in (a + 1)..annotation.cells.len() {
            if annotation.cells[a].logical.intersects(&annotation.cells[b].logical) {
                overlap_violations.push((a, b));
            }
        }
    }
    Ok(DecodedTable { annotation, scores, diagnostics, overlap_violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_raw(h: usize, w: usize) -> RawNetworkOutput {
        RawNetworkOutput {
            heatmap: RasterMap::zeros(h, w, 2),
            offsets: RasterMap::zeros(h, w, 2),
            center2corners: RasterMap::zeros(h, w, 8),
            corners2center: RasterMap::zeros(h, w, 8),
            spans: RasterMap::zeros(h, w, 2),
            row_map: RasterMap::zeros(h, w, 1),
            col_map: RasterMap::zeros(h, w, 1),
            meta: BundleMeta {
                height: (h * 4) as u32,
                width: (w * 4) as u32,
                downscale: 4,
            },
        }
    }

    #[test]
    fn extract_peaks_refines_by_offsets_and_applies_threshold() {
        let mut raw = empty_raw(8, 8);
        raw.heatmap.set(3, 4, 0, 0.9);
        raw.heatmap.set(3, 5, 0, 0.4); // neighbour, not a peak
        raw.heatmap.set(6, 1, 0, 0.2); // below threshold
        raw.offsets.set(3, 4, 0, 0.25);
        raw.offsets.set(3, 4, 1, 0.75);
        let peaks =
            extract_peaks(&raw.heatmap, 0, &raw.offsets, 0.3, 100, KeypointKind::Center);
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].pixel, (3, 4));
        assert_eq!(peaks[0].position, Point2::new(4.25, 3.75));
    }

    #[test]
    fn plateau_keeps_only_the_row_major_first_pixel() {
        let mut raw = empty_raw(8, 8);
        raw.heatmap.set(2, 2, 0, 0.8);
        raw.heatmap.set(2, 3, 0, 0.8);
        let peaks =
            extract_peaks(&raw.heatmap, 0, &raw.offsets, 0.3, 100, KeypointKind::Center);
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].pixel, (2, 2));
    }

    #[test]
    fn max_k_keeps_the_highest_scores() {
        let mut raw = empty_raw(8, 8);
        raw.heatmap.set(1, 1, 0, 0.5);
        raw.heatmap.set(4, 4, 0, 0.9);
        raw.heatmap.set(6, 6, 0, 0.7);
        let peaks = extract_peaks(&raw.heatmap, 0, &raw.offsets, 0.3, 2, KeypointKind::Center);
        assert_eq!(peaks.len(), 2);
        assert_eq!(peaks[0].pixel, (4, 4));
        assert_eq!(peaks[1].pixel, (6, 6));
    }

    #[test]
    fn regress_builds_quads_around_the_refined_center() {
        let mut raw = empty_raw(16, 16);
        raw.heatmap.set(8, 8, 0, 1.0);
        let u = [-3.0, -2.0, 3.0, -2.0, 3.0, 2.0, -3.0, 2.0];
        for (c, v) in u.iter().enumerate() {
            raw.center2corners.set(8, 8, c, *v);
        }
        raw.spans.set(8, 8, 0, 1.0);
        raw.spans.set(8, 8, 1, 2.0);
        let centers =
            extract_peaks(&raw.heatmap, 0, &raw.offsets, 0.3, 10, KeypointKind::Center);
        let cells = regress_cells(&centers, &raw.center2corners, &raw.spans);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].corners[0], Point2::new(5.0, 6.0));
        assert_eq!(cells[0].corners[2], Point2::new(11.0, 10.0));
        assert_eq!(cells[0].span, [1.0, 2.0]);
        assert!(!cells[0].degenerate);
    }

    #[test]
    fn zero_vectors_flag_a_degenerate_quad() {
        let mut raw = empty_raw(8, 8);
        raw.heatmap.set(4, 4, 0, 1.0);
        let centers =
            extract_peaks(&raw.heatmap, 0, &raw.offsets, 0.3, 10, KeypointKind::Center);
        let cells = regress_cells(&centers, &raw.center2corners, &raw.spans);
        assert!(cells[0].degenerate);
    }

    #[test]
    fn align_snaps_only_verified_corners() {
        let mut raw = empty_raw(16, 16);
        // Corner keypoint at (4, 4) whose slot 0 points to (8, 8).
        raw.heatmap.set(4, 4, 1, 0.9);
        raw.corners2center.set(4, 4, 0, 4.0);
        raw.corners2center.set(4, 4, 1, 4.0);
        // Corner keypoint at (12, 12) with no back-pointing slot.
        raw.heatmap.set(12, 12, 1, 0.9);
        let corners =
            extract_peaks(&raw.heatmap, 1, &raw.offsets, 0.3, 10, KeypointKind::Corner);
        let mut cells = vec![ApproxCell {
            center: Point2::new(8.0, 8.0),
            corners: [
                Point2::new(4.6, 4.6),   // near the verified keypoint
                Point2::new(11.5, 11.5), // near the unverified keypoint
                Point2::new(20.0, 20.0), // nothing within reach
                Point2::new(8.0, 12.0),
            ],
            span: [1.0, 1.0],
            score: 0.9,
            degenerate: false,
            aligned_corners: 0,
        }];
        align_corners(&mut cells, &corners, &raw.corners2center, &DecodeConfig::default());
        assert_eq!(cells[0].corners[0], Point2::new(4.0, 4.0));
        assert_eq!(cells[0].corners[1], Point2::new(11.5, 11.5));
        assert_eq!(cells[0].corners[2], Point2::new(20.0, 20.0));
        assert_eq!(cells[0].aligned_corners, 1);
    }

    #[test]
    fn assign_logical_rounds_map_lookups_and_floors_spans() {
        let mut row_map = RasterMap::zeros(8, 8, 1);
        let mut col_map = RasterMap::zeros(8, 8, 1);
        row_map.set(2, 3, 0, 1.98);
        col_map.set(2, 3, 0, 2.3);
        let cell = ApproxCell {
            center: Point2::new(3.4, 2.4),
            corners: [Point2::new(3.1, 2.2); 4],
            span: [1.7, 2.2],
            score: 1.0,
            degenerate: false,
            aligned_corners: 4,
        };
        let (loc, ci, cs) = assign_logical(&cell, &row_map, &col_map);
        assert_eq!(loc, LogicalLoc::new(2, 2, 2, 3));
        assert!(!ci);
        assert!(!cs);
    }

    #[test]
    fn assign_logical_clamps_negative_starts_and_zero_spans() {
        let mut row_map = RasterMap::zeros(8, 8, 1);
        let col_map = RasterMap::zeros(8, 8, 1);
        row_map.set(0, 0, 0, -0.2);
        let cell = ApproxCell {
            center: Point2::new(0.0, 0.0),
            corners: [Point2::new(-0.4, -0.4); 4],
            span: [0.7, 1.0],
            score: 1.0,
            degenerate: false,
            aligned_corners: 0,
        };
        let (loc, _ci, cs) = assign_logical(&cell, &row_map, &col_map);
        assert_eq!(loc, LogicalLoc::new(0, 0, 0, 0));
        assert!(cs);
    }

    #[test]
    fn empty_heatmap_decodes_to_an_empty_table() {
        let raw = empty_raw(8, 8);
        let decoded = decode_table(&raw, &DecodeConfig::default()).unwrap();
        assert!(decoded.annotation.cells.is_empty());
        assert!(decoded.overlap_violations.is_empty());
    }

    #[test]
    fn decode_is_deterministic() {
        let mut raw = empty_raw(16, 16);
        raw.heatmap.set(8, 8, 0, 0.9);
        for (c, v) in [-2.0, -2.0, 2.0, -2.0, 2.0, 2.0, -2.0, 2.0].iter().enumerate() {
            raw.center2corners.set(8, 8, c, *v);
        }
        raw.spans.set(8, 8, 0, 1.0);
        raw.spans.set(8, 8, 1, 1.0);
        let a = decode_table(&raw, &DecodeConfig::default()).unwrap();
        let b = decode_table(&raw, &DecodeConfig::default()).unwrap();
        assert_eq!(a.annotation, b.annotation);
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn raising_the_threshold_never_adds_cells() {
        let mut raw = empty_raw(16, 16);
        for (i, &(y, x, s)) in [(3usize, 3usize, 0.4f64), (8, 8, 0.6), (12, 12, 0.9)]
            .iter()
            .enumerate()
        {
            raw.heatmap.set(y, x, 0, s);
            let size = 1.0 + i as f64;
            for (c, v) in
                [-size, -size, size, -size, size, size, -size, size].iter().enumerate()
            {
                raw.center2corners.set(y, x, c, *v);
            }
            raw.spans.set(y, x, 0, 1.0);
            raw.spans.set(y, x, 1, 1.0);
        }
        let mut last = usize::MAX;
        for tau in [0.3, 0.5, 0.7, 0.95] {
            let cfg = DecodeConfig { tau_center: tau, ..Default::default() };
            let n = decode_table(&raw, &cfg).unwrap().annotation.cells.len();
            assert!(n <= last);
            last = n;
        }
    }
}
