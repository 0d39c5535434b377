//! Ground-truth training targets on the low-resolution output grid.
//!
//! Given a validated annotation and a [`LossConfig`], the pipeline produces a
//! [`TargetBundle`]:
//! * a 2-channel keypoint heatmap (channel 0 centers, channel 1 corners),
//!   Gaussian splats max-combined, exactly 1.0 at each keypoint pixel;
//! * sparse sub-pixel offsets, one per keypoint;
//! * sparse center-to-corners 8-vectors at cell center pixels;
//! * sparse corner-to-centers slot vectors at (deduplicated) corner pixels,
//!   up to 4 slots per corner ordered by the owning cell's
//!   `(row_start, col_start)`;
//! * sparse `(row_span, col_span)` targets at cell center pixels;
//! * the stride-decimated row/column interpolation maps and coverage mask.
//!
//! All sparse positions and vectors live in low-resolution units (full
//! resolution divided by `downscale`).

use serde::{Deserialize, Serialize};

use crate::annotation::TableAnnotation;
use crate::config::LossConfig;
use crate::geom::Point2;
use crate::interp::{downsample_map, generate_interp_maps};
use crate::raster::RasterMap;

/// Integer pixel on the low-resolution output grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelPos {
    pub y: u32,
    pub x: u32,
}

impl PixelPos {
    pub fn new(y: u32, x: u32) -> Self {
        PixelPos { y, x }
    }
}

/// Sub-pixel offset target at one keypoint pixel, stored as (dx, dy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetTarget {
    pub pos: PixelPos,
    pub offset: [f64; 2],
}

/// Center-to-corners target for one cell: displacements from the exact
/// low-resolution center to the four corners, `(x, y)` pairs in stored
/// corner order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterVectors {
    pub pos: PixelPos,
    /// Index of the owning cell in the annotation.
    pub cell: usize,
    /// Exact low-resolution center position (x, y).
    pub center: [f64; 2],
    pub vectors: [f64; 8],
}

/// One corner-to-center slot: displacement to an adjoining cell's center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerSlot {
    pub vector: [f64; 2],
    pub valid: bool,
    /// Owning cell index (valid slots only).
    pub cell: Option<usize>,
    /// Which corner (0..4) of the owning cell this keypoint is.
    pub corner: Option<u8>,
}

impl CornerSlot {
    /// Slot with no owning cell (vector zero, `valid == false`).
    pub fn empty() -> Self {
        CornerSlot { vector: [0.0, 0.0], valid: false, cell: None, corner: None }
    }
}

/// Corner-to-centers target at one deduplicated corner pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerVectors {
    pub pos: PixelPos,
    /// Representative exact low-resolution corner position (x, y).
    pub corner: [f64; 2],
    pub slots: [CornerSlot; 4],
}

/// Row/column span target at one cell center pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanTarget {
    pub pos: PixelPos,
    pub cell: usize,
    pub span: [f64; 2],
}

/// Shape metadata shared by the bundle and raw output tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub height: u32,
    pub width: u32,
    pub downscale: u32,
}

impl BundleMeta {
    /// Low-resolution grid shape: ceiling of the full resolution over the
    /// downscale factor.
    pub fn lowres_dims(&self) -> (usize, usize) {
        (
            (self.height as usize).div_ceil(self.downscale as usize),
            (self.width as usize).div_ceil(self.downscale as usize),
        )
    }
}

/// Complete set of training targets for one annotated image.
///
/// Each sparse target list holds at most one entry per low-resolution pixel
/// and is sorted by pixel (y, x).
#[derive(Debug, Clone)]
pub struct TargetBundle {
    pub heatmap: RasterMap,
    pub offsets: Vec<OffsetTarget>,
    pub center2corners: Vec<CenterVectors>,
    pub corners2center: Vec<CornerVectors>,
    pub spans: Vec<SpanTarget>,
    pub row_map: RasterMap,
    pub col_map: RasterMap,
    pub mask: RasterMap,
    pub meta: BundleMeta,
    pub warnings: Vec<String>,
}

/// Largest Gaussian radius such that a box whose corner is jittered by it
/// still yields at least `min_overlap` IoU with the true box. Takes the
/// minimum over the three standard quadratic cases.
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    let a1 = 1.0;
    let b1 = height + width;
    let c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
    let sq1 = (b1 * b1 - 4.0 * a1 * c1).max(0.0).sqrt();
    let r1 = (b1 + sq1) / 2.0;

    let a2 = 4.0;
    let b2 = 2.0 * (height + width);
    let c2 = (1.0 - min_overlap) * width * height;
    let sq2 = (b2 * b2 - 4.0 * a2 * c2).max(0.0).sqrt();
    let r2 = (b2 + sq2) / 2.0;

    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (height + width);
    let c3 = (min_overlap - 1.0) * width * height;
    let sq3 = (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt();
    let r3 = (b3 + sq3) / 2.0;

    r1.min(r2).min(r3)
}

/// Minimum IoU used when deriving Gaussian radii from cell sizes.
pub const RADIUS_MIN_OVERLAP: f64 = 0.7;

/// One keypoint on the low-resolution grid before splatting.
#[derive(Debug, Clone)]
struct CornerKeypoint {
    pos: PixelPos,
    /// Representative exact low-resolution position: the first corner mapped
    /// to this pixel (adjacent cells share corners exactly, so the choice
    /// only matters for near-coincident corners).
    lowres: Point2,
    /// (cell index, corner index within the cell, exact lowres position).
    owners: Vec<(usize, u8, Point2)>,
}

struct KeypointLayout {
    /// Per cell: (pixel, exact lowres center).
    centers: Vec<(PixelPos, Point2)>,
    /// Deduplicated corners sorted by pixel (y, x).
    corners: Vec<CornerKeypoint>,
    warnings: Vec<String>,
}

fn floor_clamped(p: Point2, dims: (usize, usize), warnings: &mut Vec<String>, what: &str) -> PixelPos {
    let (h, w) = dims;
    let mut y = p.y.floor() as i64;
    let mut x = p.x.floor() as i64;
    if y < 0 || y >= h as i64 || x < 0 || x >= w as i64 {
        warnings.push(format!("{what} at lowres ({:.3}, {:.3}) clamped to the raster border", p.x, p.y));
        y = y.clamp(0, h as i64 - 1);
        x = x.clamp(0, w as i64 - 1);
    }
    PixelPos::new(y as u32, x as u32)
}

fn collect_keypoints(ann: &TableAnnotation, cfg: &LossConfig) -> KeypointLayout {
    let meta = BundleMeta {
        height: ann.image_height,
        width: ann.image_width,
        downscale: cfg.downscale,
    };
    let dims = meta.lowres_dims();
    let d = cfg.downscale as f64;
    let mut warnings = Vec::new();

    let mut centers = Vec::with_capacity(ann.cells.len());
    for (i, cell) in ann.cells.iter().enumerate() {
        let c = cell.quad.center();
        let lowres = Point2::new(c.x / d, c.y / d);
        let pos = floor_clamped(lowres, dims, &mut warnings, &format!("center of cell {i}"));
        centers.push((pos, lowres));
    }

    let mut corner_map: std::collections::BTreeMap<PixelPos, CornerKeypoint> =
        std::collections::BTreeMap::new();
    for (i, cell) in ann.cells.iter().enumerate() {
        for (k, corner) in cell.quad.corners.iter().enumerate() {
            let lowres = Point2::new(corner.x / d, corner.y / d);
            let pos =
                floor_clamped(lowres, dims, &mut warnings, &format!("corner {k} of cell {i}"));
            corner_map
                .entry(pos)
                .or_insert_with(|| CornerKeypoint { pos, lowres, owners: Vec::new() })
                .owners
                .push((i, k as u8, lowres));
        }
    }

    KeypointLayout {
        centers,
        corners: corner_map.into_values().collect(),
        warnings,
    }
}

/// Low-resolution bounding-box size (height, width) of a cell.
fn lowres_cell_size(ann: &TableAnnotation, cell: usize, d: f64) -> (f64, f64) {
    let (min, max) = ann.cells[cell].quad.bbox();
    ((max.y - min.y) / d, (max.x - min.x) / d)
}

fn draw_gaussian(heat: &mut RasterMap, channel: usize, pos: PixelPos, radius: i64) {
    let sigma = radius as f64 / 3.0;
    let (h, w) = (heat.height() as i64, heat.width() as i64);
    let (cy, cx) = (pos.y as i64, pos.x as i64);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (y, x) = (cy + dy, cx + dx);
            if y < 0 || y >= h || x < 0 || x >= w {
                continue;
            }
            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            let (yu, xu) = (y as usize, x as usize);
            if v > heat.get(yu, xu, channel) {
                heat.set(yu, xu, channel, v);
            }
        }
    }
}

/// Splats center (channel 0) and corner (channel 1) Gaussians, max-combined.
/// Radii come from [`gaussian_radius`] on the low-resolution cell size with a
/// floor of one pixel; a corner's radius is the minimum over its owners.
pub fn splat_keypoints(ann: &TableAnnotation, cfg: &LossConfig) -> (RasterMap, Vec<String>) {
    let layout = collect_keypoints(ann, cfg);
    let meta = BundleMeta {
        height: ann.image_height,
        width: ann.image_width,
        downscale: cfg.downscale,
    };
    let (h, w) = meta.lowres_dims();
    let mut heat = RasterMap::zeros(h, w, 2);
    let d = cfg.downscale as f64;

    let radii: Vec<i64> = (0..ann.cells.len())
        .map(|i| {
            let (ch, cw) = lowres_cell_size(ann, i, d);
            (gaussian_radius(ch, cw, RADIUS_MIN_OVERLAP).floor() as i64).max(1)
        })
        .collect();

    for (i, (pos, _)) in layout.centers.iter().enumerate() {
        draw_gaussian(&mut heat, 0, *pos, radii[i]);
    }
    for corner in &layout.corners {
        let radius = corner.owners.iter().map(|(c, _, _)| radii[*c]).min().unwrap_or(1);
        draw_gaussian(&mut heat, 1, corner.pos, radius);
    }
    (heat, layout.warnings)
}

/// Sub-pixel offsets for every keypoint: `p/downscale - floor(p/downscale)`,
/// one entry per pixel, sorted by pixel (y, x).
pub fn make_offsets(ann: &TableAnnotation, cfg: &LossConfig) -> Vec<OffsetTarget> {
    let layout = collect_keypoints(ann, cfg);
    let mut out = Vec::with_capacity(layout.centers.len() + layout.corners.len());
    // When keypoints collide on a pixel the first of (centers by cell
    // order, then corners) wins, mirroring the vector targets' collision
    // rule.
    let mut seen = std::collections::BTreeSet::new();
    for (pos, lowres) in &layout.centers {
        if seen.insert(*pos) {
            out.push(OffsetTarget {
                pos: *pos,
                offset: [lowres.x - pos.x as f64, lowres.y - pos.y as f64],
            });
        }
    }
    for corner in &layout.corners {
        if seen.insert(corner.pos) {
            out.push(OffsetTarget {
                pos: corner.pos,
                offset: [
                    corner.lowres.x - corner.pos.x as f64,
                    corner.lowres.y - corner.pos.y as f64,
                ],
            });
        }
    }
    out.sort_by_key(|t| t.pos);
    out
}

/// Center-to-corners and corner-to-centers vector targets.
///
/// Corner slots are ordered by the owning cell's `(row_start, col_start)`;
/// when more than four cells share one corner pixel the four largest by quad
/// area are kept (with a warning).
pub fn make_vector_targets(
    ann: &TableAnnotation,
    cfg: &LossConfig,
) -> (Vec<CenterVectors>, Vec<CornerVectors>, Vec<String>) {
    let layout = collect_keypoints(ann, cfg);
    let d = cfg.downscale as f64;
    let mut warnings = Vec::new();

    let mut seen_center_pixels = std::collections::BTreeMap::new();
    let mut centers = Vec::new();
    for (i, cell) in ann.cells.iter().enumerate() {
        let (pos, lowres) = layout.centers[i];
        if let Some(&other) = seen_center_pixels.get(&pos) {
            warnings.push(format!(
                "cells {other} and {i} share center pixel ({}, {}); keeping {other}",
                pos.y, pos.x
            ));
            continue;
        }
        seen_center_pixels.insert(pos, i);
        let mut vectors = [0.0f64; 8];
        for (k, corner) in cell.quad.corners.iter().enumerate() {
            vectors[2 * k] = corner.x / d - lowres.x;
            vectors[2 * k + 1] = corner.y / d - lowres.y;
        }
        centers.push(CenterVectors {
            pos,
            cell: i,
            center: [lowres.x, lowres.y],
            vectors,
        });
    }
    centers.sort_by_key(|cv| cv.pos);

    let mut corners = Vec::new();
    for ck in &layout.corners {
        let mut owners = ck.owners.clone();
        if owners.len() > 4 {
            warnings.push(format!(
                "corner pixel ({}, {}) shared by {} cells; keeping the 4 largest",
                ck.pos.y,
                ck.pos.x,
                owners.len()
            ));
            owners.sort_by(|a, b| {
                let area =
                    |i: usize| crate::geom::shoelace_area(&ann.cells[i].quad.corners);
                area(b.0).partial_cmp(&area(a.0)).unwrap().then(a.0.cmp(&b.0))
            });
            owners.truncate(4);
        }
        owners.sort_by_key(|(i, _, _)| {
            (ann.cells[*i].logical.row_start, ann.cells[*i].logical.col_start)
        });
        let mut slots = [CornerSlot::empty(); 4];
        for (slot, (cell_idx, corner_idx, _)) in owners.iter().enumerate() {
            let center = ann.cells[*cell_idx].quad.center();
            slots[slot] = CornerSlot {
                vector: [center.x / d - ck.lowres.x, center.y / d - ck.lowres.y],
                valid: true,
                cell: Some(*cell_idx),
                corner: Some(*corner_idx),
            };
        }
        corners.push(CornerVectors {
            pos: ck.pos,
            corner: [ck.lowres.x, ck.lowres.y],
            slots,
        });
    }

    (centers, corners, warnings)
}

/// `(row_span, col_span)` targets at cell center pixels. Cells that lost a
/// center-pixel collision (see [`make_vector_targets`]) carry no span target
/// either, so every target pixel has exactly one owner.
pub fn make_span_targets(ann: &TableAnnotation, cfg: &LossConfig) -> Vec<SpanTarget> {
    let layout = collect_keypoints(ann, cfg);
    let mut seen = std::collections::BTreeSet::new();
    let mut out: Vec<SpanTarget> = ann
        .cells
        .iter()
        .enumerate()
        .filter(|(i, _)| seen.insert(layout.centers[*i].0))
        .map(|(i, cell)| SpanTarget {
            pos: layout.centers[i].0,
            cell: i,
            span: [cell.logical.row_span() as f64, cell.logical.col_span() as f64],
        })
        .collect();
    out.sort_by_key(|t| t.pos);
    out
}

/// Builds the complete target bundle for a validated annotation.
pub fn assemble_target_bundle(ann: &TableAnnotation, cfg: &LossConfig) -> TargetBundle {
    let meta = BundleMeta {
        height: ann.image_height,
        width: ann.image_width,
        downscale: cfg.downscale,
    };
    let (heatmap, mut warnings) = splat_keypoints(ann, cfg);
    let offsets = make_offsets(ann, cfg);
    let (center2corners, corners2center, vec_warnings) = make_vector_targets(ann, cfg);
    warnings.extend(vec_warnings);
    let spans = make_span_targets(ann, cfg);
    let (rows, cols) = generate_interp_maps(ann);
    warnings.extend(rows.warnings.iter().cloned());
    warnings.extend(cols.warnings.iter().cloned());
    TargetBundle {
        heatmap,
        offsets,
        center2corners,
        corners2center,
        spans,
        row_map: downsample_map(&rows.interp, cfg.downscale),
        col_map: downsample_map(&cols.interp, cfg.downscale),
        mask: downsample_map(&rows.mask, cfg.downscale),
        meta,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{Cell, LogicalLoc};
    use crate::geom::Quad;

    fn rect_cell(x0: f64, y0: f64, x1: f64, y1: f64, l: LogicalLoc) -> Cell {
        Cell {
            quad: Quad::from_flat(&[x0, y0, x1, y0, x1, y1, x0, y1]),
            logical: l,
        }
    }

    fn grid_2x2(cell: f64) -> TableAnnotation {
        let mut cells = Vec::new();
        for r in 0..2u32 {
            for c in 0..2u32 {
                cells.push(rect_cell(
                    8.0 + c as f64 * cell,
                    8.0 + r as f64 * cell,
                    8.0 + (c + 1) as f64 * cell,
                    8.0 + (r + 1) as f64 * cell,
                    LogicalLoc::new(r, r, c, c),
                ));
            }
        }
        TableAnnotation::new(cells, (16.0 + 2.0 * cell) as u32, (16.0 + 2.0 * cell) as u32)
    }

    #[test]
    fn heatmap_has_exactly_one_unit_peak_per_keypoint() {
        let ann = grid_2x2(64.0);
        let cfg = LossConfig::default();
        let (heat, warnings) = splat_keypoints(&ann, &cfg);
        assert!(warnings.is_empty());
        let centers = heat.data().iter().skip(0).step_by(2).filter(|&&v| v == 1.0).count();
        let corners = heat.data().iter().skip(1).step_by(2).filter(|&&v| v == 1.0).count();
        assert_eq!(centers, 4);
        // 3x3 corner lattice of a 2x2 grid.
        assert_eq!(corners, 9);
        assert!(heat.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn empty_annotation_yields_zero_heatmap() {
        let ann = TableAnnotation::new(vec![], 64, 64);
        let (heat, _) = splat_keypoints(&ann, &LossConfig::default());
        assert!(heat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offsets_are_fractional_parts_of_lowres_positions() {
        // Center at full-resolution (42, 42): lowres 10.5 -> pixel 10,
        // offset 0.5 on both axes.
        let ann = TableAnnotation::new(
            vec![rect_cell(10.0, 10.0, 74.0, 74.0, LogicalLoc::new(0, 0, 0, 0))],
            96,
            96,
        );
        let offsets = make_offsets(&ann, &LossConfig::default());
        let center = offsets.iter().find(|t| t.pos == PixelPos::new(10, 10)).unwrap();
        assert_eq!(center.offset, [0.5, 0.5]);
        assert!(offsets.windows(2).all(|w| w[0].pos < w[1].pos));
        for t in &offsets {
            assert!(t.offset.iter().all(|&o| (0.0..1.0).contains(&o)), "{t:?}");
        }
    }

    #[test]
    fn center_vectors_reconstruct_corners_exactly() {
        let ann = grid_2x2(60.0);
        let cfg = LossConfig::default();
        let (centers, _, warnings) = make_vector_targets(&ann, &cfg);
        assert!(warnings.is_empty());
        let d = cfg.downscale as f64;
        for cv in &centers {
            let cell = &ann.cells[cv.cell];
            for k in 0..4 {
                let rx = cv.center[0] + cv.vectors[2 * k];
                let ry = cv.center[1] + cv.vectors[2 * k + 1];
                assert!((rx - cell.quad.corners[k].x / d).abs() < 1e-12);
                assert!((ry - cell.quad.corners[k].y / d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interior_corner_has_four_ordered_slots_and_border_corner_one() {
        let ann = grid_2x2(60.0);
        let (_, corners, _) = make_vector_targets(&ann, &LossConfig::default());
        let total_valid: usize =
            corners.iter().map(|c| c.slots.iter().filter(|s| s.valid).count()).sum();
        assert_eq!(total_valid, 4 * ann.cells.len());

        // The interior corner at (68, 68) -> lowres pixel (17, 17).
        let interior = corners.iter().find(|c| c.pos == PixelPos::new(17, 17)).unwrap();
        let owners: Vec<usize> = interior.slots.iter().filter_map(|s| s.cell).collect();
        assert_eq!(owners, vec![0, 1, 2, 3]);

        // The table's upper-left corner belongs to cell 0 only.
        let border = corners.iter().find(|c| c.pos == PixelPos::new(2, 2)).unwrap();
        assert_eq!(border.slots.iter().filter(|s| s.valid).count(), 1);
        assert_eq!(border.slots[0].cell, Some(0));
    }

    #[test]
    fn span_targets_follow_logical_spans() {
        let ann = TableAnnotation::new(
            vec![
                rect_cell(0.0, 0.0, 128.0, 32.0, LogicalLoc::new(0, 0, 0, 1)),
                rect_cell(0.0, 32.0, 64.0, 96.0, LogicalLoc::new(1, 2, 0, 0)),
                rect_cell(64.0, 32.0, 128.0, 96.0, LogicalLoc::new(1, 2, 1, 1)),
            ],
            128,
            96,
        );
        let spans = make_span_targets(&ann, &LossConfig::default());
        assert_eq!(spans[0].span, [1.0, 2.0]);
        assert_eq!(spans[1].span, [2.0, 1.0]);
    }

    #[test]
    fn bundle_shapes_follow_ceil_division_and_masks_match() {
        let ann = grid_2x2(61.0); // image 138 -> lowres 35 (ceil)
        let bundle = assemble_target_bundle(&ann, &LossConfig::default());
        let (h, w) = bundle.meta.lowres_dims();
        assert_eq!((h, w), (35, 35));
        assert_eq!((bundle.heatmap.height(), bundle.heatmap.width()), (h, w));
        assert_eq!((bundle.row_map.height(), bundle.row_map.width()), (h, w));
        assert_eq!((bundle.mask.height(), bundle.mask.width()), (h, w));
    }

    #[test]
    fn bundle_is_deterministic() {
        let ann = grid_2x2(60.0);
        let a = assemble_target_bundle(&ann, &LossConfig::default());
        let b = assemble_target_bundle(&ann, &LossConfig::default());
        assert_eq!(a.heatmap.data(), b.heatmap.data());
        assert_eq!(a.offsets, b.offsets);
        assert_eq!(a.center2corners, b.center2corners);
        assert_eq!(a.corners2center, b.corners2center);
        assert_eq!(a.spans, b.spans);
        assert_eq!(a.row_map.data(), b.row_map.data());
    }

    #[test]
    fn gaussian_radius_grows_with_cell_size() {
        let small = gaussian_radius(4.0, 4.0, RADIUS_MIN_OVERLAP);
        let large = gaussian_radius(32.0, 32.0, RADIUS_MIN_OVERLAP);
        assert!(small > 0.0);
        assert!(large > small);
    }
}
