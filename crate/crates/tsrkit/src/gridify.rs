//! Conversion of merged-cell annotations into full unit-cell grids.
//!
//! Every logical boundary index of a table corresponds to one physical
//! divider line (a row divider runs roughly horizontally, a column divider
//! roughly vertically). Cell corners vote for the dividers they sit on;
//! each divider with enough votes is fitted with a total-least-squares
//! line, the rest are interpolated from their fitted neighbours, and the
//! pairwise intersections of row and column dividers form the unit grid.

use crate::annotation::{Cell, LogicalLoc, TableAnnotation};
use crate::geom::{Point2, Quad};
use crate::{Error, Result};

/// Maximum mean perpendicular distance (in pixels) between a divider's
/// support points and its fitted line before the table is rejected as
/// ungriddable.
pub const RESIDUAL_GATE_PX: f64 = 3.0;

/// Determinant threshold below which two divider lines are treated as
/// parallel and their intersection is refused.
pub const INTERSECT_DET_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DividerAxis {
    Row,
    Column,
}

impl DividerAxis {
    fn name(&self) -> &'static str {
        match self {
            DividerAxis::Row => "row",
            DividerAxis::Column => "column",
        }
    }
}

/// One grid divider: the boundary between logical index `index - 1` and
/// `index` along its axis (so index 0 is the outer top/left edge).
///
/// `model` is the implicit line `a*x + b*y + c = 0` with `a^2 + b^2 = 1`;
/// it is `None` until fitted or synthesized by [`fit_and_complete`].
#[derive(Debug, Clone)]
pub struct DividerLine {
    pub axis: DividerAxis,
    pub index: u32,
    pub support: Vec<Point2>,
    pub model: Option<[f64; 3]>,
}

impl DividerLine {
    fn new(axis: DividerAxis, index: u32) -> Self {
        DividerLine { axis, index, support: Vec::new(), model: None }
    }
}

/// Collects divider support points from cell corners.
///
/// A cell spanning logical rows `r0..=r1` contributes its top corners to
/// row divider `r0` and its bottom corners to row divider `r1 + 1`;
/// analogously for columns. Returns `(row_dividers, col_dividers)` with
/// indices `0..=num_rows` and `0..=num_cols`.
pub fn group_dividers(ann: &TableAnnotation) -> (Vec<DividerLine>, Vec<DividerLine>) {
    let num_rows = ann.num_rows();
    let num_cols = ann.num_cols();
    let mut rows: Vec<DividerLine> = (0..=num_rows)
        .map(|i| DividerLine::new(DividerAxis::Row, i))
        .collect();
    let mut cols: Vec<DividerLine> = (0..=num_cols)
        .map(|i| DividerLine::new(DividerAxis::Column, i))
        .collect();

    for cell in &ann.cells {
        let c = &cell.quad.corners;
        let loc = &cell.logical;
        // Corner order is top-left, top-right, bottom-right, bottom-left.
        rows[loc.row_start as usize].support.extend([c[0], c[1]]);
        rows[(loc.row_end + 1) as usize].support.extend([c[3], c[2]]);
        cols[loc.col_start as usize].support.extend([c[0], c[3]]);
        cols[(loc.col_end + 1) as usize].support.extend([c[1], c[2]]);
    }

    (rows, cols)
}

/// Total-least-squares line through `points`, as `a*x + b*y + c = 0` with
/// `a^2 + b^2 = 1`. Returns `None` when the points do not determine a
/// direction (fewer than two distinct points).
fn fit_line_tls(points: &[Point2]) -> Option<[f64; 3]> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mut mx = 0.0;
    let mut my = 0.0;
    for p in points {
        mx += p.x;
        my += p.y;
    }
    mx /= n as f64;
    my /= n as f64;

    let (mut sxx, mut sxy, mut syy) = (0.0f64, 0.0f64, 0.0f64);
    for p in points {
        let dx = p.x - mx;
        let dy = p.y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }

    // Normal direction = eigenvector of the smaller eigenvalue of the
    // scatter matrix [[sxx, sxy], [sxy, syy]].
    let tr = sxx + syy;
    let disc = ((sxx - syy) * (sxx - syy) + 4.0 * sxy * sxy).sqrt();
    let lambda_min = 0.5 * (tr - disc);
    let cand_a = (sxy, lambda_min - sxx);
    let cand_b = (lambda_min - syy, sxy);
    let norm_a = cand_a.0 * cand_a.0 + cand_a.1 * cand_a.1;
    let norm_b = cand_b.0 * cand_b.0 + cand_b.1 * cand_b.1;
    let (nx, ny) = if norm_a >= norm_b { cand_a } else { cand_b };
    let len = (nx * nx + ny * ny).sqrt();
    if len < 1e-12 {
        // Isotropic or empty scatter: all points coincide.
        return None;
    }
    let a = nx / len;
    let b = ny / len;
    let c = -(a * mx + b * my);
    Some([a, b, c])
}

/// Flips a line model so its coefficients have a consistent sign per
/// axis (row dividers point their normal down, columns point right),
/// making coefficient-wise interpolation between neighbours meaningful.
fn orient(model: [f64; 3], axis: DividerAxis) -> [f64; 3] {
    let flip = match axis {
        DividerAxis::Row => model[1] < 0.0,
        DividerAxis::Column => model[0] < 0.0,
    };
    if flip { [-model[0], -model[1], -model[2]] } else { model }
}

fn mean_residual(model: &[f64; 3], points: &[Point2]) -> f64 {
    let total: f64 = points
        .iter()
        .map(|p| (model[0] * p.x + model[1] * p.y + model[2]).abs())
        .sum();
    total / points.len() as f64
}

/// Fits every divider with at least two distinct support points and
/// synthesizes the rest by interpolating the nearest fitted neighbours.
///
/// Fails when a fitted divider's mean perpendicular residual exceeds
/// `residual_gate` pixels, or when an unfitted divider has no fitted
/// neighbour on both sides (nothing to interpolate from).
pub fn fit_and_complete(dividers: &mut [DividerLine], residual_gate: f64) -> Result<()> {
    for d in dividers.iter_mut() {
        let mut distinct = d.support.clone();
        distinct.sort_by(|p, q| p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)));
        distinct.dedup_by(|p, q| p.x == q.x && p.y == q.y);
        if distinct.len() < 2 {
            continue;
        }
        if let Some(model) = fit_line_tls(&distinct) {
            let resid = mean_residual(&model, &d.support);
            if resid > residual_gate {
                return Err(Error::Ungriddable(format!(
                    "{} divider {} deviates from a straight line (mean residual {:.2}px > {:.2}px)",
                    d.axis.name(),
                    d.index,
                    resid,
                    residual_gate
                )));
            }
            d.model = Some(orient(model, d.axis));
        }
    }

    let fitted: Vec<usize> = (0..dividers.len()).filter(|&i| dividers[i].model.is_some()).collect();
    if fitted.is_empty() {
        let axis = dividers.first().map(|d| d.axis.name()).unwrap_or("row");
        return Err(Error::Ungriddable(format!("no {axis} divider has enough support points")));
    }

    for i in 0..dividers.len() {
        if dividers[i].model.is_some() {
            continue;
        }
        let below = fitted.iter().copied().filter(|&j| j < i).max();
        let above = fitted.iter().copied().filter(|&j| j > i).min();
        let (Some(lo), Some(hi)) = (below, above) else {
            return Err(Error::Ungriddable(format!(
                "{} divider {} has too few support points and no fitted neighbour on both sides",
                dividers[i].axis.name(),
                dividers[i].index
            )));
        };
        let t = (i - lo) as f64 / (hi - lo) as f64;
        let ml = dividers[lo].model.unwrap();
        let mh = dividers[hi].model.unwrap();
        let mut m = [
            ml[0] + t * (mh[0] - ml[0]),
            ml[1] + t * (mh[1] - ml[1]),
            ml[2] + t * (mh[2] - ml[2]),
        ];
        let len = (m[0] * m[0] + m[1] * m[1]).sqrt();
        if len < 1e-12 {
            return Err(Error::Ungriddable(format!(
                "{} divider {} interpolates to a degenerate line",
                dividers[i].axis.name(),
                dividers[i].index
            )));
        }
        m = [m[0] / len, m[1] / len, m[2] / len];
        dividers[i].model = Some(m);
    }

    Ok(())
}

/// Intersection of two implicit lines, or `None` when they are parallel
/// within [`INTERSECT_DET_EPS`].
pub fn intersect_lines(l1: &[f64; 3], l2: &[f64; 3]) -> Option<Point2> {
    let det = l1[0] * l2[1] - l2[0] * l1[1];
    if det.abs() < INTERSECT_DET_EPS {
        return None;
    }
    let x = (l1[1] * l2[2] - l2[1] * l1[2]) / det;
    let y = (l2[0] * l1[2] - l1[0] * l2[2]) / det;
    Some(Point2::new(x, y))
}

/// Expands a merged-cell annotation into the equivalent full grid of unit
/// cells by intersecting fitted divider lines.
///
/// The output has `num_rows * num_cols` cells, one per grid slot, each
/// with a 1x1 logical span. Applying it to an already-unit-cell table
/// reproduces the input (up to line-fit rounding).
pub fn cells_to_grids(ann: &TableAnnotation) -> Result<TableAnnotation> {
    ann.ensure_valid()?;

    let (mut rows, mut cols) = group_dividers(ann);
    fit_and_complete(&mut rows, RESIDUAL_GATE_PX)?;
    fit_and_complete(&mut cols, RESIDUAL_GATE_PX)?;

    let nr = ann.num_rows() as usize;
    let nc = ann.num_cols() as usize;
    let w = ann.image_width as f64;
    let h = ann.image_height as f64;

    let mut corners = vec![vec![Point2::new(0.0, 0.0); nc + 1]; nr + 1];
    for (r, row) in rows.iter().enumerate() {
        for (c, col) in cols.iter().enumerate() {
            let rm = row.model.as_ref().expect("all dividers fitted");
            let cm = col.model.as_ref().expect("all dividers fitted");
            let p = intersect_lines(rm, cm).ok_or_else(|| {
                Error::Ungriddable(format!(
                    "row divider {r} and column divider {c} are near-parallel; no grid corner"
                ))
            })?;
            corners[r][c] = Point2::new(p.x.clamp(0.0, w), p.y.clamp(0.0, h));
        }
    }

    let mut cells = Vec::with_capacity(nr * nc);
    for r in 0..nr {
        for c in 0..nc {
            cells.push(Cell {
                quad: Quad::new([
                    corners[r][c],
                    corners[r][c + 1],
                    corners[r + 1][c + 1],
                    corners[r + 1][c],
                ]),
                logical: LogicalLoc::new(r as u32, r as u32, c as u32, c as u32),
            });
        }
    }

    let out = TableAnnotation::new(cells, ann.image_width, ann.image_height);
    out.ensure_valid()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_cell(x0: f64, y0: f64, x1: f64, y1: f64, loc: LogicalLoc) -> Cell {
        Cell {
            quad: Quad::from_flat(&[x0, y0, x1, y0, x1, y1, x0, y1]),
            logical: loc,
        }
    }

    /// Plain 2x2 grid over [10,90]^2 with dividers at 50.
    fn grid_2x2() -> TableAnnotation {
        TableAnnotation::new(
            vec![
                rect_cell(10.0, 10.0, 50.0, 50.0, LogicalLoc::new(0, 0, 0, 0)),
                rect_cell(50.0, 10.0, 90.0, 50.0, LogicalLoc::new(0, 0, 1, 1)),
                rect_cell(10.0, 50.0, 50.0, 90.0, LogicalLoc::new(1, 1, 0, 0)),
                rect_cell(50.0, 50.0, 90.0, 90.0, LogicalLoc::new(1, 1, 1, 1)),
            ],
            100,
            100,
        )
    }

    #[test]
    fn groups_one_divider_per_boundary_index() {
        let (rows, cols) = group_dividers(&grid_2x2());
        assert_eq!(rows.len(), 3);
        assert_eq!(cols.len(), 3);
        // Interior row divider collects bottoms of row 0 and tops of row 1.
        assert_eq!(rows[1].support.len(), 8);
        assert!(rows[1].support.iter().all(|p| p.y == 50.0));
        assert_eq!(cols[0].support.len(), 4);
        assert!(cols[0].support.iter().all(|p| p.x == 10.0));
    }

    #[test]
    fn fits_axis_aligned_lines_exactly() {
        let (mut rows, _) = group_dividers(&grid_2x2());
        fit_and_complete(&mut rows, RESIDUAL_GATE_PX).unwrap();
        let m = rows[1].model.unwrap();
        // Horizontal line y = 50 with b > 0.
        assert!(m[0].abs() < 1e-12);
        assert!((m[1] - 1.0).abs() < 1e-12);
        assert!((m[2] + 50.0).abs() < 1e-9);
    }

    #[test]
    fn identity_on_axis_aligned_unit_grid() {
        let ann = grid_2x2();
        let grid = cells_to_grids(&ann).unwrap();
        assert_eq!(grid.cells.len(), 4);
        for (a, b) in ann.cells.iter().zip(&grid.cells) {
            assert_eq!(a.logical, b.logical);
            for (pa, pb) in a.quad.corners.iter().zip(&b.quad.corners) {
                assert!(pa.distance(pb) <= 1e-9, "{pa:?} vs {pb:?}");
            }
        }
    }

    #[test]
    fn single_cell_table_round_trips() {
        let ann = TableAnnotation::new(
            vec![rect_cell(4.0, 8.0, 60.0, 40.0, LogicalLoc::new(0, 0, 0, 0))],
            64,
            48,
        );
        let grid = cells_to_grids(&ann).unwrap();
        assert_eq!(grid.cells.len(), 1);
        for (pa, pb) in ann.cells[0].quad.corners.iter().zip(&grid.cells[0].quad.corners) {
            assert!(pa.distance(pb) <= 1e-9);
        }
    }

    #[test]
    fn splits_merged_cells_along_fitted_dividers() {
        // 2x2 layout with the top row merged into one 1x2 cell.
        let ann = TableAnnotation::new(
            vec![
                rect_cell(10.0, 10.0, 90.0, 50.0, LogicalLoc::new(0, 0, 0, 1)),
                rect_cell(10.0, 50.0, 50.0, 90.0, LogicalLoc::new(1, 1, 0, 0)),
                rect_cell(50.0, 50.0, 90.0, 90.0, LogicalLoc::new(1, 1, 1, 1)),
            ],
            100,
            100,
        );
        let grid = cells_to_grids(&ann).unwrap();
        assert_eq!(grid.cells.len(), 4);
        // The merged cell is split at the interior column divider x = 50.
        let tl = &grid.cells[0];
        assert_eq!(tl.logical, LogicalLoc::new(0, 0, 0, 0));
        assert!((tl.quad.corners[1].x - 50.0).abs() <= 1e-9);
        assert!((tl.quad.corners[1].y - 10.0).abs() <= 1e-9);
    }

    #[test]
    fn synthesizes_fully_merged_interior_divider_at_index_midpoint() {
        // Both cells span rows 0..=1, so row divider 1 has no support and
        // must be interpolated midway between dividers 0 (y=10) and 2 (y=90).
        let ann = TableAnnotation::new(
            vec![
                rect_cell(10.0, 10.0, 50.0, 90.0, LogicalLoc::new(0, 1, 0, 0)),
                rect_cell(50.0, 10.0, 90.0, 90.0, LogicalLoc::new(0, 1, 1, 1)),
            ],
            100,
            100,
        );
        let (mut rows, _) = group_dividers(&ann);
        assert!(rows[1].support.is_empty());
        fit_and_complete(&mut rows, RESIDUAL_GATE_PX).unwrap();
        let m = rows[1].model.unwrap();
        assert!((m[0]).abs() < 1e-12);
        assert!((m[1] - 1.0).abs() < 1e-12);
        assert!((m[2] + 50.0).abs() < 1e-9);

        let grid = cells_to_grids(&ann).unwrap();
        assert_eq!(grid.cells.len(), 4);
        assert!((grid.cells[0].quad.corners[3].y - 50.0).abs() <= 1e-9);
    }

    #[test]
    fn rejects_wobbly_dividers() {
        let mut d = DividerLine::new(DividerAxis::Row, 0);
        // Zigzag around y = 50 with amplitude 4px: mean residual 4 > 3.
        for i in 0..6 {
            let off = if i % 2 == 0 { 4.0 } else { -4.0 };
            d.support.push(Point2::new(10.0 * i as f64, 50.0 + off));
        }
        let err = fit_and_complete(std::slice::from_mut(&mut d), RESIDUAL_GATE_PX).unwrap_err();
        assert!(matches!(err, Error::Ungriddable(_)), "{err}");
        assert!(err.to_string().contains("row divider 0"));
    }

    #[test]
    fn near_parallel_lines_do_not_intersect() {
        let l1 = [0.0, 1.0, -10.0];
        let l2 = [1e-12, 1.0, -20.0];
        assert!(intersect_lines(&l1, &l2).is_none());
        let l3 = [1.0, 0.0, -30.0];
        let p = intersect_lines(&l1, &l3).unwrap();
        assert!((p.x - 30.0).abs() < 1e-12 && (p.y - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_grid_corners_match_analytic_intersections() {
        // Rotate the 2x2 grid by 10 degrees about the image center; the
        // recovered grid corners must match the rotated lattice points.
        let theta = 10.0f64.to_radians();
        let hom = crate::geom::Homography::rotation_about(Point2::new(50.0, 50.0), theta);
        let base = grid_2x2();
        let rotated = crate::synth::warp_annotation(&base, &hom).unwrap();
        let grid = cells_to_grids(&rotated).unwrap();

        let xs = [10.0, 50.0, 90.0];
        let ys = [10.0, 50.0, 90.0];
        for r in 0..2usize {
            for c in 0..2usize {
                let cell = &grid.cells[r * 2 + c];
                let expected = [
                    (xs[c], ys[r]),
                    (xs[c + 1], ys[r]),
                    (xs[c + 1], ys[r + 1]),
                    (xs[c], ys[r + 1]),
                ];
                for (corner, (ex, ey)) in cell.quad.corners.iter().zip(expected) {
                    let p = hom.apply(Point2::new(ex, ey)).unwrap();
                    assert!(
                        corner.distance(&p) <= 1e-6,
                        "cell ({r},{c}): got {corner:?}, want {p:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn gridify_is_idempotent() {
        let ann = TableAnnotation::new(
            vec![
                rect_cell(10.0, 10.0, 90.0, 50.0, LogicalLoc::new(0, 0, 0, 1)),
                rect_cell(10.0, 50.0, 50.0, 90.0, LogicalLoc::new(1, 1, 0, 0)),
                rect_cell(50.0, 50.0, 90.0, 90.0, LogicalLoc::new(1, 1, 1, 1)),
            ],
            100,
            100,
        );
        let once = cells_to_grids(&ann).unwrap();
        let twice = cells_to_grids(&once).unwrap();
        assert_eq!(once.cells.len(), twice.cells.len());
        for (a, b) in once.cells.iter().zip(&twice.cells) {
            assert_eq!(a.logical, b.logical);
            for (pa, pb) in a.quad.corners.iter().zip(&b.quad.corners) {
                assert!(pa.distance(pb) <= 1e-9);
            }
        }
    }
}
