//! Dense row/column index interpolation maps.
//!
//! Every cell contributes one polygon per axis whose corner payloads are the
//! logical boundary indices the corner sits on: for the row map the two top
//! corners carry `row_start` and the two bottom corners `row_end + 1`; for
//! the column map the two left corners carry `col_start` and the two right
//! corners `col_end + 1`. Rasterizing all polygons with linear interpolation
//! yields a map whose value at any in-table pixel is the (fractional) grid
//! index at that pixel, together with a coverage mask.
//!
//! Rasterization order matters where polygons overlap: polygons are processed
//! in ascending area order and the first write to a pixel wins, so small
//! cells are never buried under large neighbours.
//!
//! Per polygon the steps are:
//! 1. integer bounding box: `floor(min)` to `ceil(max)` per axis;
//! 2. shift vertices to bounding-box-local coordinates;
//! 3. split the quad into two triangles along a Delaunay-chosen diagonal
//!    (in-circle test; co-circular corners, e.g. any rectangle, fall back to
//!    the diagonal from vertex 1 to vertex 3);
//! 4. evaluate barycentric linear interpolation on every integer grid point,
//!    with a boundary tolerance of -1e-9 on each coordinate (weights within
//!    the tolerance are clamped to zero before blending, so boundary pixels
//!    cannot interpolate to spurious negative values);
//! 5. write the value to the global raster wherever it is >= 0 and the mask
//!    is still unset.

use crate::annotation::TableAnnotation;
use crate::geom::Point2;
use crate::raster::RasterMap;

/// Tolerance on barycentric coordinates when deciding whether a grid point
/// belongs to a triangle. Slightly negative weights keep edge pixels covered.
pub const INSIDE_TOLERANCE: f64 = -1e-9;

/// A quad carrying one scalar payload per corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpPolygon {
    pub corners: [Point2; 4],
    pub values: [f64; 4],
}

/// Output of [`interpolate_polygons`]: the value raster, the coverage mask
/// (both single-channel, same shape) and any per-polygon warnings.
#[derive(Debug, Clone)]
pub struct InterpResult {
    pub interp: RasterMap,
    pub mask: RasterMap,
    pub warnings: Vec<String>,
}

/// Which diagonal splits a quad into two triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonal {
    /// Triangles (0,1,2) and (0,2,3) — the vertex-1-to-vertex-3 diagonal.
    Split02,
    /// Triangles (0,1,3) and (1,2,3).
    Split13,
}

impl Diagonal {
    pub fn triangles(self) -> [[usize; 3]; 2] {
        match self {
            Diagonal::Split02 => [[0, 1, 2], [0, 2, 3]],
            Diagonal::Split13 => [[0, 1, 3], [1, 2, 3]],
        }
    }
}

/// Row-axis polygons: top corners carry `row_start`, bottom corners carry
/// `row_end + 1`.
pub fn build_row_polygons(ann: &TableAnnotation) -> Vec<InterpPolygon> {
    ann.cells
        .iter()
        .map(|cell| {
            let top = cell.logical.row_start as f64;
            let bottom = (cell.logical.row_end + 1) as f64;
            InterpPolygon {
                corners: cell.quad.corners,
                values: [top, top, bottom, bottom],
            }
        })
        .collect()
}

/// Column-axis polygons: left corners carry `col_start`, right corners carry
/// `col_end + 1`.
pub fn build_col_polygons(ann: &TableAnnotation) -> Vec<InterpPolygon> {
    ann.cells
        .iter()
        .map(|cell| {
            let left = cell.logical.col_start as f64;
            let right = (cell.logical.col_end + 1) as f64;
            InterpPolygon {
                corners: cell.quad.corners,
                values: [left, right, right, left],
            }
        })
        .collect()
}

/// Picks the Delaunay diagonal for a convex quad via the in-circle test:
/// if vertex 3 lies strictly inside the circumcircle of (0, 1, 2) the 0-2
/// diagonal violates the Delaunay criterion and 1-3 is used instead.
/// Co-circular corners (the determinant within tolerance) tie-break to 0-2.
pub fn delaunay_split(corners: &[Point2; 4]) -> Diagonal {
    // Normalize the coordinate scale so a fixed epsilon classifies ties
    // (e.g. rectangles) identically at any raster size.
    let mut scale = 0.0f64;
    for p in corners {
        scale = scale.max(p.x.abs()).max(p.y.abs());
    }
    if scale == 0.0 {
        return Diagonal::Split02;
    }
    let n: Vec<Point2> = corners.iter().map(|p| Point2::new(p.x / scale, p.y / scale)).collect();
    if incircle(n[0], n[1], n[2], n[3]) > 1e-9 {
        Diagonal::Split13
    } else {
        Diagonal::Split02
    }
}

/// Orientation-corrected in-circle determinant: positive iff `d` is strictly
/// inside the circumcircle of triangle (a, b, c).
fn incircle(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    let (ax, ay) = (a.x - d.x, a.y - d.y);
    let (bx, by) = (b.x - d.x, b.y - d.y);
    let (cx, cy) = (c.x - d.x, c.y - d.y);
    let det = (ax * ax + ay * ay) * (bx * cy - cx * by)
        - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay);
    let orient = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if orient == 0.0 {
        return 0.0;
    }
    det * orient.signum()
}

/// Precomputed barycentric evaluator for one triangle with payloads.
struct TriInterp {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    x3: f64,
    y3: f64,
    o1: f64,
    o2: f64,
    o3: f64,
    denom: f64,
}

impl TriInterp {
    fn new(p: [Point2; 3], o: [f64; 3]) -> Self {
        let denom = (p[1].y - p[2].y) * (p[0].x - p[2].x) + (p[2].x - p[1].x) * (p[0].y - p[2].y);
        TriInterp {
            x1: p[0].x,
            y1: p[0].y,
            x2: p[1].x,
            y2: p[1].y,
            x3: p[2].x,
            y3: p[2].y,
            o1: o[0],
            o2: o[1],
            o3: o[2],
            denom,
        }
    }

    /// Returns the interpolated value when (px, py) lies inside the triangle
    /// (with the boundary tolerance), clamping tolerated negative weights to
    /// zero before blending.
    #[inline]
    fn eval(&self, px: f64, py: f64) -> Option<f64> {
        if self.denom == 0.0 {
            return None;
        }
        let w1 = ((self.y2 - self.y3) * (px - self.x3) + (self.x3 - self.x2) * (py - self.y3))
            / self.denom;
        let w2 = ((self.y3 - self.y1) * (px - self.x3) + (self.x1 - self.x3) * (py - self.y3))
            / self.denom;
        let w3 = 1.0 - w1 - w2;
        if w1 >= INSIDE_TOLERANCE && w2 >= INSIDE_TOLERANCE && w3 >= INSIDE_TOLERANCE {
            Some(w1.max(0.0) * self.o1 + w2.max(0.0) * self.o2 + w3.max(0.0) * self.o3)
        } else {
            None
        }
    }
}

/// True when no three of the four corners span a nonzero area.
fn all_collinear(corners: &[Point2; 4]) -> bool {
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let (a, b, c) = (corners[i], corners[j], corners[k]);
                let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                if cross != 0.0 {
                    return false;
                }
            }
        }
    }
    true
}

/// Rasterizes polygons onto a `height x width` grid with first-write-wins
/// semantics in ascending area order (stable for ties).
pub fn interpolate_polygons(polys: &[InterpPolygon], height: usize, width: usize) -> InterpResult {
    let mut interp = RasterMap::zeros(height, width, 1);
    let mut mask = RasterMap::zeros(height, width, 1);
    let mut warnings = Vec::new();

    let areas: Vec<f64> =
        polys.iter().map(|p| crate::geom::shoelace_area(&p.corners)).collect();
    let mut order: Vec<usize> = (0..polys.len()).collect();
    order.sort_by(|&a, &b| areas[a].partial_cmp(&areas[b]).expect("finite areas"));

    for &pi in &order {
        let poly = &polys[pi];
        if all_collinear(&poly.corners) {
            warnings.push(format!("polygon {pi}: fewer than 3 non-collinear vertices, skipped"));
            continue;
        }
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for p in &poly.corners {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        let x_min = min_x.floor() as i64;
        let y_min = min_y.floor() as i64;
        let x_max = max_x.ceil() as i64;
        let y_max = max_y.ceil() as i64;

        // Bounding-box-local vertices; interpolation runs in local
        // coordinates and results are written back at the global position.
        let local: [Point2; 4] = [
            Point2::new(poly.corners[0].x - x_min as f64, poly.corners[0].y - y_min as f64),
            Point2::new(poly.corners[1].x - x_min as f64, poly.corners[1].y - y_min as f64),
            Point2::new(poly.corners[2].x - x_min as f64, poly.corners[2].y - y_min as f64),
            Point2::new(poly.corners[3].x - x_min as f64, poly.corners[3].y - y_min as f64),
        ];
        let split = delaunay_split(&local);
        let tris: Vec<TriInterp> = split
            .triangles()
            .iter()
            .map(|t| {
                TriInterp::new(
                    [local[t[0]], local[t[1]], local[t[2]]],
                    [poly.values[t[0]], poly.values[t[1]], poly.values[t[2]]],
                )
            })
            .collect();

        let gy0 = y_min.max(0);
        let gy1 = y_max.min(height as i64 - 1);
        let gx0 = x_min.max(0);
        let gx1 = x_max.min(width as i64 - 1);
        for gy in gy0..=gy1 {
            for gx in gx0..=gx1 {
                let (yu, xu) = (gy as usize, gx as usize);
                if mask.get(yu, xu, 0) != 0.0 {
                    continue;
                }
                let px = (gx - x_min) as f64;
                let py = (gy - y_min) as f64;
                // Triangle order is fixed so points on the shared diagonal
                // deterministically take the first triangle's value.
                let q = tris[0].eval(px, py).or_else(|| tris[1].eval(px, py));
                if let Some(q) = q {
                    if q >= 0.0 {
                        interp.set(yu, xu, 0, q);
                        mask.set(yu, xu, 0, 1.0);
                    }
                }
            }
        }
    }

    InterpResult { interp, mask, warnings }
}

/// Full-resolution row and column interpolation maps for an annotation.
///
/// Both maps are rasterized from the same geometry in the same order, so
/// their masks are identical by construction (asserted in debug builds).
pub fn generate_interp_maps(ann: &TableAnnotation) -> (InterpResult, InterpResult) {
    let h = ann.image_height as usize;
    let w = ann.image_width as usize;
    let rows = interpolate_polygons(&build_row_polygons(ann), h, w);
    let cols = interpolate_polygons(&build_col_polygons(ann), h, w);
    debug_assert_eq!(rows.mask.data(), cols.mask.data(), "row/col masks must agree");
    (rows, cols)
}

/// Stride-decimation of an interpolation map (see [`RasterMap::downsample`]).
pub fn downsample_map(map: &RasterMap, factor: u32) -> RasterMap {
    map.downsample(factor as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{Cell, LogicalLoc, TableAnnotation};
    use crate::geom::Quad;

    fn rect_poly(x0: f64, y0: f64, x1: f64, y1: f64, values: [f64; 4]) -> InterpPolygon {
        InterpPolygon {
            corners: [
                Point2::new(x0, y0),
                Point2::new(x1, y0),
                Point2::new(x1, y1),
                Point2::new(x0, y1),
            ],
            values,
        }
    }

    #[test]
    fn row_and_col_polygons_carry_boundary_indices() {
        let ann = TableAnnotation::new(
            vec![Cell {
                quad: Quad::from_flat(&[0.0, 0.0, 10.0, 0.0, 10.0, 8.0, 0.0, 8.0]),
                logical: LogicalLoc::new(1, 2, 3, 4),
            }],
            20,
            20,
        );
        assert_eq!(build_row_polygons(&ann)[0].values, [1.0, 1.0, 3.0, 3.0]);
        assert_eq!(build_col_polygons(&ann)[0].values, [3.0, 5.0, 5.0, 3.0]);
    }

    #[test]
    fn rectangles_are_cocircular_and_split_on_the_0_2_diagonal() {
        let rect = [
            Point2::new(0.0, 0.0),
            Point2::new(8.0, 0.0),
            Point2::new(8.0, 4.0),
            Point2::new(0.0, 4.0),
        ];
        assert_eq!(delaunay_split(&rect), Diagonal::Split02);
    }

    #[test]
    fn skewed_quad_picks_the_delaunay_diagonal() {
        // Vertex 3 pulled close to the 0-2 diagonal: its circumcircle test
        // forces the 1-3 split.
        let q = [
            Point2::new(0.0, 0.0),
            Point2::new(10.0, 0.0),
            Point2::new(10.0, 10.0),
            Point2::new(1.0, 2.0),
        ];
        let split = delaunay_split(&q);
        // Verify against the criterion directly: neither triangle of the
        // chosen split may contain the opposite vertex in its circumcircle.
        let check = |t: [usize; 3], other: usize| incircle(q[t[0]], q[t[1]], q[t[2]], q[other]);
        match split {
            Diagonal::Split02 => {
                assert!(check([0, 1, 2], 3) <= 0.0 && check([0, 2, 3], 1) <= 0.0)
            }
            Diagonal::Split13 => {
                assert!(check([0, 1, 3], 2) <= 0.0 && check([1, 2, 3], 0) <= 0.0)
            }
        }
    }

    #[test]
    fn empty_polygon_list_yields_zero_rasters() {
        let r = interpolate_polygons(&[], 4, 6);
        assert!(r.interp.data().iter().all(|&v| v == 0.0));
        assert!(r.mask.data().iter().all(|&v| v == 0.0));
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn single_polygon_produces_vertical_ramp() {
        let poly = rect_poly(0.0, 0.0, 9.0, 9.0, [0.0, 0.0, 1.0, 1.0]);
        let r = interpolate_polygons(&[poly], 10, 10);
        for j in 0..10 {
            for i in 0..10 {
                assert_eq!(r.mask.get(j, i, 0), 1.0, "pixel ({j},{i}) covered");
                assert!(
                    (r.interp.get(j, i, 0) - j as f64 / 9.0).abs() < 1e-12,
                    "pixel ({j},{i})"
                );
            }
        }
    }

    #[test]
    fn overlap_resolves_to_the_smaller_polygon() {
        let big = rect_poly(0.0, 0.0, 19.0, 19.0, [5.0, 5.0, 5.0, 5.0]);
        let small = rect_poly(4.0, 4.0, 8.0, 8.0, [2.0, 2.0, 2.0, 2.0]);
        // Input order puts the big polygon first; area sorting must still
        // give the small one priority.
        let r = interpolate_polygons(&[big, small], 20, 20);
        assert_eq!(r.interp.get(6, 6, 0), 2.0);
        assert_eq!(r.interp.get(1, 1, 0), 5.0);
        assert_eq!(r.mask.get(6, 6, 0), 1.0);
    }

    #[test]
    fn collinear_polygon_is_skipped_with_warning() {
        let degenerate = InterpPolygon {
            corners: [
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(2.0, 2.0),
                Point2::new(3.0, 3.0),
            ],
            values: [1.0; 4],
        };
        let r = interpolate_polygons(&[degenerate], 5, 5);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_raster_parts_are_clipped_silently() {
        let poly = rect_poly(-3.0, -3.0, 6.0, 6.0, [1.0; 4]);
        let r = interpolate_polygons(&[poly], 5, 5);
        assert_eq!(r.mask.get(0, 0, 0), 1.0);
        assert_eq!(r.interp.get(4, 4, 0), 1.0);
    }

    #[test]
    fn shared_boundary_row_is_exactly_the_boundary_index() {
        // 2x2 grid, 200x200 raster, boundary at y = 100: the row map on that
        // row must be exactly 1.0 no matter which cell owns each pixel.
        let mut cells = Vec::new();
        for r in 0..2u32 {
            for c in 0..2u32 {
                let (x0, x1) = (c as f64 * 100.0, (c + 1) as f64 * 100.0);
                let (y0, y1) = (r as f64 * 100.0, (r + 1) as f64 * 100.0);
                cells.push(Cell {
                    quad: Quad::from_flat(&[x0, y0, x1, y0, x1, y1, x0, y1]),
                    logical: LogicalLoc::new(r, r, c, c),
                });
            }
        }
        let ann = TableAnnotation::new(cells, 200, 200);
        let (rows, cols) = generate_interp_maps(&ann);
        assert_eq!(rows.mask.data(), cols.mask.data());
        for i in 0..200 {
            assert_eq!(rows.mask.get(100, i, 0), 1.0);
            assert_eq!(rows.interp.get(100, i, 0), 1.0, "pixel (100,{i})");
        }
    }

    #[test]
    fn in_cell_row_values_round_to_the_cell_row_range() {
        let mut cells = Vec::new();
        let bounds = [0.0, 60.0, 100.0, 180.0];
        for r in 0..3u32 {
            cells.push(Cell {
                quad: Quad::from_flat(&[
                    0.0,
                    bounds[r as usize],
                    120.0,
                    bounds[r as usize],
                    120.0,
                    bounds[r as usize + 1],
                    0.0,
                    bounds[r as usize + 1],
                ]),
                logical: LogicalLoc::new(r, r, 0, 0),
            });
        }
        let ann = TableAnnotation::new(cells, 120, 180);
        let (rows, _) = generate_interp_maps(&ann);
        for (r, win) in bounds.windows(2).enumerate() {
            let (y0, y1) = (win[0] as usize, win[1] as usize);
            for y in (y0 + 1)..y1 {
                for x in 1..119 {
                    let v = rows.interp.get(y, x, 0).round() as u32;
                    assert!(
                        v == r as u32 || v == r as u32 + 1,
                        "pixel ({y},{x}) rounds to {v}, cell row {r}"
                    );
                }
            }
        }
    }
}
