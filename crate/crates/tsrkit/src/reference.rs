//! Slow reference implementations used to cross-check the optimized paths.
//!
//! Everything here trades speed for obviousness: per-pixel scans instead of
//! rasterization, exponential recursion instead of dynamic programming, full
//! pair enumeration instead of index buckets. The test suites compare the
//! production implementations against these on randomized inputs; they are
//! also handy when porting a piece of the pipeline elsewhere.

use std::collections::{BTreeMap, BTreeSet};

use crate::annotation::TableAnnotation;
use crate::bundle::densify;
use crate::config::LossConfig;
use crate::decoder::RawNetworkOutput;
use crate::geom::Point2;
use crate::interp::{InterpPolygon, INSIDE_TOLERANCE};
use crate::losses::{
    boundary_loss, keypoint_loss, span_from_maps, span_loss_with_weights, span_weights,
    spatial_loss_with_omegas, spatial_omegas,
};
use crate::metrics::teds::{NodeLabel, StructureTree};
use crate::metrics::{Relation, RelationKind};
use crate::raster::RasterMap;
use crate::synth::Rng64;
use crate::targets::TargetBundle;

/// Per-pixel interpolation-map rasterizer.
///
/// Scans every raster pixel and every polygon (ascending area, stable) until
/// one claims the pixel, instead of rasterizing polygon bounding boxes. The
/// barycentric weight formula matches the optimized path symbol for symbol —
/// that arithmetic is part of the map contract — so agreement is exact, not
/// approximate. Returns `(interp, mask)`.
pub fn interp_maps_bruteforce(
    polys: &[InterpPolygon],
    height: usize,
    width: usize,
) -> (RasterMap, RasterMap) {
    let mut interp = RasterMap::zeros(height, width, 1);
    let mut mask = RasterMap::zeros(height, width, 1);

    struct Prepared {
        x_min: i64,
        y_min: i64,
        x_max: i64,
        y_max: i64,
        // Two triangles as (local corners, payloads).
        tris: [([Point2; 3], [f64; 3]); 2],
    }

    let mut order: Vec<usize> = (0..polys.len()).collect();
    let areas: Vec<f64> = polys.iter().map(|p| polygon_area(&p.corners)).collect();
    order.sort_by(|&a, &b| areas[a].partial_cmp(&areas[b]).expect("finite area"));

    let prepared: Vec<Option<Prepared>> = polys
        .iter()
        .map(|poly| {
            if !has_noncollinear_triple(&poly.corners) {
                return None;
            }
            let xs = poly.corners.map(|p| p.x);
            let ys = poly.corners.map(|p| p.y);
            let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min).floor() as i64;
            let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min).floor() as i64;
            let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as i64;
            let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as i64;
            let local =
                poly.corners.map(|p| Point2::new(p.x - x_min as f64, p.y - y_min as f64));
            let idx = choose_diagonal(&local);
            let tris = idx.map(|t| {
                (
                    [local[t[0]], local[t[1]], local[t[2]]],
                    [poly.values[t[0]], poly.values[t[1]], poly.values[t[2]]],
                )
            });
            Some(Prepared { x_min, y_min, x_max, y_max, tris })
        })
        .collect();

    for gy in 0..height as i64 {
        'pixel: for gx in 0..width as i64 {
            for &pi in &order {
                let Some(p) = &prepared[pi] else { continue };
                if gx < p.x_min || gx > p.x_max || gy < p.y_min || gy > p.y_max {
                    continue;
                }
                let px = (gx - p.x_min) as f64;
                let py = (gy - p.y_min) as f64;
                for (corners, values) in &p.tris {
                    match barycentric_value(corners, values, px, py) {
                        // The first triangle that contains the point decides
                        // for the whole polygon, even when its value is
                        // rejected as negative.
                        Some(v) => {
                            if v >= 0.0 {
                                interp.set(gy as usize, gx as usize, 0, v);
                                mask.set(gy as usize, gx as usize, 0, 1.0);
                                continue 'pixel;
                            }
                            break;
                        }
                        None => continue,
                    }
                }
            }
        }
    }

    (interp, mask)
}

/// Shoelace area; arranged so integer (and quarter-integer) inputs stay
/// exact, matching the optimized path's sort keys bit for bit.
fn polygon_area(corners: &[Point2; 4]) -> f64 {
    let mut twice = 0.0;
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        twice += a.x * b.y - b.x * a.y;
    }
    twice.abs() / 2.0
}

fn has_noncollinear_triple(corners: &[Point2; 4]) -> bool {
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let (a, b, c) = (corners[i], corners[j], corners[k]);
                if (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x) != 0.0 {
                    return true;
                }
            }
        }
    }
    false
}

/// Delaunay diagonal choice on the four local corners: split along 1-3 only
/// when corner 3 falls strictly inside the circumcircle of (0, 1, 2), with
/// coordinates pre-scaled to unit size and ties (within 1e-9) going to 0-2.
/// Same decision rule as the optimized path, different determinant
/// arithmetic.
fn choose_diagonal(corners: &[Point2; 4]) -> [[usize; 3]; 2] {
    let scale = corners.iter().fold(0.0f64, |s, p| s.max(p.x.abs()).max(p.y.abs()));
    let split13 = if scale == 0.0 {
        false
    } else {
        let n = corners.map(|p| Point2::new(p.x / scale, p.y / scale));
        incircle_laplace(n[0], n[1], n[2], n[3]) > 1e-9
    };
    if split13 { [[0, 1, 3], [1, 2, 3]] } else { [[0, 1, 2], [0, 2, 3]] }
}

/// In-circle predicate via Laplace expansion of the raw 4x4 lifted-point
/// determinant along its last column, sign-corrected by triangle
/// orientation.
fn incircle_laplace(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    let row = |p: Point2| [p.x, p.y, p.x * p.x + p.y * p.y];
    let rows = [row(a), row(b), row(c), row(d)];
    let minor = |skip: usize| {
        let m: Vec<[f64; 3]> =
            (0..4).filter(|&i| i != skip).map(|i| rows[i]).collect();
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    // det of [[x, y, x^2+y^2, 1]; ...] expanded along the ones column.
    let det = -minor(0) + minor(1) - minor(2) + minor(3);
    let orient = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if orient == 0.0 { 0.0 } else { det * orient.signum() }
}

/// Barycentric interpolation at `(px, py)`: `Some(value)` when the point is
/// inside the triangle within [`INSIDE_TOLERANCE`]. The weight expressions
/// mirror the optimized path exactly (they are the contract).
fn barycentric_value(p: &[Point2; 3], o: &[f64; 3], px: f64, py: f64) -> Option<f64> {
    let denom = (p[1].y - p[2].y) * (p[0].x - p[2].x) + (p[2].x - p[1].x) * (p[0].y - p[2].y);
    if denom == 0.0 {
        return None;
    }
    let w1 = ((p[1].y - p[2].y) * (px - p[2].x) + (p[2].x - p[1].x) * (py - p[2].y)) / denom;
    let w2 = ((p[2].y - p[0].y) * (px - p[2].x) + (p[0].x - p[2].x) * (py - p[2].y)) / denom;
    let w3 = 1.0 - w1 - w2;
    if w1 >= INSIDE_TOLERANCE && w2 >= INSIDE_TOLERANCE && w3 >= INSIDE_TOLERANCE {
        Some(w1.max(0.0) * o[0] + w2.max(0.0) * o[1] + w3.max(0.0) * o[2])
    } else {
        None
    }
}

/// Ordered-tree edit distance by exhaustive recursion over forest edits.
///
/// Exponential; intended for trees of at most a dozen nodes. Unit
/// insert/delete cost, 0/1 substitution on (label, rowspan, colspan).
pub fn tree_edit_distance_exhaustive(t1: &StructureTree, t2: &StructureTree) -> u32 {
    fn forest_size(t: &StructureTree, forest: &[usize]) -> u32 {
        forest
            .iter()
            .map(|&n| 1 + forest_size(t, &t.nodes[n].children))
            .sum()
    }

    fn without_last_root(t: &StructureTree, forest: &[usize]) -> Vec<usize> {
        // Deleting the rightmost root splices its children into its place.
        let mut f = forest[..forest.len() - 1].to_vec();
        f.extend_from_slice(&t.nodes[forest[forest.len() - 1]].children);
        f
    }

    fn dist(t1: &StructureTree, f1: &[usize], t2: &StructureTree, f2: &[usize]) -> u32 {
        if f1.is_empty() {
            return forest_size(t2, f2);
        }
        if f2.is_empty() {
            return forest_size(t1, f1);
        }
        let a = f1[f1.len() - 1];
        let b = f2[f2.len() - 1];

        let delete = dist(t1, &without_last_root(t1, f1), t2, f2) + 1;
        let insert = dist(t1, f1, t2, &without_last_root(t2, f2)) + 1;

        let (na, nb) = (&t1.nodes[a], &t2.nodes[b]);
        let subst = u32::from(
            !(na.label == nb.label && na.rowspan == nb.rowspan && na.colspan == nb.colspan),
        );
        let matched = dist(t1, &f1[..f1.len() - 1], t2, &f2[..f2.len() - 1])
            + dist(t1, &na.children, t2, &nb.children)
            + subst;

        delete.min(insert).min(matched)
    }

    dist(t1, &[t1.root], t2, &[t2.root])
}

/// Random structure tree with up to `extra` nodes beyond the table root:
/// each step either opens a new row or drops a cell (spans in 1..=2) into an
/// existing one. Small enough for the exhaustive edit-distance recursion.
pub fn random_structure_tree(rng: &mut Rng64, extra: usize) -> StructureTree {
    let mut tree = StructureTree::new();
    let mut rows: Vec<usize> = Vec::new();
    for _ in 0..extra {
        if rows.is_empty() || rng.chance(0.35) {
            rows.push(tree.add_child(0, NodeLabel::Tr, 1, 1));
        } else {
            let parent = rows[rng.range_u32(0, rows.len() as u32 - 1) as usize];
            tree.add_child(parent, NodeLabel::Td, rng.range_u32(1, 2), rng.range_u32(1, 2));
        }
    }
    tree
}

/// Adjacency relations by checking the rule on every ordered cell pair.
pub fn adjacency_relations_bruteforce(ann: &TableAnnotation) -> BTreeSet<Relation> {
    let mut out = BTreeSet::new();
    for (a, ca) in ann.cells.iter().enumerate() {
        for (b, cb) in ann.cells.iter().enumerate() {
            if a == b {
                continue;
            }
            let (la, lb) = (ca.logical, cb.logical);
            let rows_meet = la.row_start <= lb.row_end && lb.row_start <= la.row_end;
            let cols_meet = la.col_start <= lb.col_end && lb.col_start <= la.col_end;
            if lb.col_start == la.col_end + 1 && rows_meet {
                out.insert((a, b, RelationKind::Horizontal));
            }
            if lb.row_start == la.row_end + 1 && cols_meet {
                out.insert((a, b, RelationKind::Vertical));
            }
        }
    }
    out
}

/// Central finite difference of `f` with respect to one raster entry.
pub fn central_difference(
    mut f: impl FnMut(&RasterMap) -> f64,
    base: &RasterMap,
    y: usize,
    x: usize,
    c: usize,
    step: f64,
) -> f64 {
    let v = base.get(y, x, c);
    let mut plus = base.clone();
    plus.set(y, x, c, v + step);
    let mut minus = base.clone();
    minus.set(y, x, c, v - step);
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// One analytic-vs-numeric gradient comparison at a single tensor entry.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Which prediction tensor was probed.
    pub head: &'static str,
    pub y: usize,
    pub x: usize,
    pub c: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// `|analytic - numeric|` over the larger magnitude; 0 when both vanish.
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// How far every perturbed entry stays from the nearest non-smooth point of
/// the losses (absolute-value kinks, clamp boundaries). Finite-difference
/// steps far below this probe a locally smooth function.
const KINK_MARGIN: f64 = 0.05;

/// Additive noise bounded away from zero so L1 terms keep a definite sign.
fn margin_noise(rng: &mut Rng64) -> f64 {
    let mag = rng.range_f64(KINK_MARGIN, 6.0 * KINK_MARGIN);
    if rng.chance(0.5) {
        mag
    } else {
        -mag
    }
}

/// Cell corner positions on the low-resolution grid, reconstructed from the
/// center-to-corner targets (corner = center + vector).
fn lowres_corners(target: &TargetBundle) -> BTreeMap<usize, [[f64; 2]; 4]> {
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

/// A random prediction in general position: the ground-truth tensors pushed
/// away from every kink of the losses.
///
/// Heatmap values are squeezed into (0.05, 0.95) so the focal term stays
/// smooth; every other supervised entry gets additive noise with magnitude
/// in `[0.05, 0.3]`. Boundary-map noise is redrawn until every map-implied
/// span sits at least 1e-3 from its target, keeping the span loss's second
/// L1 term away from its kink as well.
pub fn smooth_random_prediction(target: &TargetBundle, rng: &mut Rng64) -> RawNetworkOutput {
    let mut pred = densify(target);

    let heat = target.heatmap.clone();
    for y in 0..heat.height() {
        for x in 0..heat.width() {
            for c in 0..heat.channels() {
                let g = heat.get(y, x, c);
                let p = 0.1 + 0.8 * g + rng.range_f64(-0.05, 0.05);
                pred.heatmap.set(y, x, c, p);
            }
        }
    }
    for t in &target.offsets {
        let (y, x) = (t.pos.y as usize, t.pos.x as usize);
        for c in 0..2 {
            pred.offsets.add(y, x, c, margin_noise(rng));
        }
    }
    for e in &target.center2corners {
        let (y, x) = (e.pos.y as usize, e.pos.x as usize);
        for c in 0..8 {
            pred.center2corners.add(y, x, c, margin_noise(rng));
        }
    }
    for e in &target.corners2center {
        let (y, x) = (e.pos.y as usize, e.pos.x as usize);
        for c in 0..8 {
            pred.corners2center.add(y, x, c, margin_noise(rng));
        }
    }
    for t in &target.spans {
        let (y, x) = (t.pos.y as usize, t.pos.x as usize);
        for c in 0..2 {
            pred.spans.add(y, x, c, margin_noise(rng));
        }
    }

    let corners = lowres_corners(target);
    let mask_pixels: Vec<(usize, usize)> = (0..target.mask.height())
        .flat_map(|y| (0..target.mask.width()).map(move |x| (y, x)))
        .filter(|&(y, x)| target.mask.get(y, x, 0) != 0.0)
        .collect();
    for attempt in 0.. {
        assert!(attempt < 64, "could not place boundary maps in general position");
        let mut row = target.row_map.clone();
        let mut col = target.col_map.clone();
        for &(y, x) in &mask_pixels {
            row.add(y, x, 0, margin_noise(rng));
            col.add(y, x, 0, margin_noise(rng));
        }
        // Implied spans are differences of two noisy samples, so their own
        // margins need checking rather than constructing.
        let clear = target.spans.iter().all(|t| {
            let Some(c) = corners.get(&t.cell) else { return true };
            let (s_row, s_col) = span_from_maps(c, &row, &col);
            s_row.iter().all(|v| (v - t.span[0]).abs() >= 1e-3)
                && s_col.iter().all(|v| (v - t.span[1]).abs() >= 1e-3)
        });
        if clear {
            pred.row_map = row;
            pred.col_map = col;
            break;
        }
    }

    pred
}

/// Entries eligible for probing: every channel at each listed pixel.
fn channel_candidates(
    positions: impl Iterator<Item = (usize, usize)>,
    channels: usize,
) -> Vec<(usize, usize, usize)> {
    positions
        .flat_map(|(y, x)| (0..channels).map(move |c| (y, x, c)))
        .collect()
}

fn pick<'a, T>(items: &'a [T], rng: &mut Rng64) -> &'a T {
    &items[rng.range_u32(0, items.len() as u32 - 1) as usize]
}

/// Compares the spatial loss's analytic gradients against central
/// differences at `count` random supervised entries of each vector tensor.
/// Pairing weights are held at their base-point values on both sides, since
/// the analytic gradients treat them as constants by definition.
pub fn check_spatial_gradients(
    pred: &RawNetworkOutput,
    target: &TargetBundle,
    cfg: &LossConfig,
    count: usize,
    step: f64,
    rng: &mut Rng64,
) -> Vec<GradCheck> {
    let (omegas, _) = spatial_omegas(&pred.center2corners, &pred.corners2center, target);
    let base = spatial_loss_with_omegas(
        &pred.center2corners,
        &pred.corners2center,
        target,
        cfg,
        &omegas,
    );
    let c2c_cands =
        channel_candidates(target.center2corners.iter().map(|e| (e.pos.y as usize, e.pos.x as usize)), 8);
    let cn2c_cands =
        channel_candidates(target.corners2center.iter().map(|e| (e.pos.y as usize, e.pos.x as usize)), 8);

    let mut out = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let &(y, x, c) = pick(&c2c_cands, rng);
        let numeric = central_difference(
            |r| spatial_loss_with_omegas(r, &pred.corners2center, target, cfg, &omegas).value,
            &pred.center2corners,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "center2corners",
            y,
            x,
            c,
            analytic: base.c2c_grad.get(y, x, c),
            numeric,
        });

        let &(y, x, c) = pick(&cn2c_cands, rng);
        let numeric = central_difference(
            |r| spatial_loss_with_omegas(&pred.center2corners, r, target, cfg, &omegas).value,
            &pred.corners2center,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "corners2center",
            y,
            x,
            c,
            analytic: base.cn2c_grad.get(y, x, c),
            numeric,
        });
    }
    out
}

/// Compares the boundary loss's analytic gradients against central
/// differences at `count` random mask pixels of each interpolation map.
pub fn check_boundary_gradients(
    pred: &RawNetworkOutput,
    target: &TargetBundle,
    count: usize,
    step: f64,
    rng: &mut Rng64,
) -> Vec<GradCheck> {
    let base = boundary_loss(&pred.row_map, &pred.col_map, &target.row_map, &target.col_map, &target.mask);
    let cands: Vec<(usize, usize, usize)> = channel_candidates(
        (0..target.mask.height())
            .flat_map(|y| (0..target.mask.width()).map(move |x| (y, x)))
            .filter(|&(y, x)| target.mask.get(y, x, 0) != 0.0),
        1,
    );

    let mut out = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let &(y, x, c) = pick(&cands, rng);
        let numeric = central_difference(
            |r| boundary_loss(r, &pred.col_map, &target.row_map, &target.col_map, &target.mask).value,
            &pred.row_map,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "row_map",
            y,
            x,
            c,
            analytic: base.row_map_grad.get(y, x, c),
            numeric,
        });

        let &(y, x, c) = pick(&cands, rng);
        let numeric = central_difference(
            |r| boundary_loss(&pred.row_map, r, &target.row_map, &target.col_map, &target.mask).value,
            &pred.col_map,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "col_map",
            y,
            x,
            c,
            analytic: base.col_map_grad.get(y, x, c),
            numeric,
        });
    }
    out
}

/// Compares the span loss's analytic gradients against central differences:
/// `count` probes on the span head plus `count` on each interpolation map at
/// the corner pixels it reads. Agreement weights are frozen at their
/// base-point values on both sides, matching the analytic convention.
pub fn check_span_gradients(
    pred: &RawNetworkOutput,
    target: &TargetBundle,
    cfg: &LossConfig,
    count: usize,
    step: f64,
    rng: &mut Rng64,
) -> Vec<GradCheck> {
    let weights = span_weights(&pred.spans, &pred.row_map, &pred.col_map, target, cfg);
    let base = span_loss_with_weights(&pred.spans, &pred.row_map, &pred.col_map, target, &weights);

    let span_cands =
        channel_candidates(target.spans.iter().map(|t| (t.pos.y as usize, t.pos.x as usize)), 2);
    let map_cands = |grad: &RasterMap| -> Vec<(usize, usize, usize)> {
        channel_candidates(
            (0..grad.height())
                .flat_map(|y| (0..grad.width()).map(move |x| (y, x)))
                .filter(|&(y, x)| grad.get(y, x, 0) != 0.0),
            1,
        )
    };
    let row_cands = map_cands(&base.row_map_grad);
    let col_cands = map_cands(&base.col_map_grad);

    let mut out = Vec::with_capacity(3 * count);
    for _ in 0..count {
        let &(y, x, c) = pick(&span_cands, rng);
        let numeric = central_difference(
            |r| span_loss_with_weights(r, &pred.row_map, &pred.col_map, target, &weights).value,
            &pred.spans,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "spans",
            y,
            x,
            c,
            analytic: base.spans_grad.get(y, x, c),
            numeric,
        });

        let &(y, x, c) = pick(&row_cands, rng);
        let numeric = central_difference(
            |r| span_loss_with_weights(&pred.spans, r, &pred.col_map, target, &weights).value,
            &pred.row_map,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "row_map",
            y,
            x,
            c,
            analytic: base.row_map_grad.get(y, x, c),
            numeric,
        });

        let &(y, x, c) = pick(&col_cands, rng);
        let numeric = central_difference(
            |r| span_loss_with_weights(&pred.spans, &pred.row_map, r, target, &weights).value,
            &pred.col_map,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "col_map",
            y,
            x,
            c,
            analytic: base.col_map_grad.get(y, x, c),
            numeric,
        });
    }
    out
}

/// Compares the keypoint loss's analytic gradients against central
/// differences: `count` probes over arbitrary heatmap entries plus `count`
/// over the supervised offset entries.
pub fn check_keypoint_gradients(
    pred: &RawNetworkOutput,
    target: &TargetBundle,
    cfg: &LossConfig,
    count: usize,
    step: f64,
    rng: &mut Rng64,
) -> Vec<GradCheck> {
    let base = keypoint_loss(&pred.heatmap, &pred.offsets, &target.heatmap, &target.offsets, cfg);
    let heat_cands = channel_candidates(
        (0..target.heatmap.height()).flat_map(|y| (0..target.heatmap.width()).map(move |x| (y, x))),
        target.heatmap.channels(),
    );
    let off_cands =
        channel_candidates(target.offsets.iter().map(|t| (t.pos.y as usize, t.pos.x as usize)), 2);

    let mut out = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let &(y, x, c) = pick(&heat_cands, rng);
        let numeric = central_difference(
            |r| {
                let k = keypoint_loss(r, &pred.offsets, &target.heatmap, &target.offsets, cfg);
                k.focal + k.offset
            },
            &pred.heatmap,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "heatmap",
            y,
            x,
            c,
            analytic: base.heatmap_grad.get(y, x, c),
            numeric,
        });

        let &(y, x, c) = pick(&off_cands, rng);
        let numeric = central_difference(
            |r| {
                let k = keypoint_loss(&pred.heatmap, r, &target.heatmap, &target.offsets, cfg);
                k.focal + k.offset
            },
            &pred.offsets,
            y,
            x,
            c,
            step,
        );
        out.push(GradCheck {
            head: "offsets",
            y,
            x,
            c,
            analytic: base.offsets_grad.get(y, x, c),
            numeric,
        });
    }
    out
}
