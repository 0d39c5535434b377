//! Deterministic synthetic tables and perfect ("oracle") output tensors.
//!
//! [`gen_table`] draws a random grid with weighted row heights and column
//! widths, merges random rectangular blocks, optionally warps the whole table
//! (affine or projective), and snaps every corner to the downscale lattice.
//! The snapping keeps each cell corner on an exact low-resolution pixel, so
//! the interpolation maps carry exact integer indices at the pixels a decoder
//! will sample — decoding oracle tensors of a generated table recovers its
//! structure exactly. [`gen_aligned_table`] is the stricter variant with
//! uniform row/column sizes, for checks that need interpolation maps free of
//! any ramp deviation at merged-cell junctions.
//!
//! Randomness comes from a self-contained xorshift64* generator seeded
//! through a splitmix64 scramble, so fixtures are reproducible from their
//! seed alone, in any language.

use serde::{Deserialize, Serialize};

use crate::annotation::{Cell, LogicalLoc, TableAnnotation};
use crate::config::LossConfig;
use crate::decoder::RawNetworkOutput;
use crate::geom::{Homography, Point2, Quad};
use crate::targets::assemble_target_bundle;
use crate::{Error, Result};

/// Minimum extent of any generated cell edge, in full-resolution pixels.
pub const MIN_CELL_PX: f64 = 8.0;

/// Row/column weight spread: sizes within one axis differ by at most this
/// factor. Kept modest so that merged-cell interpolation ramps stay within
/// rounding distance of the true boundary indices.
const WEIGHT_SPREAD: (f64, f64) = (1.0, 1.6);

/// Pre-snap minimum divider gap; snapping to the lattice can eat up to half
/// a lattice step from both ends.
const MIN_GAP_PRE_SNAP: f64 = 14.0;

/// xorshift64* generator with a splitmix64-scrambled seed.
///
/// State update: `x ^= x << 13; x ^= x >> 7; x ^= x << 17`; output is
/// `state * 0x2545F4914F6CDD1D`. Seeding passes the raw seed through one
/// splitmix64 step (add 0x9E3779B97F4A7C15, two xor-shift-multiply rounds)
/// so that small seeds do not start in low-entropy states.
#[derive(Debug, Clone)]
pub struct Rng64 {
    state: u64,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Rng64 { state: if z == 0 { 0x9E37_79B9_7F4A_7C15 } else { z } }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.f64()
    }

    /// Uniform in [-1, 1).
    pub fn sym(&mut self) -> f64 {
        2.0 * self.f64() - 1.0
    }

    /// Uniform integer in `lo..=hi`. Uses a plain modulo; the bias is
    /// negligible for the small ranges drawn here.
    pub fn range_u32(&mut self, lo: u32, hi: u32) -> u32 {
        debug_assert!(lo <= hi);
        lo + (self.next_u64() % (hi - lo + 1) as u64) as u32
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.f64() < p
    }
}

/// Warp family applied to generated tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WarpKind {
    #[default]
    None,
    Affine,
    Homography,
}

/// Generator parameters. Identical configs (seed included) produce
/// bitwise-identical tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub min_rows: u32,
    pub max_rows: u32,
    pub min_cols: u32,
    pub max_cols: u32,
    /// Probability that an unoccupied grid slot anchors a merged block.
    pub merge_probability: f64,
    /// Largest row/column extent of a merged block.
    pub max_merge_span: u32,
    pub warp: WarpKind,
    /// Corner jitter budget as a fraction of the image diagonal.
    pub warp_magnitude: f64,
    pub image_height: u32,
    pub image_width: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_rows: 1,
            max_rows: 12,
            min_cols: 1,
            max_cols: 10,
            merge_probability: 0.2,
            max_merge_span: 3,
            warp: WarpKind::None,
            warp_magnitude: 0.05,
            image_height: 1024,
            image_width: 1024,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_rows == 0 || self.min_cols == 0 {
            return Err(Error::Infeasible("row/column counts must be at least 1".into()));
        }
        if self.min_rows > self.max_rows || self.min_cols > self.max_cols {
            return Err(Error::Infeasible("empty row/column count range".into()));
        }
        if !(0.0..=1.0).contains(&self.merge_probability) {
            return Err(Error::Infeasible("merge probability must lie in [0, 1]".into()));
        }
        if self.max_merge_span == 0 {
            return Err(Error::Infeasible("max merge span must be at least 1".into()));
        }
        if !(self.warp_magnitude.is_finite() && self.warp_magnitude >= 0.0) {
            return Err(Error::Infeasible("warp magnitude must be finite and >= 0".into()));
        }
        if self.image_height < 32 || self.image_width < 32 {
            return Err(Error::Infeasible("image sides must be at least 32 px".into()));
        }
        Ok(())
    }
}

/// Snaps a coordinate to the nearest multiple of `step`.
fn snap(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Border margin for one image side: roughly 4%, at least two lattice
/// steps, itself on the lattice.
fn margin(side: u32, step: f64) -> f64 {
    (snap(0.04 * side as f64, step)).max(2.0 * step)
}

/// `count + 1` divider positions across `[lo, hi]` with weighted random
/// gaps, snapped to the lattice.
fn dividers(rng: &mut Rng64, count: u32, lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    let weights: Vec<f64> =
        (0..count).map(|_| rng.range_f64(WEIGHT_SPREAD.0, WEIGHT_SPREAD.1)).collect();
    let total: f64 = weights.iter().sum();
    let span = hi - lo;
    if span * WEIGHT_SPREAD.0 / total < MIN_GAP_PRE_SNAP {
        return Err(Error::Infeasible(format!(
            "{count} tracks across {span:.0} px leave gaps under {MIN_GAP_PRE_SNAP} px \
             (each cell needs at least {MIN_CELL_PX} px after lattice snapping)"
        )));
    }
    let mut out = Vec::with_capacity(count as usize + 1);
    let mut acc = 0.0;
    out.push(snap(lo, step));
    for w in &weights {
        acc += w;
        out.push(snap(lo + span * acc / total, step));
    }
    Ok(out)
}

/// Random rectangular merge layout tiling an `rows x cols` grid completely.
fn merge_layout(rng: &mut Rng64, rows: u32, cols: u32, cfg: &SynthConfig) -> Vec<LogicalLoc> {
    let mut occupied = vec![false; (rows * cols) as usize];
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if occupied[(r * cols + c) as usize] {
                continue;
            }
            let (mut sr, mut sc) = (1, 1);
            if cfg.merge_probability > 0.0 && rng.chance(cfg.merge_probability) {
                sr = rng.range_u32(1, cfg.max_merge_span).min(rows - r);
                sc = rng.range_u32(1, cfg.max_merge_span).min(cols - c);
            }
            let free = |sr: u32, sc: u32, occupied: &[bool]| {
                (r..r + sr).all(|rr| (c..c + sc).all(|cc| !occupied[(rr * cols + cc) as usize]))
            };
            while !free(sr, sc, &occupied) {
                if sc > 1 {
                    sc -= 1;
                } else {
                    sr -= 1;
                }
            }
            for rr in r..r + sr {
                for cc in c..c + sc {
                    occupied[(rr * cols + cc) as usize] = true;
                }
            }
            out.push(LogicalLoc::new(r, r + sr - 1, c, c + sc - 1));
        }
    }
    out
}

fn cells_from_grid(layout: &[LogicalLoc], xs: &[f64], ys: &[f64]) -> Vec<Cell> {
    layout
        .iter()
        .map(|loc| {
            let (x0, x1) = (xs[loc.col_start as usize], xs[loc.col_end as usize + 1]);
            let (y0, y1) = (ys[loc.row_start as usize], ys[loc.row_end as usize + 1]);
            Cell {
                quad: Quad::new([
                    Point2::new(x0, y0),
                    Point2::new(x1, y0),
                    Point2::new(x1, y1),
                    Point2::new(x0, y1),
                ]),
                logical: *loc,
            }
        })
        .collect()
}

/// Applies a projective transform to every cell corner. Logical locations
/// are untouched. Fails if the transform degenerates or pushes a corner out
/// of the image.
pub fn warp_annotation(ann: &TableAnnotation, h: &Homography) -> Result<TableAnnotation> {
    let mut cells = Vec::with_capacity(ann.cells.len());
    for (i, cell) in ann.cells.iter().enumerate() {
        let mut corners = [Point2::new(0.0, 0.0); 4];
        for (k, p) in cell.quad.corners.iter().enumerate() {
            let q = h
                .apply(*p)
                .ok_or_else(|| Error::Warp(format!("cell {i} corner {k} maps to infinity")))?;
            if !(0.0..=ann.image_width as f64).contains(&q.x)
                || !(0.0..=ann.image_height as f64).contains(&q.y)
            {
                return Err(Error::Warp(format!(
                    "cell {i} corner {k} leaves the image: ({:.1}, {:.1})",
                    q.x, q.y
                )));
            }
            corners[k] = q;
        }
        cells.push(Cell { quad: Quad::new(corners), logical: cell.logical });
    }
    Ok(TableAnnotation::new(cells, ann.image_width, ann.image_height))
}

/// Snaps every corner to the lattice. Shared corners snap identically, so
/// the grid stays consistent.
fn snap_annotation(ann: &TableAnnotation, step: f64) -> TableAnnotation {
    let cells = ann
        .cells
        .iter()
        .map(|cell| Cell {
            quad: Quad::new(cell.quad.corners.map(|p| Point2::new(snap(p.x, step), snap(p.y, step)))),
            logical: cell.logical,
        })
        .collect();
    TableAnnotation::new(cells, ann.image_width, ann.image_height)
}

/// A candidate is usable if it validates, keeps every quad's corner order
/// canonical (clockwise, upper-left first), keeps edges at cell scale, and
/// stays clear of the image border.
fn acceptable(ann: &TableAnnotation) -> bool {
    if !ann.validate().is_empty() {
        return false;
    }
    let (w, h) = (ann.image_width as f64, ann.image_height as f64);
    ann.cells.iter().all(|cell| {
        let q = &cell.quad;
        if q.normalized() != *q {
            return false;
        }
        for i in 0..4 {
            let (a, b) = (q.corners[i], q.corners[(i + 1) % 4]);
            if a.distance(&b) < MIN_CELL_PX {
                return false;
            }
            if !(4.0..=w - 4.0).contains(&a.x) || !(4.0..=h - 4.0).contains(&a.y) {
                return false;
            }
        }
        true
    })
}

/// Jittered copies of the table's bounding rectangle corners; for the affine
/// family the fourth corner is implied so the transform has no perspective
/// component.
fn sample_warp(
    rng: &mut Rng64,
    kind: WarpKind,
    rect: [Point2; 4],
    magnitude: f64,
    diag: f64,
) -> Option<Homography> {
    let budget = 0.25 * magnitude * diag;
    let mut jittered = rect.map(|p| Point2::new(p.x + rng.sym() * budget, p.y + rng.sym() * budget));
    if kind == WarpKind::Affine {
        // Parallelogram: bl = tl + (br - tr).
        jittered[3] = Point2::new(
            jittered[0].x + jittered[2].x - jittered[1].x,
            jittered[0].y + jittered[2].y - jittered[1].y,
        );
    }
    Homography::from_correspondences(&rect, &jittered).ok()
}

/// Draws one synthetic table annotation from the config. The returned
/// annotation always validates; warped variants fall back to the unwarped
/// grid when no acceptable warp is found within the retry budget.
pub fn gen_table(cfg: &SynthConfig) -> Result<TableAnnotation> {
    cfg.validate()?;
    let step = LossConfig::default().downscale as f64;
    let mut rng = Rng64::new(cfg.seed);
    let rows = rng.range_u32(cfg.min_rows, cfg.max_rows);
    let cols = rng.range_u32(cfg.min_cols, cfg.max_cols);
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let (mx, my) = (margin(cfg.image_width, step), margin(cfg.image_height, step));
    let xs = dividers(&mut rng, cols, mx, w - mx, step)?;
    let ys = dividers(&mut rng, rows, my, h - my, step)?;
    let layout = merge_layout(&mut rng, rows, cols, cfg);
    let base = TableAnnotation::new(
        cells_from_grid(&layout, &xs, &ys),
        cfg.image_width,
        cfg.image_height,
    );
    base.ensure_valid()?;

    if cfg.warp == WarpKind::None || cfg.warp_magnitude == 0.0 {
        return Ok(base);
    }

    let rect = [
        Point2::new(xs[0], ys[0]),
        Point2::new(xs[cols as usize], ys[0]),
        Point2::new(xs[cols as usize], ys[rows as usize]),
        Point2::new(xs[0], ys[rows as usize]),
    ];
    let diag = w.hypot(h);
    let mut magnitude = cfg.warp_magnitude;
    for _ in 0..6 {
        if let Some(hm) = sample_warp(&mut rng, cfg.warp, rect, magnitude, diag) {
            if let Ok(warped) = warp_annotation(&base, &hm) {
                let snapped = snap_annotation(&warped, step);
                if acceptable(&snapped) {
                    return Ok(snapped);
                }
            }
        }
        magnitude /= 2.0;
    }
    Ok(base)
}

/// Axis-aligned table with *uniform* row/column sizes on the lattice. With
/// equal track sizes the interpolation maps hit integer indices exactly at
/// every divider — including inside merged cells — which the loss checks at
/// ground truth rely on. Merges still follow the config.
pub fn gen_aligned_table(cfg: &SynthConfig) -> Result<TableAnnotation> {
    cfg.validate()?;
    let step = LossConfig::default().downscale as f64;
    let mut rng = Rng64::new(cfg.seed);
    let rows = rng.range_u32(cfg.min_rows, cfg.max_rows);
    let cols = rng.range_u32(cfg.min_cols, cfg.max_cols);
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let (mx, my) = (margin(cfg.image_width, step), margin(cfg.image_height, step));
    let track = |space: f64, n: u32| -> Result<f64> {
        let size = (space / n as f64 / step).floor() * step;
        if size < MIN_CELL_PX {
            return Err(Error::Infeasible(format!(
                "{n} uniform tracks across {space:.0} px fall below {MIN_CELL_PX} px"
            )));
        }
        Ok(size)
    };
    let sx = track(w - 2.0 * mx, cols)?;
    let sy = track(h - 2.0 * my, rows)?;
    let xs: Vec<f64> = (0..=cols).map(|c| mx + c as f64 * sx).collect();
    let ys: Vec<f64> = (0..=rows).map(|r| my + r as f64 * sy).collect();
    let layout = merge_layout(&mut rng, rows, cols, cfg);
    let ann = TableAnnotation::new(
        cells_from_grid(&layout, &xs, &ys),
        cfg.image_width,
        cfg.image_height,
    );
    ann.ensure_valid()?;
    Ok(ann)
}

/// Renders the tensors an ideal network would output for `ann`: the ground
/// truth targets laid out densely, zeros away from target pixels.
pub fn render_oracle(ann: &TableAnnotation, cfg: &LossConfig) -> RawNetworkOutput {
    crate::bundle::densify(&assemble_target_bundle(ann, cfg))
}
