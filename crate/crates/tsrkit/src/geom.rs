//! Planar geometry primitives shared across the pipeline.
//!
//! Coordinates follow image conventions: x grows right, y grows down, so a
//! quad whose corners run upper-left, upper-right, lower-right, lower-left is
//! *clockwise* and has positive signed shoelace area.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 2D point in image coordinates (y grows downward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Convex quadrilateral with corners stored clockwise starting at the
/// upper-left corner (image coordinates).
///
/// Corner slot k of a cell quad carries meaning downstream (slot 0 pairs with
/// `row_start`/`col_start`), so the ordering convention matters. Use
/// [`Quad::normalized`] when ingesting external data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub corners: [Point2; 4],
}

impl Quad {
    pub fn new(corners: [Point2; 4]) -> Self {
        Quad { corners }
    }

    /// Builds a quad from `[x1, y1, x2, y2, x3, y3, x4, y4]`.
    pub fn from_flat(v: &[f64; 8]) -> Self {
        Quad::new([
            Point2::new(v[0], v[1]),
            Point2::new(v[2], v[3]),
            Point2::new(v[4], v[5]),
            Point2::new(v[6], v[7]),
        ])
    }

    pub fn to_flat(&self) -> [f64; 8] {
        let c = &self.corners;
        [c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y]
    }

    /// Twice the signed shoelace sum; positive for clockwise order under
    /// image coordinates.
    fn signed_area2(&self) -> f64 {
        let c = &self.corners;
        let mut s = 0.0;
        for i in 0..4 {
            let j = (i + 1) % 4;
            s += c[i].x * c[j].y - c[j].x * c[i].y;
        }
        s
    }

    pub fn signed_area(&self) -> f64 {
        0.5 * self.signed_area2()
    }

    pub fn is_clockwise(&self) -> bool {
        self.signed_area2() > 0.0
    }

    /// Strict convexity test tolerant of collinear corners: the quad is
    /// convex unless consecutive edge turns have genuinely mixed signs.
    pub fn is_convex(&self) -> bool {
        let c = &self.corners;
        let mut scale = 0.0f64;
        for p in c {
            scale = scale.max(p.x.abs()).max(p.y.abs());
        }
        let eps = 1e-12 * scale.max(1.0) * scale.max(1.0);
        let (mut pos, mut neg) = (false, false);
        for i in 0..4 {
            let a = c[i];
            let b = c[(i + 1) % 4];
            let d = c[(i + 2) % 4];
            let cross = (b.x - a.x) * (d.y - b.y) - (b.y - a.y) * (d.x - b.x);
            if cross > eps {
                pos = true;
            } else if cross < -eps {
                neg = true;
            }
        }
        !(pos && neg)
    }

    /// Canonicalizes the corner order: counter-clockwise quads are reversed,
    /// then the order is rotated so the corner minimizing `x + y` (ties by
    /// smaller x) comes first.
    pub fn normalized(&self) -> Quad {
        let mut c = self.corners;
        if self.signed_area2() < 0.0 {
            c.reverse();
        }
        let mut start = 0;
        for i in 1..4 {
            let (a, b) = (c[i], c[start]);
            let (sa, sb) = (a.x + a.y, b.x + b.y);
            if sa < sb || (sa == sb && a.x < b.x) {
                start = i;
            }
        }
        Quad::new([c[start], c[(start + 1) % 4], c[(start + 2) % 4], c[(start + 3) % 4]])
    }

    /// Arithmetic mean of the four corners.
    pub fn center(&self) -> Point2 {
        let c = &self.corners;
        Point2::new(
            (c[0].x + c[1].x + c[2].x + c[3].x) / 4.0,
            (c[0].y + c[1].y + c[2].y + c[3].y) / 4.0,
        )
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bbox(&self) -> (Point2, Point2) {
        let c = &self.corners;
        let mut min = c[0];
        let mut max = c[0];
        for p in &c[1..] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        (min, max)
    }

    /// All corner coordinates divided by `s`.
    pub fn scaled(&self, s: f64) -> Quad {
        Quad::new(self.corners.map(|p| Point2::new(p.x / s, p.y / s)))
    }
}

/// Absolute shoelace area of the closed polygon `corners`.
pub fn shoelace_area(corners: &[Point2]) -> f64 {
    let n = corners.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        s += corners[i].x * corners[j].y - corners[j].x * corners[i].y;
    }
    0.5 * s.abs()
}

/// Intersection-over-union of two convex quads via Sutherland–Hodgman
/// clipping. Degenerate (zero-area) inputs and empty unions yield 0.
pub fn polygon_iou(a: &Quad, b: &Quad) -> f64 {
    let area_a = shoelace_area(&a.corners);
    let area_b = shoelace_area(&b.corners);
    if area_a == 0.0 || area_b == 0.0 {
        return 0.0;
    }
    let clipped = clip_convex(&a.corners, b);
    let inter = shoelace_area(&clipped);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Clips `subject` against every edge of the clockwise convex quad `clip`.
fn clip_convex(subject: &[Point2], clip: &Quad) -> Vec<Point2> {
    // For a clockwise boundary in image coordinates the interior lies on the
    // non-negative side of each directed edge's cross product.
    let clip_corners = if clip.is_clockwise() {
        clip.corners
    } else {
        let mut c = clip.corners;
        c.reverse();
        c
    };
    let mut output: Vec<Point2> = subject.to_vec();
    for i in 0..4 {
        if output.is_empty() {
            break;
        }
        let e0 = clip_corners[i];
        let e1 = clip_corners[(i + 1) % 4];
        let input = std::mem::take(&mut output);
        let inside =
            |p: &Point2| (e1.x - e0.x) * (p.y - e0.y) - (e1.y - e0.y) * (p.x - e0.x) >= 0.0;
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = inside(&cur);
            let prev_in = inside(&prev);
            if cur_in {
                if !prev_in {
                    if let Some(p) = segment_line_intersection(prev, cur, e0, e1) {
                        output.push(p);
                    }
                }
                output.push(cur);
            } else if prev_in {
                if let Some(p) = segment_line_intersection(prev, cur, e0, e1) {
                    output.push(p);
                }
            }
        }
    }
    output
}

fn segment_line_intersection(p0: Point2, p1: Point2, e0: Point2, e1: Point2) -> Option<Point2> {
    let dx = p1.x - p0.x;
    let dy = p1.y - p0.y;
    let ex = e1.x - e0.x;
    let ey = e1.y - e0.y;
    let denom = ex * dy - ey * dx;
    if denom.abs() < 1e-30 {
        return None;
    }
    let t = (ex * (p0.y - e0.y) - ey * (p0.x - e0.x)) / -denom;
    Some(Point2::new(p0.x + t * dx, p0.y + t * dy))
}

/// 3x3 projective transform acting on row vectors `(x, y, 1)^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography { m: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]] }
    }

    /// Rotation by `theta` radians about `center` (positive rotates the +x
    /// axis toward +y, i.e. visually clockwise in image coordinates).
    pub fn rotation_about(center: Point2, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let tx = center.x - c * center.x + s * center.y;
        let ty = center.y - s * center.x - c * center.y;
        Homography { m: [[c, -s, tx], [s, c, ty], [0.0, 0.0, 1.0]] }
    }

    /// Applies the transform; `None` when the point maps to infinity.
    pub fn apply(&self, p: Point2) -> Option<Point2> {
        let m = &self.m;
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        if w.abs() < 1e-12 {
            return None;
        }
        Some(Point2::new(
            (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
            (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
        ))
    }

    /// Least-squares-free 4-point homography (direct linear transform).
    /// Returns an error when the correspondences are degenerate.
    pub fn from_correspondences(src: &[Point2; 4], dst: &[Point2; 4]) -> Result<Homography> {
        // Solve the 8x8 system for [h11..h32], fixing h33 = 1.
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let (x, y) = (src[i].x, src[i].y);
            let (u, v) = (dst[i].x, dst[i].y);
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        let h = solve_linear_8(&mut a)
            .ok_or_else(|| Error::Warp("degenerate correspondences for homography".into()))?;
        Ok(Homography {
            m: [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]],
        })
    }
}

/// Gaussian elimination with partial pivoting on an 8x9 augmented system.
fn solve_linear_8(a: &mut [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..9 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0.0f64; 8];
    for i in 0..8 {
        x[i] = a[i][8] / a[i][i];
    }
    Some(x)
}
