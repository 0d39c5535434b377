//! The `viz` command: PNG rendering of interpolation maps and annotations.
//!
//! Interpolation maps use a white-to-red ramp keyed to how close each value
//! sits to an integer — the saturated bands mark the learned row/column
//! boundaries. Annotations render as black cell outlines on white.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use tsrkit::annotation::TableAnnotation;
use tsrkit::bundle::{load_raw_output, load_target_bundle, write_atomic};
use tsrkit::geom::Point2;
use tsrkit::raster::RasterMap;
use tsrkit::{Error, Result};

use crate::MapAxis;

/// Nearness-to-integer at which a pixel counts as saturated (pure red).
const SATURATION_NEARNESS: f64 = 0.95;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

pub struct VizStats {
    pub width: u32,
    pub height: u32,
    /// Cell outlines drawn (annotation inputs).
    pub polygons: usize,
    /// Pixels rendered at full saturation (map inputs).
    pub saturated: usize,
}

impl VizStats {
    pub fn summary(&self, out: &Path) -> String {
        format!(
            "wrote {} ({}x{}): {} polygons, {} saturated pixels",
            out.display(),
            self.width,
            self.height,
            self.polygons,
            self.saturated
        )
    }
}

/// White-to-red ramp by closeness of `v` to the nearest integer; masked-out
/// pixels stay background. Returns the image and the saturated-pixel count.
pub fn render_map(map: &RasterMap, mask: Option<&RasterMap>) -> (RgbImage, usize) {
    let (h, w) = (map.height(), map.width());
    let mut img = RgbImage::from_pixel(w as u32, h as u32, BACKGROUND);
    let mut saturated = 0usize;
    for y in 0..h {
        for x in 0..w {
            if let Some(m) = mask {
                if m.get(y, x, 0) == 0.0 {
                    continue;
                }
            }
            let v = map.get(y, x, 0);
            let nearness = 1.0 - 2.0 * (v - v.round()).abs();
            if nearness >= SATURATION_NEARNESS {
                saturated += 1;
            }
            let cool = (255.0 * (1.0 - nearness)).round().clamp(0.0, 255.0) as u8;
            img.put_pixel(x as u32, y as u32, Rgb([255, cool, cool]));
        }
    }
    (img, saturated)
}

fn draw_line(img: &mut RgbImage, a: Point2, b: Point2, color: Rgb<u8>) {
    let (mut x0, mut y0) = (a.x.round() as i64, a.y.round() as i64);
    let (x1, y1) = (b.x.round() as i64, b.y.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Cell outlines on a white canvas. Returns the image and the number of
/// polygons drawn.
pub fn render_annotation(ann: &TableAnnotation) -> (RgbImage, usize) {
    let mut img = RgbImage::from_pixel(ann.image_width.max(1), ann.image_height.max(1), BACKGROUND);
    for cell in &ann.cells {
        let c = &cell.quad.corners;
        for i in 0..4 {
            draw_line(&mut img, c[i], c[(i + 1) % 4], Rgb([0, 0, 0]));
        }
    }
    (img, ann.cells.len())
}

fn save_png(img: &RgbImage, out: &Path) -> Result<()> {
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| Error::Internal(format!("PNG encoding failed: {e}")))?;
    write_atomic(out, &bytes.into_inner())
}

pub fn cmd_viz(input: &Path, out: &Path, axis: MapAxis) -> Result<VizStats> {
    let (img, polygons, saturated) = if input.is_file() {
        let ann = TableAnnotation::load(input)?;
        ann.ensure_valid()?;
        let (img, polygons) = render_annotation(&ann);
        (img, polygons, 0)
    } else if input.join("meta.json").is_file() {
        let raw = load_raw_output(input)?;
        let map = match axis {
            MapAxis::Row => &raw.row_map,
            MapAxis::Col => &raw.col_map,
        };
        let (img, saturated) = render_map(map, None);
        (img, 0, saturated)
    } else if input.join("sparse.json").is_file() {
        let bundle = load_target_bundle(input)?;
        let map = match axis {
            MapAxis::Row => &bundle.row_map,
            MapAxis::Col => &bundle.col_map,
        };
        let (img, saturated) = render_map(map, Some(&bundle.mask));
        (img, 0, saturated)
    } else {
        return Err(Error::Format(format!(
            "{} is neither an annotation JSON, a tensor directory (meta.json), \
             nor a target bundle (sparse.json)",
            input.display()
        )));
    };
    save_png(&img, out)?;
    Ok(VizStats { width: img.width(), height: img.height(), polygons, saturated })
}
