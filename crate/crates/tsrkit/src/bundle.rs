//! On-disk layout for target bundles and raw output tensors.
//!
//! Both live in a directory of `.tcn` rasters plus one JSON sidecar:
//!
//! ```text
//! bundle/            raw output/
//!   heatmap.tcn        heatmap.tcn
//!   rowmap.tcn         rowmap.tcn
//!   colmap.tcn         colmap.tcn
//!   mask.tcn           offsets.tcn
//!   sparse.json        center2corners.tcn
//!                      corners2center.tcn
//!                      spans.tcn
//!                      meta.json
//! ```
//!
//! The two layouts share file names where the contents agree, so one
//! directory can hold both at once ([`densify`] bridges the sparse targets to
//! dense tensors). Raster files store f32 samples, so loading quantizes any
//! value that is not exactly representable; the JSON sidecars round-trip
//! exactly. All writes go through [`write_atomic`]: data lands under a
//! temporary name in the destination directory and is renamed into place, so
//! readers never observe a half-written file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::RawNetworkOutput;
use crate::raster::RasterMap;
use crate::targets::{
    BundleMeta, CenterVectors, CornerSlot, CornerVectors, OffsetTarget, PixelPos, SpanTarget,
    TargetBundle,
};
use crate::{Error, Result};

/// Writes `bytes` to `path` via a temporary file in the same directory and an
/// atomic rename, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| {
        Error::Format(format!("cannot create directory {}: {e}", dir.display()))
    })?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| Error::Format(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Serialized form of the sparse targets (everything in a [`TargetBundle`]
/// that is not a raster). Each section is a map keyed by the target's
/// low-resolution pixel as `"y,x"`; map ordering makes the JSON byte-stable
/// for a given annotation.
#[derive(Debug, Serialize, Deserialize)]
struct SparseWire {
    meta: BundleMeta,
    offsets: BTreeMap<String, [f64; 2]>,
    center2corners: BTreeMap<String, CenterWire>,
    corners2center: BTreeMap<String, CornerWire>,
    spans: BTreeMap<String, SpanWire>,
    #[serde(default)]
    warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CenterWire {
    cell: usize,
    center: [f64; 2],
    vectors: [f64; 8],
}

#[derive(Debug, Serialize, Deserialize)]
struct CornerWire {
    corner: [f64; 2],
    slots: [CornerSlot; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct SpanWire {
    cell: usize,
    span: [f64; 2],
}

fn pixel_key(pos: PixelPos) -> String {
    format!("{},{}", pos.y, pos.x)
}

fn parse_pixel_key(key: &str, section: &str) -> Result<PixelPos> {
    let parse = || -> Option<PixelPos> {
        let (y, x) = key.split_once(',')?;
        Some(PixelPos::new(y.trim().parse().ok()?, x.trim().parse().ok()?))
    };
    parse().ok_or_else(|| {
        Error::Format(format!("sparse.json: {section} key {key:?} is not a \"y,x\" pixel"))
    })
}

/// Builds a pixel-keyed map, rejecting duplicate pixels (the assembler
/// guarantees one entry per pixel; a duplicate means corrupted state).
fn keyed<T, V>(items: &[T], pos: impl Fn(&T) -> PixelPos, value: impl Fn(&T) -> V, section: &str)
-> Result<BTreeMap<String, V>> {
    let mut map = BTreeMap::new();
    for item in items {
        if map.insert(pixel_key(pos(item)), value(item)).is_some() {
            return Err(Error::Internal(format!(
                "duplicate {section} entry at pixel {}",
                pixel_key(pos(item))
            )));
        }
    }
    Ok(map)
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{} is not valid: {e}", path.display())))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Writes a target bundle into `dir` (created if needed).
pub fn save_target_bundle(dir: &Path, bundle: &TargetBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    bundle.heatmap.save_tcn(dir.join("heatmap.tcn"))?;
    bundle.row_map.save_tcn(dir.join("rowmap.tcn"))?;
    bundle.col_map.save_tcn(dir.join("colmap.tcn"))?;
    bundle.mask.save_tcn(dir.join("mask.tcn"))?;
    let wire = SparseWire {
        meta: bundle.meta,
        offsets: keyed(&bundle.offsets, |t| t.pos, |t| t.offset, "offsets")?,
        center2corners: keyed(
            &bundle.center2corners,
            |t| t.pos,
            |t| CenterWire { cell: t.cell, center: t.center, vectors: t.vectors },
            "center2corners",
        )?,
        corners2center: keyed(
            &bundle.corners2center,
            |t| t.pos,
            |t| CornerWire { corner: t.corner, slots: t.slots },
            "corners2center",
        )?,
        spans: keyed(&bundle.spans, |t| t.pos, |t| SpanWire { cell: t.cell, span: t.span }, "spans")?,
        warnings: bundle.warnings.clone(),
    };
    save_json(&dir.join("sparse.json"), &wire)
}

/// Reads a target bundle from `dir`, checking raster shapes against the
/// metadata in `sparse.json`.
pub fn load_target_bundle(dir: &Path) -> Result<TargetBundle> {
    let wire: SparseWire = load_json(&dir.join("sparse.json"))?;
    let heatmap = RasterMap::load_tcn(dir.join("heatmap.tcn"))?;
    let row_map = RasterMap::load_tcn(dir.join("rowmap.tcn"))?;
    let col_map = RasterMap::load_tcn(dir.join("colmap.tcn"))?;
    let mask = RasterMap::load_tcn(dir.join("mask.tcn"))?;
    let (lh, lw) = wire.meta.lowres_dims();
    for (name, r, channels) in [
        ("heatmap.tcn", &heatmap, 2usize),
        ("rowmap.tcn", &row_map, 1),
        ("colmap.tcn", &col_map, 1),
        ("mask.tcn", &mask, 1),
    ] {
        if (r.height(), r.width(), r.channels()) != (lh, lw, channels) {
            return Err(Error::Format(format!(
                "{} in {} is {}x{}x{}, expected {lh}x{lw}x{channels}",
                name,
                dir.display(),
                r.height(),
                r.width(),
                r.channels()
            )));
        }
    }
    let mut offsets = Vec::with_capacity(wire.offsets.len());
    for (key, offset) in &wire.offsets {
        offsets.push(OffsetTarget { pos: parse_pixel_key(key, "offsets")?, offset: *offset });
    }
    let mut center2corners = Vec::with_capacity(wire.center2corners.len());
    for (key, v) in &wire.center2corners {
        center2corners.push(CenterVectors {
            pos: parse_pixel_key(key, "center2corners")?,
            cell: v.cell,
            center: v.center,
            vectors: v.vectors,
        });
    }
    let mut corners2center = Vec::with_capacity(wire.corners2center.len());
    for (key, v) in &wire.corners2center {
        corners2center.push(CornerVectors {
            pos: parse_pixel_key(key, "corners2center")?,
            corner: v.corner,
            slots: v.slots,
        });
    }
    let mut spans = Vec::with_capacity(wire.spans.len());
    for (key, v) in &wire.spans {
        spans.push(SpanTarget { pos: parse_pixel_key(key, "spans")?, cell: v.cell, span: v.span });
    }
    // Key order in the file is lexicographic; restore the numeric pixel
    // order the assembler uses.
    offsets.sort_by_key(|t| t.pos);
    center2corners.sort_by_key(|t| t.pos);
    corners2center.sort_by_key(|t| t.pos);
    spans.sort_by_key(|t| t.pos);

    Ok(TargetBundle {
        heatmap,
        offsets,
        center2corners,
        corners2center,
        spans,
        row_map,
        col_map,
        mask,
        meta: wire.meta,
        warnings: wire.warnings,
    })
}

/// Expands the sparse targets of a bundle into dense tensors: the exact
/// output an ideal network would produce for the source annotation. Pixels
/// without a target stay zero.
pub fn densify(bundle: &TargetBundle) -> RawNetworkOutput {
    let (h, w) = bundle.meta.lowres_dims();
    let mut offsets = RasterMap::zeros(h, w, 2);
    for t in &bundle.offsets {
        offsets.set(t.pos.y as usize, t.pos.x as usize, 0, t.offset[0]);
        offsets.set(t.pos.y as usize, t.pos.x as usize, 1, t.offset[1]);
    }
    let mut center2corners = RasterMap::zeros(h, w, 8);
    let mut spans = RasterMap::zeros(h, w, 2);
    for t in &bundle.center2corners {
        for (c, v) in t.vectors.iter().enumerate() {
            center2corners.set(t.pos.y as usize, t.pos.x as usize, c, *v);
        }
    }
    for t in &bundle.spans {
        spans.set(t.pos.y as usize, t.pos.x as usize, 0, t.span[0]);
        spans.set(t.pos.y as usize, t.pos.x as usize, 1, t.span[1]);
    }
    let mut corners2center = RasterMap::zeros(h, w, 8);
    for t in &bundle.corners2center {
        for (k, slot) in t.slots.iter().enumerate() {
            corners2center.set(t.pos.y as usize, t.pos.x as usize, 2 * k, slot.vector[0]);
            corners2center.set(t.pos.y as usize, t.pos.x as usize, 2 * k + 1, slot.vector[1]);
        }
    }
    RawNetworkOutput {
        heatmap: bundle.heatmap.clone(),
        offsets,
        center2corners,
        corners2center,
        spans,
        row_map: bundle.row_map.clone(),
        col_map: bundle.col_map.clone(),
        meta: bundle.meta,
    }
}

/// Writes raw output tensors into `dir` (created if needed).
pub fn save_raw_output(dir: &Path, raw: &RawNetworkOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    raw.heatmap.save_tcn(dir.join("heatmap.tcn"))?;
    raw.offsets.save_tcn(dir.join("offsets.tcn"))?;
    raw.center2corners.save_tcn(dir.join("center2corners.tcn"))?;
    raw.corners2center.save_tcn(dir.join("corners2center.tcn"))?;
    raw.spans.save_tcn(dir.join("spans.tcn"))?;
    raw.row_map.save_tcn(dir.join("rowmap.tcn"))?;
    raw.col_map.save_tcn(dir.join("colmap.tcn"))?;
    save_json(&dir.join("meta.json"), &raw.meta)
}

/// Reads raw output tensors from `dir` and validates their shapes.
pub fn load_raw_output(dir: &Path) -> Result<RawNetworkOutput> {
    let meta: BundleMeta = load_json(&dir.join("meta.json"))?;
    let raw = RawNetworkOutput {
        heatmap: RasterMap::load_tcn(dir.join("heatmap.tcn"))?,
        offsets: RasterMap::load_tcn(dir.join("offsets.tcn"))?,
        center2corners: RasterMap::load_tcn(dir.join("center2corners.tcn"))?,
        corners2center: RasterMap::load_tcn(dir.join("corners2center.tcn"))?,
        spans: RasterMap::load_tcn(dir.join("spans.tcn"))?,
        row_map: RasterMap::load_tcn(dir.join("rowmap.tcn"))?,
        col_map: RasterMap::load_tcn(dir.join("colmap.tcn"))?,
        meta,
    };
    raw.validate_dims()?;
    let (lh, lw) = meta.lowres_dims();
    if (raw.heatmap.height(), raw.heatmap.width()) != (lh, lw) {
        return Err(Error::Format(format!(
            "rasters in {} are {}x{} but meta.json implies {lh}x{lw}",
            dir.display(),
            raw.heatmap.height(),
            raw.heatmap.width()
        )));
    }
    Ok(raw)
}
