//! Table annotations: cell geometry plus logical grid coordinates.
//!
//! The canonical JSON schema is
//!
//! ```json
//! {
//!   "image_width": 640,
//!   "image_height": 480,
//!   "cells": [
//!     { "quad": [x1, y1, x2, y2, x3, y3, x4, y4],
//!       "logical": [row_start, row_end, col_start, col_end] }
//!   ]
//! }
//! ```
//!
//! Quad corners are clockwise starting at the upper-left corner; ingestion
//! normalizes the order (see [`Quad::normalized`]). Logical indices are
//! 0-based and inclusive on both ends.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::Quad;
use crate::{Error, Result};

/// Inclusive logical grid rectangle occupied by one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogicalLoc {
    pub row_start: u32,
    pub row_end: u32,
    pub col_start: u32,
    pub col_end: u32,
}

impl LogicalLoc {
    pub fn new(row_start: u32, row_end: u32, col_start: u32, col_end: u32) -> Self {
        LogicalLoc { row_start, row_end, col_start, col_end }
    }

    pub fn row_span(&self) -> u32 {
        self.row_end - self.row_start + 1
    }

    pub fn col_span(&self) -> u32 {
        self.col_end - self.col_start + 1
    }

    /// True when the two logical rectangles share at least one grid slot.
    pub fn intersects(&self, other: &LogicalLoc) -> bool {
        self.row_start <= other.row_end
            && other.row_start <= self.row_end
            && self.col_start <= other.col_end
            && other.col_start <= self.col_end
    }
}

/// One table cell: spatial quad plus logical location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub quad: Quad,
    pub logical: LogicalLoc,
}

/// A full table annotation for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TableAnnotation {
    pub cells: Vec<Cell>,
    pub image_width: u32,
    pub image_height: u32,
}

/// A single validation failure, carrying the offending cell indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonFiniteCoordinate { cell: usize },
    OutOfBounds { cell: usize },
    DegenerateQuad { cell: usize },
    NotClockwise { cell: usize },
    NonConvex { cell: usize },
    InvalidLogicalRange { cell: usize },
    DuplicateLogical { a: usize, b: usize },
    LogicalOverlap { a: usize, b: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFiniteCoordinate { cell } => {
                write!(f, "cell {cell}: non-finite coordinate")
            }
            Violation::OutOfBounds { cell } => {
                write!(f, "cell {cell}: corner outside image bounds")
            }
            Violation::DegenerateQuad { cell } => write!(f, "cell {cell}: zero-area quad"),
            Violation::NotClockwise { cell } => {
                write!(f, "cell {cell}: corners not in clockwise order")
            }
            Violation::NonConvex { cell } => write!(f, "cell {cell}: concave quad"),
            Violation::InvalidLogicalRange { cell } => {
                write!(f, "cell {cell}: logical end before start")
            }
            Violation::DuplicateLogical { a, b } => {
                write!(f, "cells {a} and {b}: identical logical location")
            }
            Violation::LogicalOverlap { a, b } => {
                write!(f, "cells {a} and {b}: overlapping logical rectangles")
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CellWire {
    quad: [f64; 8],
    logical: [u32; 4],
}

#[derive(Serialize, Deserialize)]
struct AnnotationWire {
    image_width: u32,
    image_height: u32,
    cells: Vec<CellWire>,
}

impl TableAnnotation {
    pub fn new(cells: Vec<Cell>, image_width: u32, image_height: u32) -> Self {
        TableAnnotation { cells, image_width, image_height }
    }

    /// Number of logical rows (max `row_end` + 1; 0 for an empty table).
    pub fn num_rows(&self) -> u32 {
        self.cells.iter().map(|c| c.logical.row_end + 1).max().unwrap_or(0)
    }

    /// Number of logical columns (max `col_end` + 1; 0 for an empty table).
    pub fn num_cols(&self) -> u32 {
        self.cells.iter().map(|c| c.logical.col_end + 1).max().unwrap_or(0)
    }

    /// Checks every structural invariant and returns all violations found.
    /// An empty result means the annotation is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        for (i, cell) in self.cells.iter().enumerate() {
            let q = &cell.quad;
            if q.corners.iter().any(|p| !p.is_finite()) {
                out.push(Violation::NonFiniteCoordinate { cell: i });
                continue;
            }
            if q.corners.iter().any(|p| p.x < 0.0 || p.x > w || p.y < 0.0 || p.y > h) {
                out.push(Violation::OutOfBounds { cell: i });
            }
            let area2 = q.signed_area();
            if area2 == 0.0 {
                out.push(Violation::DegenerateQuad { cell: i });
            } else if area2 < 0.0 {
                out.push(Violation::NotClockwise { cell: i });
            }
            if !q.is_convex() {
                out.push(Violation::NonConvex { cell: i });
            }
            let l = &cell.logical;
            if l.row_end < l.row_start || l.col_end < l.col_start {
                out.push(Violation::InvalidLogicalRange { cell: i });
            }
        }
        for a in 0..self.cells.len() {
            for b in (a + 1)..self.cells.len() {
                let (la, lb) = (self.cells[a].logical, self.cells[b].logical);
                if la == lb {
                    out.push(Violation::DuplicateLogical { a, b });
                } else if la.intersects(&lb) {
                    out.push(Violation::LogicalOverlap { a, b });
                }
            }
        }
        out
    }

    /// Validates and wraps violations into an error.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidAnnotation(violations))
        }
    }

    /// Parses the canonical JSON schema, normalizing quad corner order.
    pub fn from_json(json: &str) -> Result<TableAnnotation> {
        let wire: AnnotationWire = serde_json::from_str(json)?;
        let cells = wire
            .cells
            .iter()
            .map(|c| Cell {
                quad: Quad::from_flat(&c.quad).normalized(),
                logical: LogicalLoc::new(c.logical[0], c.logical[1], c.logical[2], c.logical[3]),
            })
            .collect();
        Ok(TableAnnotation::new(cells, wire.image_width, wire.image_height))
    }

    /// Serializes to the canonical JSON schema (pretty-printed, stable order).
    pub fn to_json(&self) -> String {
        let wire = AnnotationWire {
            image_width: self.image_width,
            image_height: self.image_height,
            cells: self
                .cells
                .iter()
                .map(|c| CellWire {
                    quad: c.quad.to_flat(),
                    logical: [
                        c.logical.row_start,
                        c.logical.row_end,
                        c.logical.col_start,
                        c.logical.col_end,
                    ],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&wire).expect("annotation serialization cannot fail")
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<TableAnnotation> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Format(format!("cannot read annotation {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        crate::bundle::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;

    fn rect_cell(x0: f64, y0: f64, x1: f64, y1: f64, l: LogicalLoc) -> Cell {
        Cell {
            quad: Quad::from_flat(&[x0, y0, x1, y0, x1, y1, x0, y1]),
            logical: l,
        }
    }

    #[test]
    fn valid_two_cell_table_passes() {
        let ann = TableAnnotation::new(
            vec![
                rect_cell(0.0, 0.0, 50.0, 30.0, LogicalLoc::new(0, 0, 0, 0)),
                rect_cell(50.0, 0.0, 100.0, 30.0, LogicalLoc::new(0, 0, 1, 1)),
            ],
            100,
            30,
        );
        assert!(ann.validate().is_empty());
    }

    #[test]
    fn out_of_bounds_corner_is_reported_with_cell_index() {
        let ann = TableAnnotation::new(
            vec![rect_cell(0.0, 0.0, 120.0, 30.0, LogicalLoc::new(0, 0, 0, 0))],
            100,
            30,
        );
        assert_eq!(ann.validate(), vec![Violation::OutOfBounds { cell: 0 }]);
    }

    #[test]
    fn overlapping_logical_rectangles_are_reported_pairwise() {
        let ann = TableAnnotation::new(
            vec![
                rect_cell(0.0, 0.0, 50.0, 30.0, LogicalLoc::new(0, 1, 0, 1)),
                rect_cell(50.0, 0.0, 100.0, 30.0, LogicalLoc::new(1, 1, 1, 2)),
            ],
            100,
            30,
        );
        assert_eq!(ann.validate(), vec![Violation::LogicalOverlap { a: 0, b: 1 }]);
    }

    #[test]
    fn inverted_logical_range_is_reported() {
        let ann = TableAnnotation::new(
            vec![rect_cell(0.0, 0.0, 50.0, 30.0, LogicalLoc::new(0, 0, 1, 0))],
            100,
            30,
        );
        assert_eq!(ann.validate(), vec![Violation::InvalidLogicalRange { cell: 0 }]);
    }

    #[test]
    fn json_round_trip_preserves_annotation() {
        let ann = TableAnnotation::new(
            vec![
                rect_cell(0.0, 0.0, 50.5, 30.25, LogicalLoc::new(0, 0, 0, 0)),
                rect_cell(50.5, 0.0, 100.0, 30.25, LogicalLoc::new(0, 0, 1, 1)),
            ],
            100,
            31,
        );
        let back = TableAnnotation::from_json(&ann.to_json()).unwrap();
        assert_eq!(back, ann);
    }

    #[test]
    fn ingestion_normalizes_counter_clockwise_quads() {
        let json = r#"{
            "image_width": 10, "image_height": 10,
            "cells": [{ "quad": [0,0, 0,5, 5,5, 5,0], "logical": [0,0,0,0] }]
        }"#;
        let ann = TableAnnotation::from_json(json).unwrap();
        assert!(ann.cells[0].quad.is_clockwise());
        assert_eq!(ann.cells[0].quad.corners[0], Point2::new(0.0, 0.0));
        assert!(ann.validate().is_empty());
    }
}
