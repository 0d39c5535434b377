//! Table structure recognition pipeline toolkit.
//!
//! The crate covers the non-learned parts of a keypoint-based table
//! recognizer: everything before and after the network itself.
//!
//! Pipeline stages:
//! 1. [`annotation`] — cell quads plus logical grid coordinates, JSON I/O and
//!    validation.
//! 2. [`interp`] — dense row/column index interpolation maps rasterized from
//!    cell polygons.
//! 3. [`targets`] — training targets on the low-resolution output grid:
//!    keypoint heatmaps, sub-pixel offsets, center/corner vector fields,
//!    spans and the interpolation maps.
//! 4. [`losses`] — the full training loss with analytic gradients, usable for
//!    gradient checking and regression-testing a training port.
//! 5. [`decoder`] — raw output tensors to a structured table, one stage at a
//!    time (peaks, regression, corner alignment, logical assignment).
//! 6. [`gridify`] — converts free-form cell annotations into grid form by
//!    fitting divider lines.
//! 7. [`metrics`] — physical and logical evaluation: IoU matching, P/R/F1,
//!    adjacency relations, TEDS and the combined F-beta score.
//! 8. [`synth`] — deterministic synthetic table generator and a perfect
//!    "oracle" tensor renderer for end-to-end round trips.
//!
//! All operations are pure: the same inputs produce bitwise-identical
//! outputs, regardless of platform or thread count.

pub mod annotation;
pub mod bundle;
pub mod config;
pub mod decoder;
pub mod geom;
pub mod gridify;
pub mod interp;
pub mod losses;
pub mod metrics;
pub mod raster;
pub mod reference;
pub mod synth;
pub mod targets;

mod error;

pub use error::{Error, Result};
pub use annotation::{Cell, LogicalLoc, TableAnnotation, Violation};
pub use config::LossConfig;
pub use geom::{Point2, Quad};
pub use raster::RasterMap;
