//! Roadside tree counting from per-frame trunk detections and a GPS track.
//!
//! The pipeline runs in stages that communicate through plain files:
//!
//! 1. [`ingest`] reads a line-delimited detection stream and a GPX track.
//! 2. [`counting`] runs the counting-range crossing algorithm with IoU
//!    suppression and geo-tags each counted tree.
//! 3. [`classify`] splits the route into segments, rates each one in trees
//!    per kilometre and assigns a density category.
//! 4. [`kdr`] rasterises a compact-support kernel density estimate of the
//!    counted trees and ranks it into a density map.
//! 5. [`metrics`] scores predicted counts against ground truth.
//!
//! [`simulate`] generates synthetic scenes with known ground truth in the
//! same file formats, so every stage can be checked end to end.

pub mod classify;
pub mod config;
pub mod counting;
pub mod geo;
pub mod ingest;
pub mod kdr;
pub mod metrics;
pub mod simulate;

pub use classify::{ClassifiedSegment, DensityCategory};
pub use config::PipelineConfig;
pub use counting::{CountReport, CountingConfig, CountingRange, CountingState, TreeEvent};
pub use geo::{GeoPoint, LocalFrame, RouteSegment};
pub use ingest::{BBox, DetectionStream, FrameDetections, ImageGeometry, TrackLog, TrackPoint};
pub use kdr::{DensityGrid, GridKind, KdrConfig};
pub use metrics::{EvalReport, RouteEval};
pub use simulate::{NoiseSpec, SceneSpec, TreeSpec};
