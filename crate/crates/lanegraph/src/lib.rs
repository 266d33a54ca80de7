//! Toolkit for turning lane-probability rasters into evaluated lane graphs.
//!
//! The pipeline has three stages:
//!
//! 1. **Refinement** ([`diffusion`]): a probability mask is refined by
//!    deterministic conditional DDIM sampling under a sigmoid variance
//!    schedule, with configurable starting-latent conditioning (direct,
//!    added Gaussian noise, or a number of forward diffusion steps).
//! 2. **Extraction** ([`skeleton`]): the refined mask is thresholded,
//!    thinned to a one-pixel skeleton, traced into a graph, pruned, and
//!    simplified with Douglas–Peucker.
//! 3. **Evaluation** ([`metrics`]): the predicted graph is scored against
//!    ground truth with GEO (radius-bounded one-to-one node matching) and
//!    TOPO (shortest-path subgraph) precision/recall/F1.
//!
//! [`synth`] provides a deterministic scene generator so the whole pipeline
//! is testable at desk scale without external data, and [`raster`] holds the
//! grid types plus sliding-window planning/stitching used for large inputs.

pub mod diffusion;
pub mod graph;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod skeleton;
pub mod synth;

pub use graph::{LaneGraph, Point2};
pub use raster::{BinaryMask, DirectionMap, GrayRaster};
