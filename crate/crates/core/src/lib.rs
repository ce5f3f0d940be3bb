//! Incremental instance-level 3D scene mapping.
//!
//! Per-image instance detections (masks, embeddings, names, captions) are
//! back-projected into a shared world-frame point cloud. Each new segment is
//! either merged into an existing 3D instance or issued a fresh global ID,
//! based on a bounded nearest-neighbour overlap search against the part of
//! the scene the frame actually sees. Once all frames are integrated, the map
//! is finalized into per-instance records (points, label, caption, fused
//! embedding, bounding box, centroid) that support open-vocabulary retrieval,
//! evaluation against ground truth and LLM prompt export.
//!
//! Module map:
//!
//! - [`scene`]: shared domain types and invariant checks
//! - [`spatial`]: kd-tree, voxel keys and the coarse grid index
//! - [`io`]: frame bundles, maps and PLY on disk
//! - [`projection`]: frame sampling, mask padding, filtering, back-projection
//! - [`tracker`]: overlap search, ID replacement and the global ID table
//! - [`fusion`]: multi-scale and multi-view embedding fusion
//! - [`postprocess`]: clustering, splitting, label selection, map finalization
//! - [`retrieval`]: cosine retrieval, simplified map and prompt construction
//! - [`metrics`]: mAcc, F-mIoU, AP and partition agreement
//! - [`synth`]: deterministic synthetic scenes with exact ground truth
//! - [`pipeline`]: the end-to-end build used by the command line

pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod projection;
pub mod retrieval;
pub mod scene;
pub mod spatial;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
