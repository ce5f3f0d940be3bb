//! File formats: frame bundles, finalized maps, PLY point clouds and raw
//! embedding vectors.
//!
//! All binary payloads are little-endian regardless of host.

pub mod bundle;
pub mod map;
pub mod ply;
pub mod vector;

pub use bundle::{list_frames, read_frame_bundle, resolve_frames_root, write_frame_bundle, FrameBundleManifest};
pub use map::{read_map, read_map_document, write_map, MapDocument};
pub use ply::{export_ply, Coloring, VertexTable};
pub use vector::{read_embedding, read_embeddings, write_embeddings};
