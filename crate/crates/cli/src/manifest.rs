//! Run manifest and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use opensu::pipeline::BuildStats;
use opensu::scene::FusionConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    /// Reading, padding, filtering and back-projecting frames.
    pub prepare_seconds: f64,
    pub integrate_seconds: f64,
    pub finalize_seconds: f64,
    pub write_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: FusionConfig,
    pub frames_root: PathBuf,
    pub frames_available: usize,
    pub frames_processed: usize,
    pub frame_indices: Vec<u64>,
    /// SHA-256 over every file of every processed frame.
    pub input_sha256: String,
    pub threads: usize,
    pub stats: BuildStats,
    pub timings: StageTimings,
    pub outputs: Vec<PathBuf>,
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Digest of a frame directory: file names and contents in name order.
pub fn hash_frame_dir(dir: &Path) -> Result<[u8; 32]> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        let bytes = fs::read(dir.join(&name)).with_context(|| format!("reading {}", dir.join(&name).display()))?;
        h.update(name.as_encoded_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().into())
}

/// Combine per-frame digests in processing order.
pub fn combine_digests<'a>(frames: impl IntoIterator<Item = (u64, &'a [u8; 32])>) -> String {
    let mut h = Sha256::new();
    for (index, digest) in frames {
        h.update(index.to_le_bytes());
        h.update(digest);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
