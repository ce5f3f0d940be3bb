//! On-disk frame bundles.
//!
//! ```text
//! <root>/<frame_index>/manifest.json
//! <root>/<frame_index>/depth.u16   u16 LE, millimeters, row-major, 0 = invalid
//! <root>/<frame_index>/mask.u16    u16 LE local IDs, row-major, 0 = unlabeled
//! <root>/<frame_index>/emb.f32     f32 LE, (instances + 1) x embedding_dim
//! ```
//!
//! Embedding offsets in the manifest count whole vectors, not floats.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scene::{
    is_valid_depth, validate_frame_bundle, BBox2, CameraIntrinsics, DepthImage, Embedding, FrameBundle,
    InstanceMask, InstanceRecord, LocalId, Pose,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEPTH_FILE: &str = "depth.u16";
pub const MASK_FILE: &str = "mask.u16";
pub const EMBEDDINGS_FILE: &str = "emb.f32";

/// Largest depth representable in the millimeter encoding.
pub const MAX_DEPTH_M: f64 = u16::MAX as f64 / 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub local_id: LocalId,
    pub name: String,
    pub caption: String,
    pub pred_score: f64,
    pub bbox: [f64; 4],
    pub embedding_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBundleManifest {
    pub frame_index: u64,
    pub intrinsics: CameraIntrinsics,
    pub pose: Vec<f64>,
    pub depth_file: String,
    pub mask_file: String,
    pub embeddings_file: String,
    pub embedding_dim: usize,
    pub instances: Vec<InstanceManifest>,
    pub global_embedding_offset: usize,
}

pub fn frame_dir(root: &Path, frame_index: u64) -> PathBuf {
    root.join(frame_index.to_string())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_owned(), source })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json { path: path.to_owned(), source })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect()
}

pub(crate) fn encode_f32(values: impl IntoIterator<Item = f64>, out: &mut Vec<u8>) {
    for v in values {
        out.extend((v as f32).to_le_bytes());
    }
}

fn decode_u16(bytes: &[u8]) -> Vec<u16> {
    bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
}

fn expect_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(())
}

/// Frame indices present under `root`, ascending.
pub fn list_frames(root: &Path) -> Result<Vec<u64>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let Some(index) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        if entry.path().join(MANIFEST_FILE).is_file() {
            out.push(index);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Accept either a frames root or a directory that contains `frames/`.
pub fn resolve_frames_root(dir: &Path) -> PathBuf {
    let nested = dir.join("frames");
    if nested.is_dir() {
        nested
    } else {
        dir.to_owned()
    }
}

pub fn read_frame_bundle(root: &Path, frame_index: u64) -> Result<FrameBundle> {
    let dir = frame_dir(root, frame_index);
    let manifest: FrameBundleManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.frame_index != frame_index {
        return Err(Error::Format(format!(
            "{} declares frame {} but lives under index {frame_index}",
            dir.display(),
            manifest.frame_index
        )));
    }
    let k = CameraIntrinsics::new(
        manifest.intrinsics.fx,
        manifest.intrinsics.fy,
        manifest.intrinsics.cx,
        manifest.intrinsics.cy,
        manifest.intrinsics.width,
        manifest.intrinsics.height,
    )?;
    let pose = Pose::from_row_major(&manifest.pose)?;
    let (w, h) = (k.width, k.height);

    let depth_path = dir.join(&manifest.depth_file);
    let raw = read_bytes(&depth_path)?;
    expect_len(&depth_path, &raw, w * h * 2)?;
    let depth = DepthImage::from_vec(w, h, decode_u16(&raw).into_iter().map(|mm| mm as f64 / 1000.0).collect())?;

    let mask_path = dir.join(&manifest.mask_file);
    let raw = read_bytes(&mask_path)?;
    expect_len(&mask_path, &raw, w * h * 2)?;
    let mask = InstanceMask::from_vec(w, h, decode_u16(&raw))?;

    let emb_path = dir.join(&manifest.embeddings_file);
    let raw = read_bytes(&emb_path)?;
    let dim = manifest.embedding_dim;
    if dim == 0 || raw.len() % (dim * 4) != 0 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, not a whole number of {dim}-dimensional f32 vectors",
            emb_path.display(),
            raw.len()
        )));
    }
    let floats = decode_f32(&raw);
    let rows = floats.len() / dim;
    let row = |offset: usize| -> Result<Embedding> {
        if offset >= rows {
            return Err(Error::OffsetOutOfBounds { offset, len: rows });
        }
        Ok(Embedding::new(floats[offset * dim..(offset + 1) * dim].to_vec()))
    };

    let instances = manifest
        .instances
        .iter()
        .map(|m| {
            Ok(InstanceRecord {
                local_id: m.local_id,
                name: m.name.clone(),
                caption: m.caption.clone(),
                pred_score: m.pred_score,
                bbox_2d: BBox2 { x0: m.bbox[0], y0: m.bbox[1], x1: m.bbox[2], y1: m.bbox[3] },
                embedding: row(m.embedding_offset)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let bundle = FrameBundle {
        frame_index,
        depth,
        mask,
        pose,
        intrinsics: k,
        instances,
        global_embedding: row(manifest.global_embedding_offset)?,
    };
    if let Some(v) = validate_frame_bundle(&bundle).first() {
        return Err(Error::Format(format!("frame {frame_index}: {v}")));
    }
    Ok(bundle)
}

/// Write `bundle` under `root/<frame_index>/`. Depth is stored at millimeter
/// resolution; invalid depth is written as 0.
pub fn write_frame_bundle(bundle: &FrameBundle, root: &Path) -> Result<()> {
    if let Some(v) = validate_frame_bundle(bundle).first() {
        return Err(Error::InvalidInput(format!("frame {}: {v}", bundle.frame_index)));
    }
    let dir = frame_dir(root, bundle.frame_index);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut depth = Vec::with_capacity(bundle.depth.as_slice().len() * 2);
    for &d in bundle.depth.as_slice() {
        let mm = if is_valid_depth(d) {
            if d > MAX_DEPTH_M + 0.0005 {
                return Err(Error::InvalidInput(format!("depth {d} m exceeds the u16 millimeter range")));
            }
            (d * 1000.0).round() as u16
        } else {
            0
        };
        depth.extend(mm.to_le_bytes());
    }
    write_bytes(&dir.join(DEPTH_FILE), &depth)?;

    let mask: Vec<u8> = bundle.mask.as_slice().iter().flat_map(|id| id.to_le_bytes()).collect();
    write_bytes(&dir.join(MASK_FILE), &mask)?;

    let dim = bundle.global_embedding.dim();
    let mut emb = Vec::with_capacity((bundle.instances.len() + 1) * dim * 4);
    for rec in &bundle.instances {
        encode_f32(rec.embedding.as_slice().iter().copied(), &mut emb);
    }
    encode_f32(bundle.global_embedding.as_slice().iter().copied(), &mut emb);
    write_bytes(&dir.join(EMBEDDINGS_FILE), &emb)?;

    let manifest = FrameBundleManifest {
        frame_index: bundle.frame_index,
        intrinsics: bundle.intrinsics,
        pose: bundle.pose.to_row_major().to_vec(),
        depth_file: DEPTH_FILE.into(),
        mask_file: MASK_FILE.into(),
        embeddings_file: EMBEDDINGS_FILE.into(),
        embedding_dim: dim,
        instances: bundle
            .instances
            .iter()
            .enumerate()
            .map(|(i, r)| InstanceManifest {
                local_id: r.local_id,
                name: r.name.clone(),
                caption: r.caption.clone(),
                pred_score: r.pred_score,
                bbox: [r.bbox_2d.x0, r.bbox_2d.y0, r.bbox_2d.x1, r.bbox_2d.y1],
                embedding_offset: i,
            })
            .collect(),
        global_embedding_offset: bundle.instances.len(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::InstanceRecord;

    fn bundle(n_instances: usize, dim: usize) -> FrameBundle {
        let k = CameraIntrinsics::new(50.0, 50.0, 3.5, 2.5, 8, 6).unwrap();
        let mut mask = InstanceMask::filled(8, 6, 0);
        let mut depth = DepthImage::filled(8, 6, 0.0);
        let mut instances = Vec::new();
        for i in 0..n_instances {
            let id = (i + 1) as LocalId;
            mask.set(i, 1, id);
            instances.push(InstanceRecord {
                local_id: id,
                name: format!("obj{i}"),
                caption: format!("an obj{i} in a scene"),
                pred_score: 0.5,
                bbox_2d: BBox2 { x0: i as f64, y0: 1.0, x1: i as f64 + 1.0, y1: 2.0 },
                embedding: Embedding::new((0..dim).map(|d| (d + i) as f64 * 0.25).collect()),
            });
        }
        depth.set(0, 0, 1.5);
        depth.set(1, 1, 65.535);
        FrameBundle {
            frame_index: 12,
            depth,
            mask,
            pose: Pose::identity(),
            intrinsics: k,
            instances,
            global_embedding: Embedding::new(vec![1.0; dim]),
        }
    }

    #[test]
    fn round_trip_and_embedding_file_size() {
        let tmp = tempfile::tempdir().unwrap();
        let b = bundle(2, 4);
        write_frame_bundle(&b, tmp.path()).unwrap();
        let emb = fs::metadata(tmp.path().join("12").join(EMBEDDINGS_FILE)).unwrap();
        assert_eq!(emb.len(), (2 + 1) * 4 * 4);
        assert_eq!(read_frame_bundle(tmp.path(), 12).unwrap(), b);
        assert_eq!(list_frames(tmp.path()).unwrap(), vec![12]);
    }

    #[test]
    fn empty_instance_list_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let b = bundle(0, 3);
        write_frame_bundle(&b, tmp.path()).unwrap();
        let m: FrameBundleManifest = read_json(&tmp.path().join("12").join(MANIFEST_FILE)).unwrap();
        assert!(m.instances.is_empty());
        assert_eq!(read_frame_bundle(tmp.path(), 12).unwrap(), b);
    }

    #[test]
    fn millimeter_decoding() {
        let tmp = tempfile::tempdir().unwrap();
        let mut b = bundle(1, 2);
        b.depth.set(3, 3, 1.5004);
        write_frame_bundle(&b, tmp.path()).unwrap();
        let raw = fs::read(tmp.path().join("12").join(DEPTH_FILE)).unwrap();
        let at = (3 * 8 + 3) * 2;
        assert_eq!(u16::from_le_bytes([raw[at], raw[at + 1]]), 1500);
        assert_eq!(read_frame_bundle(tmp.path(), 12).unwrap().depth.get(3, 3), 1.5);
    }

    #[test]
    fn missing_depth_file() {
        let tmp = tempfile::tempdir().unwrap();
        write_frame_bundle(&bundle(1, 2), tmp.path()).unwrap();
        fs::remove_file(tmp.path().join("12").join(DEPTH_FILE)).unwrap();
        let err = read_frame_bundle(tmp.path(), 12).unwrap_err();
        assert!(matches!(err, Error::MissingFile(ref p) if p.ends_with(DEPTH_FILE)), "{err}");
    }

    #[test]
    fn truncated_mask_and_bad_offset() {
        let tmp = tempfile::tempdir().unwrap();
        write_frame_bundle(&bundle(1, 2), tmp.path()).unwrap();
        let dir = tmp.path().join("12");
        let mask = fs::read(dir.join(MASK_FILE)).unwrap();
        fs::write(dir.join(MASK_FILE), &mask[2..]).unwrap();
        assert!(matches!(read_frame_bundle(tmp.path(), 12), Err(Error::Format(_))));
        fs::write(dir.join(MASK_FILE), &mask).unwrap();

        let mut m: FrameBundleManifest = read_json(&dir.join(MANIFEST_FILE)).unwrap();
        m.instances[0].embedding_offset = 9;
        write_json(&dir.join(MANIFEST_FILE), &m).unwrap();
        assert!(matches!(read_frame_bundle(tmp.path(), 12), Err(Error::OffsetOutOfBounds { offset: 9, len: 2 })));
    }

    #[test]
    fn out_of_range_depth_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut b = bundle(1, 2);
        b.depth.set(2, 2, 70.0);
        assert!(write_frame_bundle(&b, tmp.path()).is_err());
    }
}
