//! Finalized map storage: `map.json` plus two f32 sidecars.
//!
//! `map_points.f32` holds every instance's points (x, y, z) back to back in
//! document order; `map_emb.f32` holds one `embedding_dim` vector per
//! instance. Point coordinates and embeddings are exact when they are
//! `f32`-representable, which [`crate::postprocess::finalize_map`] guarantees.

use std::fs;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::bundle::{decode_f32, encode_f32, read_json, write_json};
use crate::scene::{Embedding, FusionConfig, GlobalId, InstanceMap, MapInstance, Observation};
use crate::spatial::Aabb;
use crate::{Error, Result};

pub const MAP_FILE: &str = "map.json";
pub const POINTS_FILE: &str = "map_points.f32";
pub const EMBEDDINGS_FILE: &str = "map_emb.f32";
pub const MAP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapInstanceRecord {
    pub global_id: GlobalId,
    pub name: String,
    pub refined_name: Option<String>,
    pub caption: String,
    pub centroid: [f64; 3],
    pub bbox: [[f64; 3]; 2],
    pub point_count: usize,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub version: u32,
    pub config: FusionConfig,
    pub embedding_dim: usize,
    pub scene_points: usize,
    pub points_file: String,
    pub embeddings_file: String,
    pub instances: Vec<MapInstanceRecord>,
}

fn arr(p: &Point3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Write `map` into directory `dir`, creating it if needed.
pub fn write_map(map: &InstanceMap, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut points = Vec::new();
    let mut embeddings = Vec::new();
    let mut records = Vec::with_capacity(map.instances.len());
    for inst in &map.instances {
        if inst.embedding.dim() != map.embedding_dim {
            return Err(Error::DimensionMismatch { expected: map.embedding_dim, found: inst.embedding.dim() });
        }
        encode_f32(inst.points.iter().flat_map(|p| [p.x, p.y, p.z]), &mut points);
        encode_f32(inst.embedding.as_slice().iter().copied(), &mut embeddings);
        records.push(MapInstanceRecord {
            global_id: inst.global_id,
            name: inst.name.clone(),
            refined_name: inst.refined_name.clone(),
            caption: inst.caption.clone(),
            centroid: arr(&inst.centroid),
            bbox: [arr(&inst.bbox.min), arr(&inst.bbox.max)],
            point_count: inst.points.len(),
            observations: inst.observations.clone(),
        });
    }
    let doc = MapDocument {
        version: MAP_VERSION,
        config: map.config.clone(),
        embedding_dim: map.embedding_dim,
        scene_points: map.scene_points,
        points_file: POINTS_FILE.into(),
        embeddings_file: EMBEDDINGS_FILE.into(),
        instances: records,
    };
    let path = dir.join(POINTS_FILE);
    fs::write(&path, &points).map_err(|e| Error::io(path, e))?;
    let path = dir.join(EMBEDDINGS_FILE);
    fs::write(&path, &embeddings).map_err(|e| Error::io(path, e))?;
    write_json(&dir.join(MAP_FILE), &doc)
}

pub fn read_map_document(dir: &Path) -> Result<MapDocument> {
    let doc: MapDocument = read_json(&dir.join(MAP_FILE))?;
    if doc.version != MAP_VERSION {
        return Err(Error::VersionMismatch(doc.version));
    }
    Ok(doc)
}

pub fn read_map(dir: &Path) -> Result<InstanceMap> {
    let doc = read_map_document(dir)?;
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map(|b| decode_f32(&b)).map_err(|e| Error::io(path, e))
    };
    let points = read(&doc.points_file)?;
    let embeddings = read(&doc.embeddings_file)?;
    let total_points: usize = doc.instances.iter().map(|r| r.point_count).sum();
    if points.len() != total_points * 3 {
        return Err(Error::Format(format!(
            "{} holds {} floats, instances declare {total_points} points",
            doc.points_file,
            points.len()
        )));
    }
    let dim = doc.embedding_dim;
    if embeddings.len() != doc.instances.len() * dim {
        return Err(Error::Format(format!(
            "{} holds {} floats, expected {} instances x {dim}",
            doc.embeddings_file,
            embeddings.len(),
            doc.instances.len()
        )));
    }
    let mut offset = 0;
    let instances = doc
        .instances
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let pts: Vec<Point3<f64>> = points[offset * 3..(offset + r.point_count) * 3]
                .chunks_exact(3)
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect();
            offset += r.point_count;
            MapInstance {
                global_id: r.global_id,
                points: pts,
                name: r.name,
                refined_name: r.refined_name,
                caption: r.caption,
                embedding: Embedding::new(embeddings[i * dim..(i + 1) * dim].to_vec()),
                bbox: Aabb::new(Point3::from(r.bbox[0]), Point3::from(r.bbox[1])),
                centroid: Point3::from(r.centroid),
                observations: r.observations,
            }
        })
        .collect();
    Ok(InstanceMap { config: doc.config, embedding_dim: dim, scene_points: doc.scene_points, instances })
}
