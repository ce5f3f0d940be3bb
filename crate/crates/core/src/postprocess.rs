//! Map finalization: per-ID point gathering, DBSCAN denoising and splitting,
//! label selection and top-m multi-view embedding fusion.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::Point3;

use crate::scene::{
    Embedding, FrameBundle, FusionConfig, GlobalId, GlobalIdTable, InstanceMap, LocalId, MapInstance, Observation,
    ObservationKey, ScenePointCloud,
};
use crate::spatial::KdTree;
use crate::{Error, Result};

/// DBSCAN output over one point set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterResult {
    /// Clusters in discovery order, each sorted ascending.
    pub clusters: Vec<Vec<usize>>,
    /// Points in no cluster, ascending.
    pub noise: Vec<usize>,
    /// Whether each point has at least `min_points` neighbours (itself included).
    pub core: Vec<bool>,
}

const UNVISITED: usize = usize::MAX;
const NOISE: usize = usize::MAX - 1;

/// Density-based clustering with Euclidean distance.
///
/// Neighbourhoods are closed balls of radius `eps` and include the point
/// itself. Points are seeded in index order, and a border point reachable
/// from several clusters joins the one that reaches it first.
pub fn dbscan(points: &[Point3<f64>], eps: f64, min_points: usize) -> ClusterResult {
    let n = points.len();
    let tree = KdTree::new(points);
    let mut label = vec![UNVISITED; n];
    let mut core = vec![false; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for seed in 0..n {
        if label[seed] != UNVISITED {
            continue;
        }
        let nb = tree.within(&points[seed], eps);
        if nb.len() < min_points {
            label[seed] = NOISE;
            continue;
        }
        let c = clusters.len();
        let mut members = vec![seed];
        label[seed] = c;
        core[seed] = true;
        let mut queue: VecDeque<usize> = nb.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            match label[j] {
                NOISE => {
                    label[j] = c;
                    members.push(j);
                }
                UNVISITED => {
                    label[j] = c;
                    members.push(j);
                    let nbj = tree.within(&points[j], eps);
                    if nbj.len() >= min_points {
                        core[j] = true;
                        queue.extend(nbj.into_iter().filter(|&k| label[k] == UNVISITED || label[k] == NOISE));
                    }
                }
                _ => {}
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    // border points reached before being seeded are never tested for core status
    for i in 0..n {
        if !core[i] && label[i] != NOISE {
            core[i] = tree.within(&points[i], eps).len() >= min_points;
        }
    }
    let noise = (0..n).filter(|&i| label[i] == NOISE).collect();
    ClusterResult { clusters, noise, core }
}

/// Clusters kept after splitting, largest first.
///
/// Clusters are ranked by size (ties keep discovery order) and every cluster
/// of at least `fraction` times the largest survives. The first keeps the
/// parent ID; the rest become new instances.
pub fn split_instance(clusters: &[Vec<usize>], fraction: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| clusters[b].len().cmp(&clusters[a].len()).then(a.cmp(&b)));
    let Some(&largest) = order.first() else {
        return Vec::new();
    };
    let cutoff = fraction * clusters[largest].len() as f64;
    order
        .into_iter()
        .filter(|&c| clusters[c].len() as f64 >= cutoff)
        .map(|c| clusters[c].clone())
        .collect()
}

/// One labeled observation considered for naming.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelCandidate {
    pub frame_index: u64,
    pub name: String,
    pub caption: String,
    pub pred_score: f64,
}

/// The candidate with the highest score; ties go to the earliest frame, then
/// to list order.
pub fn select_label(candidates: &[LabelCandidate]) -> Result<&LabelCandidate> {
    candidates
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            b.pred_score.total_cmp(&a.pred_score).then(a.frame_index.cmp(&b.frame_index)).then(i.cmp(j))
        })
        .map(|(_, c)| c)
        .ok_or(Error::Empty("label candidates"))
}

/// The `min(m, len)` highest-scoring observations, score descending, ties by
/// frame index then local ID.
pub fn top_m_observations(observations: &[Observation], m: usize) -> Vec<Observation> {
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| {
        b.pred_score
            .total_cmp(&a.pred_score)
            .then(a.frame_index.cmp(&b.frame_index))
            .then(a.local_id.cmp(&b.local_id))
    });
    sorted.truncate(m);
    sorted
}

/// Per-detection metadata kept after a frame has been integrated.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMeta {
    pub name: String,
    pub caption: String,
    pub pred_score: f64,
    /// Multi-scale fused embedding of the detection.
    pub embedding: Embedding,
}

/// Detection metadata and global embeddings of every integrated frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameCatalog {
    detections: BTreeMap<ObservationKey, DetectionMeta>,
    globals: BTreeMap<u64, Embedding>,
    dim: Option<usize>,
}

impl FrameCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a frame's detections. Re-adding a frame overwrites its entries.
    pub fn add_frame(&mut self, bundle: &FrameBundle) -> Result<()> {
        let dim = bundle.global_embedding.dim();
        if let Some(expected) = self.dim {
            if dim != expected {
                return Err(Error::DimensionMismatch { expected, found: dim });
            }
        }
        self.dim = Some(dim);
        self.globals.insert(bundle.frame_index, bundle.global_embedding.clone());
        for r in &bundle.instances {
            if r.embedding.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.embedding.dim() });
            }
            self.detections.insert(
                ObservationKey { frame_index: bundle.frame_index, local_id: r.local_id },
                DetectionMeta {
                    name: r.name.clone(),
                    caption: r.caption.clone(),
                    pred_score: r.pred_score,
                    embedding: r.embedding.clone(),
                },
            );
        }
        Ok(())
    }

    pub fn detection(&self, frame_index: u64, local_id: LocalId) -> Option<&DetectionMeta> {
        self.detections.get(&ObservationKey { frame_index, local_id })
    }

    pub fn global(&self, frame_index: u64) -> Option<&Embedding> {
        self.globals.get(&frame_index)
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

fn round_point(p: &Point3<f64>) -> Point3<f64> {
    p.map(|c| c as f32 as f64)
}

/// Turn the integrated scene into the final instance map.
///
/// IDs are processed in ascending order; IDs created by splitting are issued
/// consecutively from the scene's next free ID. Points and embeddings are
/// rounded to `f32`, the storage precision.
pub fn finalize_map(
    scene: &ScenePointCloud,
    table: &GlobalIdTable,
    catalog: &FrameCatalog,
    config: &FusionConfig,
) -> Result<InstanceMap> {
    table.check_consistency(scene)?;
    let mut per_id: BTreeMap<GlobalId, Vec<Point3<f64>>> = BTreeMap::new();
    for p in scene.points() {
        per_id.entry(p.instance_id).or_default().push(round_point(&p.position));
    }
    let dim = catalog.embedding_dim().unwrap_or(0);
    let mut next_id = scene.next_global_id();
    let mut instances = Vec::new();
    for (id, points) in per_id {
        let observations = gather_observations(id, table, catalog)?;
        let mut clusters = dbscan(&points, config.dbscan_eps, config.dbscan_min_points).clusters;
        // clusters stripped of border points by earlier clusters count as noise
        clusters.retain(|c| c.len() >= config.dbscan_min_points);
        let kept = split_instance(&clusters, config.split_fraction);
        if kept.is_empty() {
            log::debug!("instance {id}: all {} points are noise, dropped", points.len());
            continue;
        }
        let candidates: Vec<LabelCandidate> = observations
            .iter()
            .map(|o| {
                let d = &catalog.detections[&ObservationKey { frame_index: o.frame_index, local_id: o.local_id }];
                LabelCandidate {
                    frame_index: o.frame_index,
                    name: d.name.clone(),
                    caption: d.caption.clone(),
                    pred_score: d.pred_score,
                }
            })
            .collect();
        let label = select_label(&candidates)?;
        let embedding = fuse_observations(&observations, catalog, config)?;
        for (rank, cluster) in kept.iter().enumerate() {
            let global_id = if rank == 0 {
                id
            } else {
                next_id += 1;
                next_id - 1
            };
            let pts: Vec<Point3<f64>> = cluster.iter().map(|&i| points[i]).collect();
            let (bbox, centroid) = MapInstance::bounds_and_centroid(&pts).ok_or(Error::Empty("cluster"))?;
            instances.push(MapInstance {
                global_id,
                points: pts,
                name: label.name.clone(),
                refined_name: None,
                caption: label.caption.clone(),
                embedding: embedding.clone(),
                bbox,
                centroid,
                observations: observations.clone(),
            });
        }
    }
    instances.sort_by_key(|i| i.global_id);
    Ok(InstanceMap { config: config.clone(), embedding_dim: dim, scene_points: scene.len(), instances })
}

/// Distinct observations of `id` in first-recorded order, with scores.
fn gather_observations(id: GlobalId, table: &GlobalIdTable, catalog: &FrameCatalog) -> Result<Vec<Observation>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for key in table.get(id).unwrap_or_default() {
        if !seen.insert(*key) {
            continue;
        }
        let d = catalog.detections.get(key).ok_or_else(|| {
            Error::Integrity(format!(
                "instance {id}: no metadata for frame {} local ID {}",
                key.frame_index, key.local_id
            ))
        })?;
        out.push(Observation { frame_index: key.frame_index, local_id: key.local_id, pred_score: d.pred_score });
    }
    if out.is_empty() {
        return Err(Error::Integrity(format!("instance {id} has no observations")));
    }
    Ok(out)
}

/// Multi-view embedding from the top-m observations under the configured scheme.
fn fuse_observations(observations: &[Observation], catalog: &FrameCatalog, config: &FusionConfig) -> Result<Embedding> {
    let top = top_m_observations(observations, config.top_images);
    let mut views = Vec::with_capacity(top.len());
    let mut globals = Vec::with_capacity(top.len());
    for o in &top {
        let key = ObservationKey { frame_index: o.frame_index, local_id: o.local_id };
        views.push(catalog.detections[&key].embedding.clone());
        globals.push(
            catalog
                .global(o.frame_index)
                .ok_or_else(|| Error::Integrity(format!("no global embedding for frame {}", o.frame_index)))?
                .clone(),
        );
    }
    Ok(config.scheme.fuse_views(&views, &globals)?.round_to_f32())
}
