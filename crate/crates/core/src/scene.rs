//! Core domain types shared by every stage of the mapping pipeline.
//!
//! Nothing in here does I/O. Constructors validate their invariants and the
//! only algorithm is [`validate_frame_bundle`], which reports every violated
//! invariant of an observation instead of failing on the first one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::fusion::FusionScheme;
use crate::spatial::{voxel_key, Aabb, GridIndex, VoxelKey};
use crate::{Error, Result};

/// Global 3D instance identifier. `0` is never issued.
pub type GlobalId = u32;

/// Per-frame mask identifier. `0` marks unlabeled pixels.
pub type LocalId = u16;

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        match k.violations().into_iter().next() {
            Some(v) => Err(Error::InvalidInput(v)),
            None => Ok(k),
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > 0.0 && self.fy > 0.0) {
            out.push(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            out.push(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            out.push(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        out
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame point for pixel centre `(u, v)` at depth `depth`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Pixel coordinates and depth of a camera-frame point.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z)
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    matrix: Matrix4<f64>,
}

impl Pose {
    const ORTHO_TOL: f64 = 1e-6;

    pub fn identity() -> Self {
        Self { matrix: Matrix4::identity() }
    }

    pub fn from_matrix(matrix: Matrix4<f64>) -> Result<Self> {
        let pose = Self { matrix };
        match pose.violation() {
            Some(v) => Err(Error::InvalidInput(v)),
            None => Ok(pose),
        }
    }

    /// Build from 16 numbers in row-major order.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::DimensionMismatch { expected: 16, found: values.len() });
        }
        Self::from_matrix(Matrix4::from_row_slice(values))
    }

    pub fn from_rotation_translation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::from_matrix(m)
    }

    /// Camera at `eye` looking at `target`; camera axes are x right, y down,
    /// z forward. `up` must not be parallel to the viewing direction.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| {
            Error::InvalidInput("look_at: eye and target coincide".into())
        })?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("look_at: up parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::from_rotation_translation(rotation, eye.coords)
    }

    fn violation(&self) -> Option<String> {
        let m = &self.matrix;
        if m.iter().any(|x| !x.is_finite()) {
            return Some("pose has non-finite entries".into());
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Some("pose last row is not (0,0,0,1)".into());
        }
        let r = self.rotation();
        if (r.determinant() - 1.0).abs() >= Self::ORTHO_TOL {
            return Some(format!("rotation determinant {} is not 1", r.determinant()));
        }
        let gram = r.transpose() * r;
        if (gram - Matrix3::identity()).abs().max() >= Self::ORTHO_TOL {
            return Some("rotation block is not orthonormal".into());
        }
        None
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    /// Camera frame to world frame.
    #[inline]
    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        let m = &self.matrix;
        Point3::new(
            m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + m[(0, 3)],
            m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + m[(1, 3)],
            m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + m[(2, 3)],
        )
    }

    /// World frame to camera frame.
    pub fn inverse_transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        let local = self.rotation().transpose() * (p.coords - self.translation());
        Point3::from(local)
    }
}

/// Row-major image-shaped grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, found: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Value at column `u`, row `v`.
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// Depth image in meters; `0` or NaN mean "no measurement".
pub type DepthImage = Grid<f64>;

/// Instance mask of local IDs; `0` is unlabeled.
pub type InstanceMask = Grid<LocalId>;

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Fixed-dimension embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|x| x * alpha).collect())
    }

    /// Round every component to the nearest `f32`, the on-disk precision.
    pub fn round_to_f32(&self) -> Self {
        Self(self.0.iter().map(|&x| x as f32 as f64).collect())
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Pixel rectangle `[x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2 {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox2 {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

/// One detected instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub local_id: LocalId,
    pub name: String,
    pub caption: String,
    pub pred_score: f64,
    pub bbox_2d: BBox2,
    /// Multi-scale fused embedding of this detection.
    pub embedding: Embedding,
}

impl InstanceRecord {
    /// Bounding-box area over image area.
    pub fn area_fraction(&self, intrinsics: &CameraIntrinsics) -> f64 {
        self.bbox_2d.area() / intrinsics.pixel_count() as f64
    }
}

/// Everything needed to integrate one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub frame_index: u64,
    pub depth: DepthImage,
    pub mask: InstanceMask,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub instances: Vec<InstanceRecord>,
    pub global_embedding: Embedding,
}

impl FrameBundle {
    pub fn instance(&self, local_id: LocalId) -> Option<&InstanceRecord> {
        self.instances.iter().find(|r| r.local_id == local_id)
    }

    /// Distinct nonzero IDs present in the mask.
    pub fn mask_ids(&self) -> BTreeSet<LocalId> {
        self.mask.as_slice().iter().copied().filter(|&id| id != 0).collect()
    }
}

/// A violated frame-bundle invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch { what: &'static str, width: usize, height: usize, expected_width: usize, expected_height: usize },
    InvalidIntrinsics(String),
    InvalidPose(String),
    OrphanMaskId(LocalId),
    UnusedInstance(LocalId),
    ReservedLocalId,
    DuplicateLocalId(LocalId),
    ScoreOutOfRange { local_id: LocalId, score: f64 },
    AreaFractionOutOfRange { local_id: LocalId, fraction: f64 },
    EmbeddingDimension { local_id: Option<LocalId>, dim: usize, expected: usize },
    NonFiniteEmbedding(Option<LocalId>),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { what, width, height, expected_width, expected_height } => write!(
                f,
                "dimension mismatch: {what} is {width}x{height}, intrinsics say {expected_width}x{expected_height}"
            ),
            Violation::InvalidIntrinsics(msg) => write!(f, "invalid intrinsics: {msg}"),
            Violation::InvalidPose(msg) => write!(f, "invalid pose: {msg}"),
            Violation::OrphanMaskId(id) => write!(f, "orphan mask ID {id}: no instance record"),
            Violation::UnusedInstance(id) => write!(f, "instance {id} has no mask pixels"),
            Violation::ReservedLocalId => write!(f, "instance record uses reserved local ID 0"),
            Violation::DuplicateLocalId(id) => write!(f, "duplicate instance record for local ID {id}"),
            Violation::ScoreOutOfRange { local_id, score } => {
                write!(f, "instance {local_id}: prediction score {score} outside [0, 1]")
            }
            Violation::AreaFractionOutOfRange { local_id, fraction } => {
                write!(f, "instance {local_id}: area fraction {fraction} outside (0, 1]")
            }
            Violation::EmbeddingDimension { local_id: Some(id), dim, expected } => {
                write!(f, "instance {id}: embedding dimension {dim}, expected {expected}")
            }
            Violation::EmbeddingDimension { local_id: None, dim, expected } => {
                write!(f, "global embedding dimension {dim}, expected {expected}")
            }
            Violation::NonFiniteEmbedding(Some(id)) => write!(f, "instance {id}: non-finite embedding"),
            Violation::NonFiniteEmbedding(None) => write!(f, "non-finite global embedding"),
        }
    }
}

/// All invariant violations of `bundle`; empty when it is well formed.
pub fn validate_frame_bundle(bundle: &FrameBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = &bundle.intrinsics;
    out.extend(k.violations().into_iter().map(Violation::InvalidIntrinsics));
    if let Some(v) = bundle.pose.violation() {
        out.push(Violation::InvalidPose(v));
    }
    for (what, w, h) in [
        ("depth", bundle.depth.width(), bundle.depth.height()),
        ("mask", bundle.mask.width(), bundle.mask.height()),
    ] {
        if w != k.width || h != k.height {
            out.push(Violation::DimensionMismatch {
                what,
                width: w,
                height: h,
                expected_width: k.width,
                expected_height: k.height,
            });
        }
    }

    let mask_ids = bundle.mask_ids();
    let mut seen = BTreeSet::new();
    let dim = bundle.global_embedding.dim();
    if !bundle.global_embedding.is_finite() {
        out.push(Violation::NonFiniteEmbedding(None));
    }
    for rec in &bundle.instances {
        let id = rec.local_id;
        if id == 0 {
            out.push(Violation::ReservedLocalId);
            continue;
        }
        if !seen.insert(id) {
            out.push(Violation::DuplicateLocalId(id));
        }
        if !mask_ids.contains(&id) {
            out.push(Violation::UnusedInstance(id));
        }
        if !(0.0..=1.0).contains(&rec.pred_score) {
            out.push(Violation::ScoreOutOfRange { local_id: id, score: rec.pred_score });
        }
        let fraction = rec.area_fraction(k);
        if !(fraction > 0.0 && fraction <= 1.0) {
            out.push(Violation::AreaFractionOutOfRange { local_id: id, fraction });
        }
        if rec.embedding.dim() != dim {
            out.push(Violation::EmbeddingDimension { local_id: Some(id), dim: rec.embedding.dim(), expected: dim });
        }
        if !rec.embedding.is_finite() {
            out.push(Violation::NonFiniteEmbedding(Some(id)));
        }
    }
    for id in mask_ids {
        if !seen.contains(&id) {
            out.push(Violation::OrphanMaskId(id));
        }
    }
    out
}

/// A world-frame point carrying a global instance ID.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Point3<f64>,
    pub instance_id: GlobalId,
}

/// Growing labeled scene cloud with a coarse spatial index.
///
/// Points are only ever appended, so indices are stable. With voxel
/// deduplication enabled an insertion is accepted only if its `voxel`-sized
/// cell is still empty, which keeps the earliest point of every voxel.
#[derive(Debug, Clone)]
pub struct ScenePointCloud {
    points: Vec<LabeledPoint>,
    index: GridIndex,
    voxel: f64,
    dedup: bool,
    occupied: HashMap<VoxelKey, u32>,
    id_counts: BTreeMap<GlobalId, usize>,
    next_global_id: GlobalId,
}

impl ScenePointCloud {
    /// Cell size of the coarse index used for bounding-box crops.
    pub const INDEX_CELL: f64 = 0.25;

    pub fn new(voxel: f64, dedup: bool) -> Result<Self> {
        if !(voxel > 0.0 && voxel.is_finite()) {
            return Err(Error::InvalidInput(format!("voxel size must be positive, got {voxel}")));
        }
        Ok(Self {
            points: Vec::new(),
            index: GridIndex::new(Self::INDEX_CELL),
            voxel,
            dedup,
            occupied: HashMap::new(),
            id_counts: BTreeMap::new(),
            next_global_id: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn voxel(&self) -> f64 {
        self.voxel
    }

    pub fn dedup_enabled(&self) -> bool {
        self.dedup
    }

    pub fn next_global_id(&self) -> GlobalId {
        self.next_global_id
    }

    /// Issue a fresh global ID. IDs are never reused.
    pub fn issue_id(&mut self) -> GlobalId {
        let id = self.next_global_id;
        self.next_global_id += 1;
        id
    }

    /// Point counts per global ID currently in the cloud.
    pub fn id_counts(&self) -> &BTreeMap<GlobalId, usize> {
        &self.id_counts
    }

    pub fn unique_ids(&self) -> BTreeSet<GlobalId> {
        self.id_counts.keys().copied().collect()
    }

    /// Index of the point occupying `key`, when deduplication is enabled.
    pub fn voxel_occupant(&self, key: &VoxelKey) -> Option<usize> {
        self.occupied.get(key).map(|&i| i as usize)
    }

    /// Append a point; returns `false` if deduplication rejected it.
    pub fn insert(&mut self, point: LabeledPoint) -> Result<bool> {
        if !point.position.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("non-finite point position".into()));
        }
        if point.instance_id == 0 || point.instance_id >= self.next_global_id {
            return Err(Error::Integrity(format!(
                "instance ID {} was not issued by this cloud",
                point.instance_id
            )));
        }
        let idx = self.points.len() as u32;
        if self.dedup {
            let key = voxel_key(&point.position, self.voxel);
            if self.occupied.contains_key(&key) {
                return Ok(false);
            }
            self.occupied.insert(key, idx);
        }
        self.index.insert(&point.position, idx);
        *self.id_counts.entry(point.instance_id).or_insert(0) += 1;
        self.points.push(point);
        Ok(true)
    }

    /// Indices (ascending) of points inside `bounds`, inclusive.
    pub fn crop(&self, bounds: &Aabb) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .index
            .candidates(bounds)
            .filter(|&i| bounds.contains(&self.points[i].position))
            .collect();
        out.sort_unstable();
        out
    }
}

/// One `(frame, local ID)` observation recorded under a global ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObservationKey {
    pub frame_index: u64,
    pub local_id: LocalId,
}

/// Table from global ID to the frame observations that produced it.
///
/// Each key holds an append-only list, so re-observing the same
/// `(frame, local ID)` pair records it again.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalIdTable {
    entries: BTreeMap<GlobalId, Vec<ObservationKey>>,
}

impl GlobalIdTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record(&mut self, id: GlobalId, obs: ObservationKey) {
        self.entries.entry(id).or_default().push(obs);
    }

    pub fn get(&self, id: GlobalId) -> Option<&[ObservationKey]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = GlobalId> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (GlobalId, &[ObservationKey])> {
        self.entries.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn total_observations(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Checks that keys match the cloud's IDs and that no observation is
    /// filed under two different keys.
    pub fn check_consistency(&self, scene: &ScenePointCloud) -> Result<()> {
        let keys: BTreeSet<GlobalId> = self.entries.keys().copied().collect();
        let ids = scene.unique_ids();
        if keys != ids {
            let missing: Vec<_> = ids.difference(&keys).collect();
            let extra: Vec<_> = keys.difference(&ids).collect();
            return Err(Error::Integrity(format!(
                "ID table out of sync with scene: unrecorded scene IDs {missing:?}, table IDs without points {extra:?}"
            )));
        }
        let mut owner: HashMap<ObservationKey, GlobalId> = HashMap::new();
        for (&id, list) in &self.entries {
            for obs in list {
                if let Some(prev) = owner.insert(*obs, id) {
                    if prev != id {
                        return Err(Error::Integrity(format!(
                            "observation {obs:?} recorded under both {prev} and {id}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Frame observation attached to a finalized instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame_index: u64,
    pub local_id: LocalId,
    pub pred_score: f64,
}

/// One finalized 3D instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MapInstance {
    pub global_id: GlobalId,
    pub points: Vec<Point3<f64>>,
    pub name: String,
    pub refined_name: Option<String>,
    pub caption: String,
    pub embedding: Embedding,
    pub bbox: Aabb,
    pub centroid: Point3<f64>,
    pub observations: Vec<Observation>,
}

impl MapInstance {
    /// Recompute bounding box and point-mean centroid; `None` for no points.
    pub fn bounds_and_centroid(points: &[Point3<f64>]) -> Option<(Aabb, Point3<f64>)> {
        let bbox = Aabb::from_points(points.iter())?;
        let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        let mut centroid = Point3::from(sum / points.len() as f64);
        // the mean can drift past the box by an ulp when all points coincide
        for axis in 0..3 {
            centroid[axis] = centroid[axis].clamp(bbox.min[axis], bbox.max[axis]);
        }
        Some((bbox, centroid))
    }
}

/// A finalized instance map together with the configuration that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMap {
    pub config: FusionConfig,
    pub embedding_dim: usize,
    /// Size of the integrated scene cloud the map was finalized from.
    pub scene_points: usize,
    pub instances: Vec<MapInstance>,
}

impl InstanceMap {
    pub fn get(&self, id: GlobalId) -> Option<&MapInstance> {
        self.instances.iter().find(|i| i.global_id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    /// All instance points labeled with their global IDs.
    pub fn labeled_points(&self) -> Vec<LabeledPoint> {
        self.instances
            .iter()
            .flat_map(|inst| {
                inst.points.iter().map(move |&position| LabeledPoint { position, instance_id: inst.global_id })
            })
            .collect()
    }
}

/// Pipeline hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Frame sampling stride.
    pub stride: usize,
    /// Border padding in pixels between instance masks.
    pub border_px: usize,
    /// Match radius and deduplication voxel size in meters.
    pub voxel: f64,
    /// Minimum overlap ratio for ID replacement.
    pub overlap_threshold: f64,
    /// Number of best-scoring views fused per instance.
    pub top_images: usize,
    pub crop_levels: usize,
    pub crop_ratios: Vec<f64>,
    pub dbscan_eps: f64,
    pub dbscan_min_points: usize,
    /// Clusters at least this fraction of the largest become separate instances.
    pub split_fraction: f64,
    /// Detections whose box covers more than this image fraction are dropped.
    pub bbox_area_max: f64,
    pub background_names: Vec<String>,
    pub scheme: FusionScheme,
    /// Keep one scene point per voxel.
    pub dedup: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            stride: 40,
            border_px: 20,
            voxel: 0.02,
            overlap_threshold: 0.3,
            top_images: 5,
            crop_levels: 3,
            crop_ratios: vec![0.8, 1.0, 1.2],
            dbscan_eps: 0.1,
            dbscan_min_points: 20,
            split_fraction: 0.8,
            bbox_area_max: 0.95,
            background_names: ["wall", "floor", "ground", "roof", "ceiling"].map(String::from).to_vec(),
            scheme: FusionScheme::Scheme4,
            dedup: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput(msg));
        if self.stride < 1 {
            return fail("stride must be at least 1".into());
        }
        if !(self.voxel > 0.0 && self.voxel.is_finite()) {
            return fail(format!("voxel must be positive, got {}", self.voxel));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return fail(format!("overlap threshold must be in (0, 1], got {}", self.overlap_threshold));
        }
        if self.top_images < 1 {
            return fail("top_images must be at least 1".into());
        }
        if self.crop_levels < 1 || self.crop_ratios.len() != self.crop_levels {
            return fail(format!(
                "need crop_levels >= 1 and one ratio per level (levels {}, ratios {})",
                self.crop_levels,
                self.crop_ratios.len()
            ));
        }
        if !(self.dbscan_eps > 0.0) || self.dbscan_min_points < 1 {
            return fail("DBSCAN needs eps > 0 and min_points >= 1".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return fail(format!("split fraction must be in (0, 1], got {}", self.split_fraction));
        }
        if !(self.bbox_area_max > 0.0 && self.bbox_area_max <= 1.0) {
            return fail(format!("bbox_area_max must be in (0, 1], got {}", self.bbox_area_max));
        }
        Ok(())
    }

    /// Case-insensitive substring match against the background list.
    pub fn is_background(&self, name: &str) -> bool {
        let name = name.to_lowercase();
        self.background_names.iter().any(|bg| name.contains(&bg.to_lowercase()))
    }
}
