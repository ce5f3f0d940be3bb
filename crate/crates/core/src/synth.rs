//! Deterministic synthetic scenes of boxes and spheres, rendered by exact
//! ray casting into frame bundles with known ground truth.
//!
//! Every RNG draw derives from the scene seed, so a scene description always
//! renders to the same bundles.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;

use nalgebra::{Point3, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::metrics::GroundTruthScene;
use crate::scene::{
    BBox2, CameraIntrinsics, DepthImage, Embedding, FrameBundle, InstanceMask, InstanceRecord, LocalId, Pose,
};
use crate::spatial::voxel_key;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Box rotated by `yaw` radians about the world z axis.
    Box { half_extents: [f64; 3], yaw: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub label: String,
    pub class_id: u32,
    pub center: [f64; 3],
    pub shape: Shape,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of additive Gaussian depth noise, meters.
    pub depth_sigma: f64,
    /// Probability that a pixel loses its depth.
    pub dropout: f64,
}

/// Scene description, as stored in `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world poses, 16 numbers row-major each.
    pub cameras: Vec<Vec<f64>>,
    pub objects: Vec<SyntheticObject>,
    pub noise: NoiseModel,
    pub embedding_dim: usize,
    /// Voxel size for deduplicating the ground-truth cloud.
    pub gt_voxel: f64,
}

/// Parameters of [`SyntheticScene::random`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSceneOptions {
    pub objects: usize,
    pub frames: usize,
    pub embedding_dim: usize,
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseModel,
    /// Also require the objects' image discs to stay apart in every view,
    /// so no object occludes another.
    pub separate_in_image: bool,
}

impl Default for RandomSceneOptions {
    fn default() -> Self {
        Self {
            objects: 3,
            frames: 10,
            embedding_dim: 32,
            intrinsics: CameraIntrinsics { fx: 525.0, fy: 525.0, cx: 319.5, cy: 239.5, width: 640, height: 480 },
            noise: NoiseModel::default(),
            separate_in_image: true,
        }
    }
}

const LABELS: [&str; 12] =
    ["chair", "table", "lamp", "sofa", "plant", "monitor", "mug", "book", "vase", "bottle", "pillow", "clock"];

/// Random unit vector rounded to `f32`.
fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32 as f64).collect();
        }
    }
}

impl SyntheticObject {
    /// Radius of a sphere enclosing the object.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Box { half_extents: h, .. } => (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt(),
            Shape::Sphere { radius } => radius,
        }
    }

    /// World corners of a box enclosing the object.
    fn corners(&self) -> [Point3<f64>; 8] {
        let (h, rot) = match self.shape {
            Shape::Box { half_extents, .. } => (half_extents, self.inv_rotation().inverse()),
            Shape::Sphere { radius } => ([radius; 3], Rotation3::identity()),
        };
        std::array::from_fn(|i| {
            let s = |bit: usize, v: f64| if i >> bit & 1 == 1 { v } else { -v };
            self.center() + rot * Vector3::new(s(0, h[0]), s(1, h[1]), s(2, h[2]))
        })
    }

    /// Pixel rectangle `[u0, v0, u1, v1]` containing the object's image, or
    /// `None` when part of it is less than 0.1 m in front of the camera.
    fn image_rect(&self, pose: &Pose, k: &CameraIntrinsics) -> Option<[f64; 4]> {
        let mut r = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for c in self.corners() {
            let c = pose.inverse_transform_point(&c);
            if c.z <= 0.1 {
                return None;
            }
            let (u, v, _) = k.project(&c);
            r = [r[0].min(u), r[1].min(v), r[2].max(u), r[3].max(v)];
        }
        Some(r)
    }

    fn center(&self) -> Point3<f64> {
        Point3::from(self.center)
    }

    /// World-to-object rotation.
    fn inv_rotation(&self) -> Rotation3<f64> {
        match self.shape {
            Shape::Box { yaw, .. } => Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw),
            Shape::Sphere { .. } => Rotation3::identity(),
        }
    }

    /// Smallest positive ray parameter at which `origin + t * dir` hits the
    /// surface from outside.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let oc = origin - self.center();
        match self.shape {
            Shape::Sphere { radius } => {
                let a = dir.dot(dir);
                let b = 2.0 * dir.dot(&oc);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                (t > 0.0).then_some(t)
            }
            Shape::Box { half_extents: h, .. } => {
                let rot = self.inv_rotation();
                let o = rot * oc;
                let d = rot * dir;
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if o[a].abs() > h[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-h[a] - o[a]) / d[a];
                    let t2 = (h[a] - o[a]) / d[a];
                    t_near = t_near.max(t1.min(t2));
                    t_far = t_far.min(t1.max(t2));
                }
                (t_near <= t_far && t_near > 0.0).then_some(t_near)
            }
        }
    }

    /// Unsigned distance from `p` to the object's surface.
    pub fn surface_distance(&self, p: &Point3<f64>) -> f64 {
        let local = self.inv_rotation() * (p - self.center());
        match self.shape {
            Shape::Sphere { radius } => (local.norm() - radius).abs(),
            Shape::Box { half_extents: h, .. } => {
                let q = Vector3::new(local.x.abs() - h[0], local.y.abs() - h[1], local.z.abs() - h[2]);
                let outside = q.map(|c| c.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                (outside + inside).abs()
            }
        }
    }
}

/// Rendered frames plus the ground-truth cloud.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub bundles: Vec<FrameBundle>,
    pub ground_truth: Option<GroundTruthScene>,
    /// Frames that were skipped, with the reason.
    pub notices: Vec<String>,
}

impl SyntheticScene {
    /// Random scene: objects resting on the z = 0 plane inside a disc whose
    /// area grows with the object count, cameras on an elevated arc looking
    /// at the scene center. Every object
    /// stays fully inside every image.
    pub fn random(seed: u64, options: &RandomSceneOptions) -> Result<Self> {
        if options.objects > LABELS.len() {
            return Err(Error::InvalidInput(format!("at most {} objects", LABELS.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = LABELS.to_vec();
        labels.shuffle(&mut rng);
        // placement disc grows with object count so density stays similar
        let mut spread = 0.4 + 0.35 * (options.objects as f64).sqrt();
        // a steeper view spreads ground-plane objects apart in the image
        let elevation = if options.separate_in_image { 1.4 } else { 0.7 };
        if options.separate_in_image {
            spread *= 1.2;
        }
        let distance = 1.6 + 1.6 * spread;
        for _attempt in 0..1000 {
            let mut objects: Vec<SyntheticObject> = Vec::new();
            for (i, &label) in labels.iter().take(options.objects).enumerate() {
                let shape = if rng.random_bool(0.5) {
                    Shape::Box {
                        half_extents: [
                            rng.random_range(0.1..0.25),
                            rng.random_range(0.1..0.25),
                            rng.random_range(0.1..0.3),
                        ],
                        yaw: rng.random_range(0.0..PI),
                    }
                } else {
                    Shape::Sphere { radius: rng.random_range(0.12..0.25) }
                };
                let lift = match shape {
                    Shape::Box { half_extents, .. } => half_extents[2],
                    Shape::Sphere { radius } => radius,
                };
                let (r, a) = (spread * rng.random_range(0.0..1.0f64).sqrt(), rng.random_range(0.0..2.0 * PI));
                objects.push(SyntheticObject {
                    label: label.to_string(),
                    class_id: i as u32 + 1,
                    center: [r * a.cos(), r * a.sin(), lift],
                    shape,
                    embedding: random_unit(&mut rng, options.embedding_dim),
                });
            }
            let separated = (0..objects.len()).all(|i| {
                (0..i).all(|j| {
                    let d = (objects[i].center() - objects[j].center()).norm();
                    d > objects[i].bounding_radius() + objects[j].bounding_radius() + 0.15
                })
            });
            if !separated {
                continue;
            }
            let start = rng.random_range(0.0..2.0 * PI);
            let span = rng.random_range(0.8..1.6);
            let target = Point3::new(0.0, 0.0, 0.2);
            let cameras: Vec<Vec<f64>> = (0..options.frames)
                .map(|f| {
                    let a = start + span * f as f64 / options.frames.max(2).saturating_sub(1) as f64;
                    let eye = Point3::new(distance * a.cos(), distance * a.sin(), elevation * distance);
                    Pose::look_at(eye, target, Vector3::z()).map(|p| p.to_row_major().to_vec())
                })
                .collect::<Result<_>>()?;
            let scene = SyntheticScene {
                seed,
                intrinsics: options.intrinsics,
                cameras,
                objects,
                noise: options.noise,
                embedding_dim: options.embedding_dim,
                gt_voxel: 0.005,
            };
            if scene.all_objects_in_view(20.0, options.separate_in_image)? {
                return Ok(scene);
            }
        }
        Err(Error::InvalidInput("could not place objects inside every view".into()))
    }

    fn all_objects_in_view(&self, margin_px: f64, separate: bool) -> Result<bool> {
        let k = &self.intrinsics;
        for cam in &self.cameras {
            let pose = Pose::from_row_major(cam)?;
            let mut rects: Vec<[f64; 4]> = Vec::new();
            for obj in &self.objects {
                let Some(r) = obj.image_rect(&pose, k) else { return Ok(false) };
                if r[0] < margin_px
                    || r[1] < margin_px
                    || r[2] > k.width as f64 - 1.0 - margin_px
                    || r[3] > k.height as f64 - 1.0 - margin_px
                {
                    return Ok(false);
                }
                let apart = |o: &[f64; 4]| r[2] < o[0] || o[2] < r[0] || r[3] < o[1] || o[3] < r[1];
                if separate && !rects.iter().all(apart) {
                    return Ok(false);
                }
                rects.push(r);
            }
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        CameraIntrinsics::new(
            self.intrinsics.fx,
            self.intrinsics.fy,
            self.intrinsics.cx,
            self.intrinsics.cy,
            self.intrinsics.width,
            self.intrinsics.height,
        )?;
        for cam in &self.cameras {
            Pose::from_row_major(cam)?;
        }
        let mut seen = HashSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if o.embedding.len() != self.embedding_dim {
                return Err(Error::DimensionMismatch { expected: self.embedding_dim, found: o.embedding.len() });
            }
            if o.embedding.iter().all(|&x| x == 0.0) || !o.embedding.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("object {i}: embedding must be finite and nonzero")));
            }
            let key: Vec<u64> = o.embedding.iter().map(|x| x.to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::InvalidInput(format!("object {i}: embedding duplicates another object's")));
            }
            let ok = match o.shape {
                Shape::Box { half_extents: h, yaw } => h.iter().all(|&x| x > 0.0) && yaw.is_finite(),
                Shape::Sphere { radius } => radius > 0.0,
            };
            if !ok || !o.center.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("object {i}: invalid geometry")));
            }
        }
        if !(self.noise.depth_sigma >= 0.0) || !(0.0..1.0).contains(&self.noise.dropout) {
            return Err(Error::InvalidInput("noise needs sigma >= 0 and dropout in [0, 1)".into()));
        }
        if !(self.gt_voxel > 0.0) {
            return Err(Error::InvalidInput("gt_voxel must be positive".into()));
        }
        Ok(())
    }

    /// Ground-truth instance (object index + 1) of the surface nearest to `p`.
    pub fn label_point(&self, p: &Point3<f64>) -> Option<u32> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.surface_distance(p), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, i)| i as u32 + 1)
    }

    /// Exact first hit per pixel: `(depth, object index)`.
    fn cast(&self, pose: &Pose) -> Vec<Option<(f64, usize)>> {
        let k = &self.intrinsics;
        let rot = pose.rotation();
        let eye = Point3::from(pose.translation());
        let mut out = Vec::with_capacity(k.pixel_count());
        for v in 0..k.height {
            for u in 0..k.width {
                let d_cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                let dir = rot * d_cam;
                let hit = self
                    .objects
                    .iter()
                    .enumerate()
                    .filter_map(|(i, o)| o.intersect(&eye, &dir).map(|t| (t, i)))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                out.push(hit);
            }
        }
        out
    }

    /// Render every camera. Depth stays unquantized; noise and the local ID
    /// permutation come from a per-frame RNG derived from the seed.
    pub fn render(&self) -> Result<RenderOutput> {
        self.validate()?;
        let k = self.intrinsics;
        let dim = self.embedding_dim;
        let mut bundles = Vec::new();
        let mut notices = Vec::new();
        let mut gt_points: Vec<Point3<f64>> = Vec::new();
        let mut gt_instances: Vec<u32> = Vec::new();
        let mut gt_seen = HashSet::new();
        for (f, cam) in self.cameras.iter().enumerate() {
            let pose = Pose::from_row_major(cam)?;
            if let Some(i) = self.objects.iter().position(|o| pose.inverse_transform_point(&o.center()).z <= 0.0) {
                let msg = format!("frame {f}: object {i} is behind the camera, frame skipped");
                log::warn!("{msg}");
                notices.push(msg);
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (f as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let hits = self.cast(&pose);

            // ground truth from noise-free hits
            for (pix, hit) in hits.iter().enumerate() {
                if let Some((t, i)) = *hit {
                    let p = pose.transform_point(&k.unproject((pix % k.width) as f64, (pix / k.width) as f64, t));
                    if gt_seen.insert(voxel_key(&p, self.gt_voxel)) {
                        gt_points.push(p);
                        gt_instances.push(i as u32 + 1);
                    }
                }
            }

            let visible: Vec<usize> = {
                let mut v: Vec<usize> = hits.iter().flatten().map(|&(_, i)| i).collect();
                v.sort_unstable();
                v.dedup();
                v
            };
            let mut ids: Vec<LocalId> = (1..=visible.len() as LocalId).collect();
            ids.shuffle(&mut rng);
            let local_of: BTreeMap<usize, LocalId> = visible.iter().copied().zip(ids.iter().copied()).collect();

            let noise = Normal::new(0.0, self.noise.depth_sigma.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            let mut depth = DepthImage::filled(k.width, k.height, 0.0);
            let mut mask = InstanceMask::filled(k.width, k.height, 0);
            let mut extents: BTreeMap<usize, [usize; 4]> = BTreeMap::new();
            for (pix, hit) in hits.iter().enumerate() {
                let Some((t, i)) = *hit else { continue };
                let (u, v) = (pix % k.width, pix / k.width);
                mask.set(u, v, local_of[&i]);
                let e = extents.entry(i).or_insert([u, v, u, v]);
                *e = [e[0].min(u), e[1].min(v), e[2].max(u), e[3].max(v)];
                let mut d = t;
                if self.noise.depth_sigma > 0.0 {
                    d += noise.sample(&mut rng);
                }
                if self.noise.dropout > 0.0 && rng.random_bool(self.noise.dropout) {
                    d = 0.0;
                }
                depth.set(u, v, d.max(0.0));
            }

            let mut instances: Vec<InstanceRecord> = visible
                .iter()
                .map(|&i| {
                    let o = &self.objects[i];
                    let e = extents[&i];
                    InstanceRecord {
                        local_id: local_of[&i],
                        name: o.label.clone(),
                        caption: format!("a {}", o.label),
                        pred_score: 1.0,
                        bbox_2d: BBox2 { x0: e[0] as f64, y0: e[1] as f64, x1: e[2] as f64 + 1.0, y1: e[3] as f64 + 1.0 },
                        embedding: Embedding::new(o.embedding.clone()),
                    }
                })
                .collect();
            instances.sort_by_key(|r| r.local_id);
            let mut global = vec![0.0; dim];
            for &i in &visible {
                for (g, x) in global.iter_mut().zip(&self.objects[i].embedding) {
                    *g += x / visible.len() as f64;
                }
            }
            bundles.push(FrameBundle {
                frame_index: f as u64,
                depth,
                mask,
                pose,
                intrinsics: k,
                instances,
                global_embedding: Embedding::new(global).round_to_f32(),
            });
        }
        let ground_truth = if gt_points.is_empty() {
            None
        } else {
            let labels = gt_instances.iter().map(|&i| self.objects[i as usize - 1].class_id).collect();
            Some(GroundTruthScene::new(gt_points, labels, gt_instances)?)
        };
        Ok(RenderOutput { bundles, ground_truth, notices })
    }

    /// Class queries using each object's true embedding.
    pub fn queries(&self) -> crate::metrics::QuerySet {
        let mut classes: BTreeMap<u32, crate::metrics::ClassQuery> = BTreeMap::new();
        for o in &self.objects {
            classes.entry(o.class_id).or_insert_with(|| crate::metrics::ClassQuery {
                label: o.class_id,
                name: o.label.clone(),
                embedding: Embedding::new(o.embedding.clone()),
            });
        }
        crate::metrics::QuerySet { classes: classes.into_values().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::backproject;
    use crate::scene::validate_frame_bundle;

    fn cube_scene() -> SyntheticScene {
        SyntheticScene {
            seed: 1,
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap(),
            cameras: vec![Pose::identity().to_row_major().to_vec()],
            objects: vec![SyntheticObject {
                label: "cube".into(),
                class_id: 1,
                center: [0.0, 0.0, 2.0],
                shape: Shape::Box { half_extents: [0.5; 3], yaw: 0.0 },
                embedding: vec![1.0, 0.0],
            }],
            noise: NoiseModel::default(),
            embedding_dim: 2,
            gt_voxel: 0.005,
        }
    }

    #[test]
    fn unit_cube_in_front_of_camera() {
        let out = cube_scene().render().unwrap();
        let b = &out.bundles[0];
        assert_eq!(b.depth.get(50, 50), 1.5);
        // the near face spans |x| <= 0.5 at z = 1.5: pixels 50 +- 33.3
        for v in 0..101 {
            for u in 0..101 {
                let inside = (17..=83).contains(&u) && (17..=83).contains(&v);
                assert_eq!(b.mask.get(u, v) != 0, inside, "({u},{v})");
            }
        }
        assert_eq!(b.instances.len(), 1);
        assert_eq!(b.instances[0].bbox_2d, BBox2 { x0: 17.0, y0: 17.0, x1: 84.0, y1: 84.0 });
        assert!(validate_frame_bundle(b).is_empty());
    }

    #[test]
    fn empty_scene_renders_empty_frames() {
        let mut s = cube_scene();
        s.objects.clear();
        let out = s.render().unwrap();
        assert!(out.bundles[0].instances.is_empty());
        assert!(out.bundles[0].mask.as_slice().iter().all(|&m| m == 0));
        assert!(out.ground_truth.is_none());
    }

    #[test]
    fn object_behind_camera_skips_frame() {
        let mut s = cube_scene();
        s.objects[0].center = [0.0, 0.0, -2.0];
        let out = s.render().unwrap();
        assert!(out.bundles.is_empty());
        assert_eq!(out.notices.len(), 1);
    }

    #[test]
    fn random_scene_is_deterministic_and_exact() {
        let opts = RandomSceneOptions {
            intrinsics: CameraIntrinsics::new(131.25, 131.25, 79.5, 59.5, 160, 120).unwrap(),
            frames: 3,
            ..Default::default()
        };
        let scene = SyntheticScene::random(42, &opts).unwrap();
        assert_eq!(scene, SyntheticScene::random(42, &opts).unwrap());
        let a = scene.render().unwrap();
        let b = scene.render().unwrap();
        assert_eq!(a.bundles, b.bundles);
        assert_eq!(a.bundles.len(), 3);
        for bundle in &a.bundles {
            assert!(validate_frame_bundle(bundle).is_empty());
            let cloud = backproject(bundle);
            for (p, l) in cloud.positions.iter().zip(&cloud.labels) {
                let obj = bundle.instances.iter().find(|r| r.local_id == *l).unwrap();
                let o = scene.objects.iter().find(|o| o.label == obj.name).unwrap();
                assert!(o.surface_distance(p) < 1e-6);
            }
        }
        let gt = a.ground_truth.unwrap();
        for (p, &inst) in gt.points.iter().zip(&gt.instances) {
            assert_eq!(scene.label_point(p), Some(inst));
        }
        let json = serde_json::to_string(&scene).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticScene>(&json).unwrap(), scene);
    }

    #[test]
    fn noise_changes_depth_only() {
        let mut s = cube_scene();
        s.noise = NoiseModel { depth_sigma: 0.005, dropout: 0.1 };
        let clean = cube_scene().render().unwrap().bundles.remove(0);
        let noisy = s.render().unwrap().bundles.remove(0);
        assert_eq!(clean.mask, noisy.mask);
        assert_ne!(clean.depth, noisy.depth);
        let dropped = noisy.depth.as_slice().iter().zip(clean.depth.as_slice()).filter(|(n, c)| **c > 0.0 && **n == 0.0).count();
        assert!(dropped > 200 && dropped < 700, "{dropped}");
    }

    #[test]
    fn surface_distance_of_box() {
        let o = SyntheticObject {
            label: "b".into(),
            class_id: 1,
            center: [1.0, 0.0, 0.0],
            shape: Shape::Box { half_extents: [0.5, 0.2, 0.1], yaw: PI / 2.0 },
            embedding: vec![1.0],
        };
        // after a quarter turn the long axis lies along y
        assert!((o.surface_distance(&Point3::new(1.0, 0.7, 0.0)) - 0.2).abs() < 1e-12);
        assert!((o.surface_distance(&Point3::new(1.0, 0.0, 0.0)) - 0.1).abs() < 1e-12);
    }
}
