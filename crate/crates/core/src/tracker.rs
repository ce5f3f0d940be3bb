//! Incremental frame-to-scene fusion with global ID tracking.
//!
//! Every frame is compared against a snapshot of the scene restricted to the
//! frame's bounding box. Each frame segment either inherits the dominant
//! overlapping scene ID or receives a fresh one; the relabeled points are then
//! appended to the scene under voxel deduplication.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::Point3;
use serde::Serialize;

use crate::projection::FramePointCloud;
use crate::scene::{FusionConfig, GlobalId, GlobalIdTable, LabeledPoint, LocalId, ObservationKey, ScenePointCloud};
use crate::spatial::{voxel_key, KdTree, VoxelKey};
use crate::{Error, Result};

/// Scene points inside a frame's bounding box.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubCloud {
    /// Scene indices, ascending.
    pub indices: Vec<usize>,
    pub positions: Vec<Point3<f64>>,
    pub ids: Vec<GlobalId>,
}

impl SubCloud {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Scene points inside the frame cloud's bounding box grown by the scene
/// voxel size on every side.
pub fn crop_scene(scene: &ScenePointCloud, frame: &FramePointCloud) -> SubCloud {
    let Some(bounds) = frame.bounds() else {
        return SubCloud::default();
    };
    let indices = scene.crop(&bounds.expanded(scene.voxel()));
    let pts = scene.points();
    SubCloud {
        positions: indices.iter().map(|&i| pts[i].position).collect(),
        ids: indices.iter().map(|&i| pts[i].instance_id).collect(),
        indices,
    }
}

/// A frame point and the scene point it matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MatchPair {
    pub frame: usize,
    /// Index into the scene cloud.
    pub scene: usize,
}

/// Pair each frame point with its nearest subcloud point when that point is
/// strictly closer than `eps`. Equidistant candidates resolve to the smallest
/// scene index. Pairs are ordered by frame index.
pub fn match_points(frame: &[Point3<f64>], sub: &SubCloud, eps: f64) -> Vec<MatchPair> {
    if sub.is_empty() {
        return Vec::new();
    }
    let tree = KdTree::new(&sub.positions);
    frame
        .iter()
        .enumerate()
        .filter_map(|(i, p)| tree.nearest_within(p, eps).map(|(j, _)| MatchPair { frame: i, scene: sub.indices[j] }))
        .collect()
}

/// Overlap of one frame segment with one scene segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SegmentOverlap {
    pub scene_id: GlobalId,
    /// Distinct points of the scene segment matched by the frame segment.
    pub overlap: usize,
    /// Size of the scene segment inside the cropped subcloud.
    pub scene_total: usize,
}

/// Overlap with the largest count; ties go to the smallest scene ID.
pub fn dominant(overlaps: &[SegmentOverlap]) -> Option<&SegmentOverlap> {
    overlaps.iter().min_by(|a, b| b.overlap.cmp(&a.overlap).then(a.scene_id.cmp(&b.scene_id)))
}

/// Overlap of the dominant scene segment relative to the smaller of the two
/// segments. Lies in `[0, 1]` because overlap counts distinct scene points.
pub fn overlap_ratio(frame_count: usize, overlaps: &[SegmentOverlap]) -> f64 {
    match dominant(overlaps) {
        None => 0.0,
        Some(d) => {
            let denom = frame_count.min(d.scene_total);
            if denom == 0 {
                0.0
            } else {
                d.overlap as f64 / denom as f64
            }
        }
    }
}

/// What happened to a frame segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum SegmentAction {
    /// Relabeled to an existing scene ID.
    Merge(GlobalId),
    /// Issued a fresh ID.
    NewId(GlobalId),
    /// Below threshold, but every point fell into an occupied voxel, so the
    /// observation is filed under the ID owning most of those voxels.
    Absorbed(GlobalId),
}

impl SegmentAction {
    pub fn id(&self) -> GlobalId {
        match *self {
            SegmentAction::Merge(id) | SegmentAction::NewId(id) | SegmentAction::Absorbed(id) => id,
        }
    }
}

/// Per-segment record of one integration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub local_id: LocalId,
    pub frame_count: usize,
    /// Sorted by scene ID.
    pub overlaps: Vec<SegmentOverlap>,
    pub ratio: f64,
    pub action: SegmentAction,
    /// Points that survived deduplication.
    pub inserted: usize,
}

/// Everything one `integrate_frame` call did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame_index: u64,
    /// Size of the cropped search space.
    pub candidates: usize,
    pub matched: usize,
    pub segments: Vec<OverlapReport>,
}

/// Overlap counts per frame segment against a scene snapshot:
/// `local_id -> (frame_count, overlaps sorted by scene ID)`.
pub fn segment_overlaps(
    frame: &FramePointCloud,
    sub: &SubCloud,
    matches: &[MatchPair],
) -> BTreeMap<LocalId, (usize, Vec<SegmentOverlap>)> {
    let mut scene_totals: HashMap<GlobalId, usize> = HashMap::new();
    for &id in &sub.ids {
        *scene_totals.entry(id).or_insert(0) += 1;
    }
    let scene_ids: HashMap<usize, GlobalId> = sub.indices.iter().copied().zip(sub.ids.iter().copied()).collect();
    let mut hit: HashSet<(LocalId, usize)> = HashSet::new();
    let mut counts: BTreeMap<LocalId, BTreeMap<GlobalId, usize>> = BTreeMap::new();
    for m in matches {
        let local = frame.labels[m.frame];
        if hit.insert((local, m.scene)) {
            *counts.entry(local).or_default().entry(scene_ids[&m.scene]).or_insert(0) += 1;
        }
    }
    frame
        .counts
        .iter()
        .map(|(&local, &n)| {
            let overlaps = counts
                .remove(&local)
                .unwrap_or_default()
                .into_iter()
                .map(|(scene_id, overlap)| SegmentOverlap { scene_id, overlap, scene_total: scene_totals[&scene_id] })
                .collect();
            (local, (n, overlaps))
        })
        .collect()
}

/// Fuse one frame into the scene and record its observations in `table`.
///
/// Actions are decided against the scene as it was before the call, so
/// segments of one frame never see each other.
pub fn integrate_frame(
    scene: &mut ScenePointCloud,
    table: &mut GlobalIdTable,
    frame: &FramePointCloud,
    config: &FusionConfig,
) -> Result<FrameReport> {
    if frame.positions.len() != frame.labels.len() {
        return Err(Error::InvalidInput("frame cloud positions and labels differ in length".into()));
    }
    let sub = crop_scene(scene, frame);
    let matches = match_points(&frame.positions, &sub, scene.voxel());
    let overlaps = segment_overlaps(frame, &sub, &matches);

    // survivors of deduplication against the scene and earlier frame points
    let keys: Vec<VoxelKey> = frame.positions.iter().map(|p| voxel_key(p, scene.voxel())).collect();
    let mut claimed: HashMap<VoxelKey, usize> = HashMap::new();
    let accepted: Vec<bool> = if scene.dedup_enabled() {
        keys.iter()
            .enumerate()
            .map(|(i, k)| scene.voxel_occupant(k).is_none() && *claimed.entry(*k).or_insert(i) == i)
            .collect()
    } else {
        vec![true; frame.len()]
    };
    let mut accepted_per_segment: BTreeMap<LocalId, usize> = BTreeMap::new();
    for (i, &ok) in accepted.iter().enumerate() {
        if ok {
            *accepted_per_segment.entry(frame.labels[i]).or_insert(0) += 1;
        }
    }

    let mut labels: BTreeMap<LocalId, GlobalId> = BTreeMap::new();
    let mut reports = Vec::with_capacity(overlaps.len());
    let mut absorbed = Vec::new();
    for (&local, (count, segs)) in &overlaps {
        let ratio = overlap_ratio(*count, segs);
        let inserted = accepted_per_segment.get(&local).copied().unwrap_or(0);
        let action = match dominant(segs) {
            Some(d) if ratio >= config.overlap_threshold => SegmentAction::Merge(d.scene_id),
            _ if inserted > 0 => SegmentAction::NewId(scene.issue_id()),
            _ => {
                absorbed.push(reports.len());
                SegmentAction::Absorbed(0)
            }
        };
        if !matches!(action, SegmentAction::Absorbed(_)) {
            labels.insert(local, action.id());
        }
        reports.push(OverlapReport { local_id: local, frame_count: *count, overlaps: segs.clone(), ratio, action, inserted });
    }

    for r in absorbed {
        let local = reports[r].local_id;
        let mut votes: BTreeMap<GlobalId, usize> = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            if frame.labels[i] != local {
                continue;
            }
            let owner = match scene.voxel_occupant(k) {
                Some(s) => scene.points()[s].instance_id,
                None => labels[&frame.labels[claimed[k]]],
            };
            *votes.entry(owner).or_insert(0) += 1;
        }
        let owner = votes
            .iter()
            .min_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)))
            .map(|(&id, _)| id)
            .ok_or_else(|| Error::Integrity(format!("segment {local} has no points")))?;
        reports[r].action = SegmentAction::Absorbed(owner);
    }

    for (i, p) in frame.positions.iter().enumerate() {
        if !accepted[i] {
            continue;
        }
        let instance_id = labels[&frame.labels[i]];
        if !scene.insert(LabeledPoint { position: *p, instance_id })? {
            return Err(Error::Integrity("deduplication rejected a point predicted to survive".into()));
        }
    }
    for r in &reports {
        table.record(r.action.id(), ObservationKey { frame_index: frame.frame_index, local_id: r.local_id });
    }
    table.check_consistency(scene)?;
    Ok(FrameReport { frame_index: frame.frame_index, candidates: sub.len(), matched: matches.len(), segments: reports })
}

/// Keep the first point of every `eps`-voxel, preserving order and IDs.
pub fn dedup_voxels(points: &[LabeledPoint], eps: f64) -> Vec<LabeledPoint> {
    let mut seen = HashSet::new();
    points.iter().filter(|p| seen.insert(voxel_key(&p.position, eps))).copied().collect()
}

/// Scene, ID table and configuration bundled for frame-by-frame use.
#[derive(Debug, Clone)]
pub struct Tracker {
    scene: ScenePointCloud,
    table: GlobalIdTable,
    config: FusionConfig,
    segments_integrated: usize,
}

impl Tracker {
    pub fn new(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            scene: ScenePointCloud::new(config.voxel, config.dedup)?,
            table: GlobalIdTable::new(),
            config,
            segments_integrated: 0,
        })
    }

    pub fn integrate(&mut self, frame: &FramePointCloud) -> Result<FrameReport> {
        let report = integrate_frame(&mut self.scene, &mut self.table, frame, &self.config)?;
        self.segments_integrated += report.segments.len();
        if self.table.total_observations() != self.segments_integrated {
            return Err(Error::Integrity(format!(
                "table holds {} observations after {} segments",
                self.table.total_observations(),
                self.segments_integrated
            )));
        }
        Ok(report)
    }

    pub fn scene(&self) -> &ScenePointCloud {
        &self.scene
    }

    pub fn table(&self) -> &GlobalIdTable {
        &self.table
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn segments_integrated(&self) -> usize {
        self.segments_integrated
    }

    pub fn into_parts(self) -> (ScenePointCloud, GlobalIdTable) {
        (self.scene, self.table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(frame_index: u64, pts: &[([f64; 3], LocalId)]) -> FramePointCloud {
        let mut c = FramePointCloud { frame_index, ..Default::default() };
        for &(p, l) in pts {
            c.push(Point3::from(p), l);
        }
        c
    }

    /// Two 5x5x5 lattices with spacing 0.05, labeled 1 and 2.
    fn two_blocks(frame_index: u64, offset: [f64; 3]) -> FramePointCloud {
        let mut pts = Vec::new();
        for (label, x0) in [(1, 0.0), (2, 1.0)] {
            for i in 0..5 {
                for j in 0..5 {
                    for k in 0..5 {
                        pts.push((
                            [x0 + offset[0] + i as f64 * 0.05, offset[1] + j as f64 * 0.05, offset[2] + k as f64 * 0.05],
                            label,
                        ));
                    }
                }
            }
        }
        cloud(frame_index, &pts)
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(overlap_ratio(10, &[]), 0.0);
        let o = [
            SegmentOverlap { scene_id: 3, overlap: 50, scene_total: 80 },
            SegmentOverlap { scene_id: 7, overlap: 20, scene_total: 20 },
        ];
        assert_eq!(overlap_ratio(100, &o), 0.625);
        let tie = [
            SegmentOverlap { scene_id: 9, overlap: 5, scene_total: 10 },
            SegmentOverlap { scene_id: 4, overlap: 5, scene_total: 50 },
        ];
        assert_eq!(dominant(&tie).unwrap().scene_id, 4);
        assert_eq!(overlap_ratio(20, &tie), 0.25);
    }

    #[test]
    fn match_boundary_is_strict() {
        let sub = SubCloud { indices: vec![0], positions: vec![Point3::new(0.02, 0.0, 0.0)], ids: vec![1] };
        assert!(match_points(&[Point3::origin()], &sub, 0.02).is_empty());
        assert_eq!(match_points(&[Point3::new(1e-3, 0.0, 0.0)], &sub, 0.02).len(), 1);
    }

    #[test]
    fn crop_excludes_far_points() {
        let mut scene = ScenePointCloud::new(0.02, true).unwrap();
        let id = scene.issue_id();
        scene.insert(LabeledPoint { position: Point3::new(0.5, 0.5, 0.5), instance_id: id }).unwrap();
        scene.insert(LabeledPoint { position: Point3::new(10.5, 0.5, 0.5), instance_id: id }).unwrap();
        let frame = cloud(0, &[([0.0, 0.0, 0.0], 1), ([1.0, 1.0, 1.0], 1)]);
        assert_eq!(crop_scene(&scene, &frame).indices, vec![0]);
        let empty = ScenePointCloud::new(0.02, true).unwrap();
        assert!(crop_scene(&empty, &frame).is_empty());
    }

    #[test]
    fn bootstrap_then_self_overlap() {
        let mut t = Tracker::new(FusionConfig::default()).unwrap();
        let f = two_blocks(0, [0.0; 3]);
        let r = t.integrate(&f).unwrap();
        assert_eq!(r.segments.iter().map(|s| s.action).collect::<Vec<_>>(), vec![
            SegmentAction::NewId(1),
            SegmentAction::NewId(2)
        ]);
        assert_eq!(t.table().len(), 2);
        let n = t.scene().len();
        assert_eq!(n, 250);

        let r = t.integrate(&f).unwrap();
        for s in &r.segments {
            assert_eq!(s.ratio, 1.0);
            assert_eq!(s.action, SegmentAction::Merge(s.local_id as GlobalId));
            assert_eq!(s.inserted, 0);
        }
        assert_eq!(t.scene().len(), n);
        assert_eq!(t.table().get(1).unwrap().len(), 2);
        assert_eq!(t.table().get(2).unwrap().len(), 2);
        assert_eq!(t.segments_integrated(), 4);
    }

    #[test]
    fn shifted_view_keeps_identity_with_swapped_local_ids() {
        let mut t = Tracker::new(FusionConfig::default()).unwrap();
        t.integrate(&two_blocks(0, [0.0; 3])).unwrap();
        let mut f = two_blocks(1, [0.01, 0.0, 0.0]);
        for l in &mut f.labels {
            *l = 3 - *l;
        }
        f.counts = [(1, 125), (2, 125)].into_iter().collect();
        let r = t.integrate(&f).unwrap();
        assert_eq!(r.segments[0].action, SegmentAction::Merge(2));
        assert_eq!(r.segments[1].action, SegmentAction::Merge(1));
        assert_eq!(t.scene().unique_ids().len(), 2);
    }

    #[test]
    fn disjoint_segment_gets_fresh_id() {
        let mut t = Tracker::new(FusionConfig::default()).unwrap();
        t.integrate(&cloud(0, &[([0.0, 0.0, 0.0], 1)])).unwrap();
        let r = t.integrate(&cloud(1, &[([0.0, 0.0, 0.0], 1), ([5.0, 0.0, 0.0], 2)])).unwrap();
        assert_eq!(r.segments[0].action, SegmentAction::Merge(1));
        assert_eq!(r.segments[1].action, SegmentAction::NewId(2));
    }

    #[test]
    fn fully_deduplicated_new_segment_is_absorbed() {
        let mut config = FusionConfig::default();
        config.overlap_threshold = 0.9;
        let mut t = Tracker::new(config).unwrap();
        // scene segment of four points in distinct voxels
        let base: Vec<_> = (0..4).map(|i| ([i as f64 * 0.05 + 0.001, 0.001, 0.001], 1)).collect();
        t.integrate(&cloud(0, &base)).unwrap();
        // out of match range of every scene point, but inside an occupied voxel
        let r = t.integrate(&cloud(1, &[([0.0199, 0.0199, 0.0199], 1)])).unwrap();
        assert_eq!(r.segments[0].ratio, 0.0);
        assert_eq!(r.segments[0].action, SegmentAction::Absorbed(1));
        assert_eq!(t.table().get(1).unwrap().len(), 2);
        assert_eq!(t.scene().next_global_id(), 2);
    }

    #[test]
    fn without_dedup_every_point_is_kept() {
        let mut config = FusionConfig::default();
        config.dedup = false;
        let mut t = Tracker::new(config).unwrap();
        let f = two_blocks(0, [0.0; 3]);
        t.integrate(&f).unwrap();
        t.integrate(&f).unwrap();
        assert_eq!(t.scene().len(), 500);
    }

    fn brute_match(frame: &[Point3<f64>], sub: &SubCloud, eps: f64) -> Vec<MatchPair> {
        let mut out = Vec::new();
        for (i, p) in frame.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for (j, q) in sub.positions.iter().enumerate() {
                let d2 = (p - q).norm_squared();
                if d2 < eps * eps && best.is_none_or(|b| (d2, sub.indices[j]) < b) {
                    best = Some((d2, sub.indices[j]));
                }
            }
            if let Some((_, s)) = best {
                out.push(MatchPair { frame: i, scene: s });
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matching_equals_quadratic_oracle(
            scene_pts in proptest::collection::vec((0i32..40, 0i32..40, 0i32..40), 0..120),
            frame_pts in proptest::collection::vec((0i32..40, 0i32..40, 0i32..40), 1..60),
        ) {
            // coordinates on a 0.01 lattice force many exact ties
            let mut scene = ScenePointCloud::new(0.02, false).unwrap();
            let id = scene.issue_id();
            for (x, y, z) in scene_pts {
                let position = Point3::new(x as f64 * 0.01, y as f64 * 0.01, z as f64 * 0.01);
                scene.insert(LabeledPoint { position, instance_id: id }).unwrap();
            }
            let mut frame = FramePointCloud::default();
            for (x, y, z) in frame_pts {
                frame.push(Point3::new(x as f64 * 0.01 + 0.003, y as f64 * 0.01, z as f64 * 0.01), 1);
            }
            let sub = crop_scene(&scene, &frame);
            let bounds = frame.bounds().unwrap().expanded(0.02);
            let expected: Vec<usize> = (0..scene.len()).filter(|&i| bounds.contains(&scene.points()[i].position)).collect();
            prop_assert_eq!(&sub.indices, &expected);
            prop_assert_eq!(match_points(&frame.positions, &sub, 0.02), brute_match(&frame.positions, &sub, 0.02));
        }

        #[test]
        fn dedup_keeps_first_per_voxel(
            pts in proptest::collection::vec((-50i32..50, -50i32..50, 0i32..3), 0..200),
        ) {
            let points: Vec<LabeledPoint> = pts.iter().enumerate().map(|(i, &(x, y, z))| LabeledPoint {
                position: Point3::new(x as f64 * 0.007, y as f64 * 0.007, z as f64 * 0.011),
                instance_id: i as GlobalId + 1,
            }).collect();
            let out = dedup_voxels(&points, 0.02);
            let mut first: BTreeMap<VoxelKey, usize> = BTreeMap::new();
            for (i, p) in points.iter().enumerate() {
                first.entry(voxel_key(&p.position, 0.02)).or_insert(i);
            }
            let mut expected: Vec<usize> = first.into_values().collect();
            expected.sort_unstable();
            prop_assert_eq!(out, expected.into_iter().map(|i| points[i]).collect::<Vec<_>>());
            prop_assert_eq!(dedup_voxels(&dedup_voxels(&points, 0.02), 0.02), dedup_voxels(&points, 0.02));
        }

        #[test]
        fn incremental_dedup_equals_batch(
            frames in proptest::collection::vec(proptest::collection::vec((0i32..30, 0i32..30), 1..40), 1..5),
        ) {
            let mut t = Tracker::new(FusionConfig::default()).unwrap();
            for (f, pts) in frames.iter().enumerate() {
                let pts: Vec<_> = pts.iter().map(|&(x, y)| ([x as f64 * 0.013, y as f64 * 0.013, 1.0], 1 + (x % 2) as LocalId)).collect();
                let before: Vec<LabeledPoint> = t.scene().points().to_vec();
                let report = t.integrate(&cloud(f as u64, &pts)).unwrap();
                let labels: BTreeMap<LocalId, GlobalId> = report.segments.iter().map(|s| (s.local_id, s.action.id())).collect();
                let mut concat = before;
                for (p, l) in &pts {
                    concat.push(LabeledPoint { position: Point3::from(*p), instance_id: labels[l] });
                }
                let batch = dedup_voxels(&concat, 0.02);
                // absorbed segments contribute no points, so their label never matters
                prop_assert_eq!(t.scene().points(), &batch[..]);
                for s in &report.segments {
                    prop_assert!((0.0..=1.0).contains(&s.ratio));
                    prop_assert!(s.overlaps.iter().all(|o| o.overlap <= s.frame_count));
                }
            }
        }
    }
}
