//! Evaluation against labeled ground truth: mAcc, F-mIoU and AP over
//! voxelized instance masks, plus partition agreement (adjusted Rand index).
//!
//! Both clouds live in one voxel domain. Every ground-truth point maps to its
//! voxel key. A predicted point is snapped to the ground-truth voxel whose
//! representative is nearest to its own voxel representative, if that is
//! closer than the voxel diagonal; otherwise it keeps its own key. Masks are
//! sets of keys.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::fusion::cosine;
use crate::io::ply::{read_vertices, ScalarType, VertexTable};
use crate::scene::{Embedding, GlobalId, InstanceMap};
use crate::spatial::{voxel_key, KdTree, VoxelKey};
use crate::{Error, Result};

/// Voxel size used when none is given, in meters.
pub const DEFAULT_EVAL_VOXEL: f64 = 0.025;
/// IoU needed for a retrieval to count in mAcc.
pub const DEFAULT_RETRIEVAL_IOU: f64 = 0.25;

/// Ground-truth cloud with per-point class and instance labels.
///
/// Instance `0` marks points outside every object; they belong to no mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub points: Vec<Point3<f64>>,
    pub labels: Vec<u32>,
    pub instances: Vec<u32>,
}

impl GroundTruthScene {
    pub fn new(points: Vec<Point3<f64>>, labels: Vec<u32>, instances: Vec<u32>) -> Result<Self> {
        if points.len() != labels.len() || points.len() != instances.len() {
            return Err(Error::InvalidInput("ground truth columns differ in length".into()));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("ground truth has non-finite points".into()));
        }
        let gt = Self { points, labels, instances };
        if gt.instance_classes()?.is_empty() {
            return Err(Error::Empty("ground truth has no labeled instances"));
        }
        Ok(gt)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Class of every nonzero instance; an instance spanning two classes is an error.
    pub fn instance_classes(&self) -> Result<BTreeMap<u32, u32>> {
        let mut out = BTreeMap::new();
        for (&inst, &label) in self.instances.iter().zip(&self.labels) {
            if inst == 0 {
                continue;
            }
            if let Some(prev) = out.insert(inst, label) {
                if prev != label {
                    return Err(Error::InvalidInput(format!("instance {inst} carries classes {prev} and {label}")));
                }
            }
        }
        Ok(out)
    }

    /// Binary little-endian PLY with double coordinates and int labels.
    pub fn to_ply(&self) -> Vec<u8> {
        let props = vec![
            ("x".to_string(), ScalarType::Double),
            ("y".to_string(), ScalarType::Double),
            ("z".to_string(), ScalarType::Double),
            ("label".to_string(), ScalarType::Int),
            ("instance".to_string(), ScalarType::Int),
        ];
        let mut table = VertexTable::new(props);
        for i in 0..self.len() {
            let p = &self.points[i];
            table.push_row(&[p.x, p.y, p.z, self.labels[i] as f64, self.instances[i] as f64]);
        }
        table.to_bytes()
    }

    /// Load from a PLY with vertex properties x, y, z, label, instance.
    pub fn from_ply(bytes: &[u8]) -> Result<Self> {
        let table = read_vertices(bytes)?;
        let col = |name: &str| {
            table.column(name).ok_or_else(|| Error::Format(format!("ground truth PLY lacks property {name:?}")))
        };
        let (x, y, z) = (col("x")?, col("y")?, col("z")?);
        let to_ids = |c: &[f64], what: &str| -> Result<Vec<u32>> {
            c.iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                        Ok(v as u32)
                    } else {
                        Err(Error::Format(format!("invalid {what} value {v}")))
                    }
                })
                .collect()
        };
        let labels = to_ids(col("label")?, "label")?;
        let instances = to_ids(col("instance")?, "instance")?;
        let points = (0..table.len()).map(|i| Point3::new(x[i], y[i], z[i])).collect();
        Self::new(points, labels, instances)
    }
}

/// First point of every voxel, in input order.
fn representatives(points: &[Point3<f64>], voxel: f64) -> (Vec<VoxelKey>, Vec<usize>) {
    let mut seen = HashMap::new();
    let mut keys = Vec::new();
    let mut reps = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let k = voxel_key(p, voxel);
        if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(k) {
            e.insert(());
            keys.push(k);
            reps.push(i);
        }
    }
    (keys, reps)
}

/// Voxel-deduplicated clouds and their correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPairing {
    /// Indices of the predicted points kept (one per voxel).
    pub pred: Vec<usize>,
    /// Indices of the ground-truth points kept (one per voxel).
    pub gt: Vec<usize>,
    /// `(pred point, gt point)` for every kept predicted point whose nearest
    /// kept ground-truth point is closer than the voxel diagonal.
    pub matches: Vec<(usize, usize)>,
}

/// Deduplicate both clouds per voxel and pair each kept predicted point with
/// its nearest kept ground-truth point within the voxel diagonal.
pub fn voxel_downsample_pair(pred: &[Point3<f64>], gt: &[Point3<f64>], voxel: f64) -> Result<VoxelPairing> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Empty("voxel pairing needs two nonempty clouds"));
    }
    if !(voxel > 0.0) {
        return Err(Error::InvalidInput(format!("voxel must be positive, got {voxel}")));
    }
    let (_, pred_reps) = representatives(pred, voxel);
    let (_, gt_reps) = representatives(gt, voxel);
    let gt_pts: Vec<Point3<f64>> = gt_reps.iter().map(|&i| gt[i]).collect();
    let tree = KdTree::new(&gt_pts);
    let radius = voxel * 3f64.sqrt();
    let matches = pred_reps
        .iter()
        .filter_map(|&i| tree.nearest_within(&pred[i], radius).map(|(j, _)| (i, gt_reps[j])))
        .collect();
    Ok(VoxelPairing { pred: pred_reps, gt: gt_reps, matches })
}

/// `|A ∩ B| / |A ∪ B|`; zero when both are empty.
pub fn iou<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Text query for one ground-truth class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassQuery {
    pub label: u32,
    pub name: String,
    pub embedding: Embedding,
}

/// Query file: one embedding per class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub classes: Vec<ClassQuery>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub voxel: f64,
    pub retrieval_iou: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { voxel: DEFAULT_EVAL_VOXEL, retrieval_iou: DEFAULT_RETRIEVAL_IOU }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: u32,
    pub name: String,
    pub gt_instances: usize,
    /// Fraction of ground-truth voxels in this class.
    pub weight: f64,
    pub accuracy: f64,
    pub iou: f64,
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub m_acc: f64,
    pub f_miou: f64,
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub voxel: f64,
    pub classes: Vec<ClassReport>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7}", "class", "n", "acc", "iou", "AP", "AP50", "AP25")?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<20} {:>5} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                c.name, c.gt_instances, c.accuracy, c.iou, c.ap, c.ap50, c.ap25
            )?;
        }
        writeln!(
            f,
            "mAcc {:.4}  F-mIoU {:.4}  AP {:.4}  AP50 {:.4}  AP25 {:.4}",
            self.m_acc, self.f_miou, self.ap, self.ap50, self.ap25
        )
    }
}

/// Predicted instance prepared for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMask {
    pub id: GlobalId,
    pub keys: BTreeSet<VoxelKey>,
    /// Similarity to every class query, in query order.
    pub scores: Vec<f64>,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn ap_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// All-point interpolated average precision of one ranked list.
///
/// `hits[k]` says whether the k-th ranked prediction is a true positive.
pub fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // running max from the right gives the precision envelope
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    hits.iter().zip(&precision).filter(|(h, _)| **h).fold(0.0, |acc, (_, p)| acc + p) / n_gt as f64
}

/// Greedy matching in list order: each prediction takes the unmatched
/// ground-truth mask with the highest IoU at or above `threshold` (ties to
/// the smaller ground-truth ID).
pub fn greedy_hits(ious: &[Vec<(u32, f64)>], threshold: f64) -> Vec<bool> {
    let mut taken = BTreeSet::new();
    ious.iter()
        .map(|row| {
            let best = row
                .iter()
                .filter(|(g, v)| *v >= threshold && !taken.contains(g))
                .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            match best {
                Some(&(g, _)) => {
                    taken.insert(g);
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Score `map` against `gt` with one text query per class.
pub fn evaluate(map: &InstanceMap, gt: &GroundTruthScene, queries: &QuerySet, options: &EvalOptions) -> Result<EvalReport> {
    if gt.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    let inst_class = gt.instance_classes()?;
    let gt_classes: BTreeSet<u32> = inst_class.values().copied().collect();
    let mut query_index: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, q) in queries.classes.iter().enumerate() {
        if query_index.insert(q.label, i).is_some() {
            return Err(Error::InvalidInput(format!("duplicate query for class {}", q.label)));
        }
        if q.embedding.dim() != map.embedding_dim && !map.is_empty() {
            return Err(Error::DimensionMismatch { expected: map.embedding_dim, found: q.embedding.dim() });
        }
    }
    if let Some(missing) = gt_classes.iter().find(|c| !query_index.contains_key(c)) {
        return Err(Error::InvalidInput(format!("no query for ground-truth class {missing}")));
    }

    // ground-truth masks
    let mut gt_masks: BTreeMap<u32, BTreeSet<VoxelKey>> = BTreeMap::new();
    for (p, &inst) in gt.points.iter().zip(&gt.instances) {
        if inst != 0 {
            gt_masks.entry(inst).or_default().insert(voxel_key(p, options.voxel));
        }
    }
    let preds = predicted_masks(map, gt, queries, options.voxel)?;

    // each prediction's class is the best-scoring query
    let assigned: Vec<Option<usize>> = preds
        .iter()
        .map(|p| {
            (0..p.scores.len())
                .min_by(|&a, &b| {
                    p.scores[b].total_cmp(&p.scores[a]).then(queries.classes[a].label.cmp(&queries.classes[b].label))
                })
        })
        .collect();

    let total_gt_voxels: usize = gt_classes
        .iter()
        .map(|&c| class_union(inst_class.iter().filter(|(_, &k)| k == c).map(|(i, _)| &gt_masks[i])).len())
        .sum();
    let thresholds = ap_thresholds();
    let mut classes = Vec::new();
    // class IoU times class voxel count, divided once at the end so perfect
    // IoUs sum to exactly one
    let mut weighted_iou = 0.0;
    for &c in &gt_classes {
        let qi = query_index[&c];
        let gt_ids: Vec<u32> = inst_class.iter().filter(|(_, &k)| k == c).map(|(&i, _)| i).collect();
        let n_c = gt_ids.len();
        let iou_row = |p: &PredictedMask| -> Vec<(u32, f64)> {
            gt_ids.iter().map(|&g| (g, iou(&p.keys, &gt_masks[&g]))).collect()
        };

        // retrieval accuracy: top n_c by this class's score
        let mut ranked: Vec<&PredictedMask> = preds.iter().collect();
        ranked.sort_by(|a, b| b.scores[qi].total_cmp(&a.scores[qi]).then(a.id.cmp(&b.id)));
        ranked.truncate(n_c);
        let rows: Vec<Vec<(u32, f64)>> = ranked.iter().map(|p| iou_row(p)).collect();
        let accuracy = greedy_hits(&rows, options.retrieval_iou).iter().filter(|&&h| h).count() as f64 / n_c as f64;

        // semantic IoU of class unions
        let gt_union = class_union(gt_ids.iter().map(|g| &gt_masks[g]));
        let pred_union = class_union(
            preds.iter().zip(&assigned).filter(|(_, a)| **a == Some(qi)).map(|(p, _)| &p.keys),
        );
        let class_iou = iou(&pred_union, &gt_union);
        weighted_iou += gt_union.len() as f64 * class_iou;

        // detection AP over predictions assigned to this class
        let mut dets: Vec<&PredictedMask> =
            preds.iter().zip(&assigned).filter(|(_, a)| **a == Some(qi)).map(|(p, _)| p).collect();
        dets.sort_by(|a, b| b.scores[qi].total_cmp(&a.scores[qi]).then(a.id.cmp(&b.id)));
        let rows: Vec<Vec<(u32, f64)>> = dets.iter().map(|p| iou_row(p)).collect();
        let ap_at = |t: f64| average_precision(&greedy_hits(&rows, t), n_c);
        let ap = thresholds.iter().map(|&t| ap_at(t)).sum::<f64>() / thresholds.len() as f64;

        classes.push(ClassReport {
            label: c,
            name: queries.classes[qi].name.clone(),
            gt_instances: n_c,
            weight: gt_union.len() as f64 / total_gt_voxels as f64,
            accuracy,
            iou: class_iou,
            ap,
            ap50: ap_at(0.5),
            ap25: ap_at(0.25),
        });
    }
    let mean = |f: fn(&ClassReport) -> f64| classes.iter().map(f).sum::<f64>() / classes.len() as f64;
    Ok(EvalReport {
        m_acc: mean(|c| c.accuracy),
        f_miou: weighted_iou / total_gt_voxels as f64,
        ap: mean(|c| c.ap),
        ap50: mean(|c| c.ap50),
        ap25: mean(|c| c.ap25),
        voxel: options.voxel,
        classes,
    })
}

fn class_union<'a>(masks: impl Iterator<Item = &'a BTreeSet<VoxelKey>>) -> BTreeSet<VoxelKey> {
    masks.flat_map(|m| m.iter().copied()).collect()
}

/// Voxel masks and class scores of every map instance, in map order.
pub fn predicted_masks(
    map: &InstanceMap,
    gt: &GroundTruthScene,
    queries: &QuerySet,
    voxel: f64,
) -> Result<Vec<PredictedMask>> {
    let labeled = map.labeled_points();
    let positions: Vec<Point3<f64>> = labeled.iter().map(|p| p.position).collect();
    let mut snap: HashMap<VoxelKey, VoxelKey> = HashMap::new();
    if !positions.is_empty() {
        let pairing = voxel_downsample_pair(&positions, &gt.points, voxel)?;
        for (pi, gi) in pairing.matches {
            snap.insert(voxel_key(&positions[pi], voxel), voxel_key(&gt.points[gi], voxel));
        }
    }
    let mut masks: BTreeMap<GlobalId, BTreeSet<VoxelKey>> = BTreeMap::new();
    for p in &labeled {
        let own = voxel_key(&p.position, voxel);
        masks.entry(p.instance_id).or_default().insert(snap.get(&own).copied().unwrap_or(own));
    }
    map.instances
        .iter()
        .map(|inst| {
            let scores = queries
                .classes
                .iter()
                .map(|q| cosine(&q.embedding, &inst.embedding))
                .collect::<Result<Vec<_>>>()?;
            Ok(PredictedMask { id: inst.global_id, keys: masks.remove(&inst.global_id).unwrap_or_default(), scores })
        })
        .collect()
}

/// Adjusted Rand index between two labelings of the same items.
///
/// Returns 1 when both labelings are trivial in the same way (the index is
/// undefined there).
pub fn adjusted_rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let mut table: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let pairs = |k: u64| (k * k.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&k| pairs(k)).sum();
    let sum_a: f64 = rows.values().map(|&k| pairs(k)).sum();
    let sum_b: f64 = cols.values().map(|&k| pairs(k)).sum();
    let expected = sum_a * sum_b / pairs(n as u64);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// ARI between map instance IDs and the ground-truth instance of the nearest
/// ground-truth point, over all map points.
pub fn map_ari(map: &InstanceMap, gt: &GroundTruthScene) -> Result<f64> {
    let tree = KdTree::new(&gt.points);
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for p in map.labeled_points() {
        let (j, _) = tree.nearest(&p.position).ok_or(Error::Empty("ground truth"))?;
        pred.push(p.instance_id);
        truth.push(gt.instances[j]);
    }
    adjusted_rand_index(&pred, &truth)
}
