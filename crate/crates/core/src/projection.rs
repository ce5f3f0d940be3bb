//! Per-frame preparation: frame sampling, mask border padding, instance
//! filtering and back-projection of labeled pixels into world space.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Point3;

use crate::scene::{is_valid_depth, FrameBundle, FusionConfig, InstanceMask, LocalId};
use crate::spatial::Aabb;

/// Positions `0, s, 2s, …` below `n_total`.
pub fn sample_frames(n_total: usize, stride: usize) -> Vec<usize> {
    (0..n_total).step_by(stride.max(1)).collect()
}

/// Sliding-window reduction over `[i - px, i + px]` for every `i` in
/// `px..n - px` (van Herk / Gil-Werman, O(1) per element).
fn sliding_window(input: &[u16], px: usize, op: fn(u16, u16) -> u16, out: &mut [u16]) {
    let n = input.len();
    let w = 2 * px + 1;
    if n < w {
        return;
    }
    let mut prefix = vec![0u16; n];
    let mut suffix = vec![0u16; n];
    for start in (0..n).step_by(w) {
        let end = (start + w).min(n);
        prefix[start] = input[start];
        for j in start + 1..end {
            prefix[j] = op(prefix[j - 1], input[j]);
        }
        suffix[end - 1] = input[end - 1];
        for j in (start..end - 1).rev() {
            suffix[j] = op(suffix[j + 1], input[j]);
        }
    }
    for i in px..n - px {
        out[i] = op(suffix[i - px], prefix[i + px]);
    }
}

/// Separate instance masks by a border of `px` pixels.
///
/// A labeled pixel keeps its ID only if every pixel within Chebyshev
/// distance `px` lies inside the image and carries either the same ID or no
/// ID. Contact with unlabeled pixels does not erode, so the result is
/// idempotent for a fixed `px`.
pub fn pad_mask_borders(mask: &InstanceMask, px: usize) -> InstanceMask {
    if px == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let mut out = InstanceMask::filled(w, h, 0);
    if w < 2 * px + 1 || h < 2 * px + 1 {
        return out;
    }
    // smallest nonzero ID (0 mapped above every ID) and largest ID per window
    let min_nz = |a: u16, b: u16| a.min(b);
    let max = |a: u16, b: u16| a.max(b);
    let src = mask.as_slice();
    let lifted: Vec<u16> = src.iter().map(|&id| if id == 0 { u16::MAX } else { id }).collect();

    let mut row_min = vec![0u16; w * h];
    let mut row_max = vec![0u16; w * h];
    for v in 0..h {
        let r = v * w..(v + 1) * w;
        sliding_window(&lifted[r.clone()], px, min_nz, &mut row_min[r.clone()]);
        sliding_window(&src[r.clone()], px, max, &mut row_max[r]);
    }

    let mut col_in = vec![0u16; h];
    let mut col_min = vec![0u16; h];
    let mut col_max = vec![0u16; h];
    let dst = out.as_mut_slice();
    for u in px..w - px {
        for v in 0..h {
            col_in[v] = row_min[v * w + u];
        }
        sliding_window(&col_in, px, min_nz, &mut col_min);
        for v in 0..h {
            col_in[v] = row_max[v * w + u];
        }
        sliding_window(&col_in, px, max, &mut col_max);
        for v in px..h - px {
            let id = src[v * w + u];
            if id != 0 && col_min[v] == id && col_max[v] == id {
                dst[v * w + u] = id;
            }
        }
    }
    out
}

/// Pad the bundle's mask and drop instances whose region vanished.
pub fn pad_bundle(bundle: &FrameBundle, px: usize) -> FrameBundle {
    let mask = pad_mask_borders(&bundle.mask, px);
    let present: BTreeSet<LocalId> = mask.as_slice().iter().copied().filter(|&id| id != 0).collect();
    FrameBundle {
        mask,
        instances: bundle.instances.iter().filter(|r| present.contains(&r.local_id)).cloned().collect(),
        ..bundle.clone()
    }
}

/// Drop background-named and oversized detections, clearing their pixels.
pub fn filter_instances(bundle: &FrameBundle, config: &FusionConfig) -> FrameBundle {
    let (keep, drop): (Vec<_>, Vec<_>) = bundle.instances.iter().cloned().partition(|r| {
        !config.is_background(&r.name) && r.area_fraction(&bundle.intrinsics) <= config.bbox_area_max
    });
    let dropped: BTreeSet<LocalId> = drop.iter().map(|r| r.local_id).collect();
    let mut mask = bundle.mask.clone();
    if !dropped.is_empty() {
        for id in mask.as_mut_slice() {
            if dropped.contains(id) {
                *id = 0;
            }
        }
    }
    FrameBundle { mask, instances: keep, ..bundle.clone() }
}

/// World-frame labeled points from one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FramePointCloud {
    pub frame_index: u64,
    pub positions: Vec<Point3<f64>>,
    pub labels: Vec<LocalId>,
    /// Points per local ID; only IDs with at least one point appear.
    pub counts: BTreeMap<LocalId, usize>,
}

impl FramePointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.positions)
    }

    pub fn push(&mut self, position: Point3<f64>, label: LocalId) {
        self.positions.push(position);
        self.labels.push(label);
        *self.counts.entry(label).or_insert(0) += 1;
    }
}

/// Lift every labeled pixel with valid depth into world space, scanning rows
/// top to bottom and columns left to right.
pub fn backproject(bundle: &FrameBundle) -> FramePointCloud {
    let k = &bundle.intrinsics;
    let mut cloud = FramePointCloud { frame_index: bundle.frame_index, ..Default::default() };
    for v in 0..k.height {
        for u in 0..k.width {
            let label = bundle.mask.get(u, v);
            if label == 0 {
                continue;
            }
            let d = bundle.depth.get(u, v);
            if !is_valid_depth(d) {
                continue;
            }
            let cam = k.unproject(u as f64, v as f64, d);
            cloud.push(bundle.pose.transform_point(&cam), label);
        }
    }
    cloud
}

/// Pixel coordinates and depth of a world point seen from `bundle`'s camera.
pub fn project_world(bundle: &FrameBundle, p: &Point3<f64>) -> (f64, f64, f64) {
    bundle.intrinsics.project(&bundle.pose.inverse_transform_point(p))
}
