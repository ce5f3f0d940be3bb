//! End-to-end map building: sample, pad, filter, back-project, integrate,
//! finalize.
//!
//! Frame preparation is a pure function of one bundle, so callers may run it
//! in parallel; integration must see frames in ascending index order.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::postprocess::{finalize_map, FrameCatalog};
use crate::projection::{backproject, filter_instances, pad_bundle, sample_frames, FramePointCloud};
use crate::scene::{FrameBundle, FusionConfig, InstanceMap};
use crate::tracker::{FrameReport, SegmentAction, Tracker};
use crate::{Error, Result};

/// A bundle after padding and filtering, with its back-projected cloud.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub bundle: FrameBundle,
    pub cloud: FramePointCloud,
    /// Detections removed by padding or filtering.
    pub dropped: usize,
}

pub fn prepare_frame(bundle: &FrameBundle, config: &FusionConfig) -> PreparedFrame {
    let padded = if config.border_px > 0 { pad_bundle(bundle, config.border_px) } else { bundle.clone() };
    let filtered = filter_instances(&padded, config);
    let cloud = backproject(&filtered);
    PreparedFrame { dropped: bundle.instances.len() - filtered.instances.len(), bundle: filtered, cloud }
}

/// Counters and stage timings of one build.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildStats {
    pub frames_available: usize,
    pub frames_integrated: usize,
    pub detections_dropped: usize,
    pub segments: usize,
    pub merges: usize,
    pub new_ids: usize,
    pub absorbed: usize,
    pub scene_points: usize,
    pub instances: usize,
    /// Largest cropped search space seen by any frame.
    pub max_candidates: usize,
    pub prepare_seconds: f64,
    pub integrate_seconds: f64,
    pub finalize_seconds: f64,
}

/// Incremental builder. Feed prepared frames in order, then [`finish`](Self::finish).
#[derive(Debug)]
pub struct MapBuilder {
    tracker: Tracker,
    catalog: FrameCatalog,
    stats: BuildStats,
    last_frame: Option<u64>,
    integrate_time: Duration,
}

impl MapBuilder {
    pub fn new(config: FusionConfig) -> Result<Self> {
        Ok(Self {
            tracker: Tracker::new(config)?,
            catalog: FrameCatalog::new(),
            stats: BuildStats::default(),
            last_frame: None,
            integrate_time: Duration::ZERO,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        self.tracker.config()
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn push(&mut self, frame: &PreparedFrame) -> Result<FrameReport> {
        let idx = frame.bundle.frame_index;
        if self.last_frame.is_some_and(|last| idx <= last) {
            return Err(Error::InvalidInput(format!("frame {idx} arrived out of order")));
        }
        let start = Instant::now();
        self.catalog.add_frame(&frame.bundle)?;
        let report = self.tracker.integrate(&frame.cloud)?;
        self.integrate_time += start.elapsed();
        self.last_frame = Some(idx);

        let s = &mut self.stats;
        s.frames_integrated += 1;
        s.detections_dropped += frame.dropped;
        s.segments += report.segments.len();
        s.max_candidates = s.max_candidates.max(report.candidates);
        for seg in &report.segments {
            match seg.action {
                SegmentAction::Merge(_) => s.merges += 1,
                SegmentAction::NewId(_) => s.new_ids += 1,
                SegmentAction::Absorbed(_) => s.absorbed += 1,
            }
        }
        Ok(report)
    }

    pub fn finish(self) -> Result<(InstanceMap, BuildStats)> {
        let start = Instant::now();
        let config = self.tracker.config().clone();
        let mut stats = self.stats;
        let (scene, table) = self.tracker.into_parts();
        let map = finalize_map(&scene, &table, &self.catalog, &config)?;
        stats.scene_points = scene.len();
        stats.instances = map.len();
        stats.integrate_seconds = self.integrate_time.as_secs_f64();
        stats.finalize_seconds = start.elapsed().as_secs_f64();
        Ok((map, stats))
    }
}

/// Build a map from in-memory bundles (sorted by frame index internally),
/// using every `config.stride`-th frame.
pub fn build_map(bundles: &[FrameBundle], config: &FusionConfig) -> Result<(InstanceMap, BuildStats)> {
    config.validate()?;
    if bundles.is_empty() {
        return Err(Error::Empty("no frames"));
    }
    let mut order: Vec<&FrameBundle> = bundles.iter().collect();
    order.sort_by_key(|b| b.frame_index);
    let mut builder = MapBuilder::new(config.clone())?;
    let mut prepare = Duration::ZERO;
    for i in sample_frames(order.len(), config.stride) {
        let start = Instant::now();
        let frame = prepare_frame(order[i], config);
        prepare += start.elapsed();
        builder.push(&frame)?;
    }
    let (map, mut stats) = builder.finish()?;
    stats.frames_available = bundles.len();
    stats.prepare_seconds = prepare.as_secs_f64();
    Ok((map, stats))
}
