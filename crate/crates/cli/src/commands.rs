//! Subcommand implementations. Each returns the JSON printed on stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use opensu::fusion::{best_fit_first, FusionScheme};
use opensu::io::{
    export_ply, list_frames, read_embedding, read_embeddings, read_frame_bundle, read_map, read_map_document,
    resolve_frames_root, write_embeddings, write_frame_bundle, write_map, Coloring,
};
use opensu::metrics::{evaluate, map_ari, EvalOptions, GroundTruthScene, QuerySet};
use opensu::pipeline::{prepare_frame, MapBuilder, PreparedFrame};
use opensu::projection::sample_frames;
use opensu::retrieval::{build_simplified_map, build_spatial_prompt, query as rank};
use opensu::scene::{CameraIntrinsics, Embedding, FusionConfig};
use opensu::synth::{NoiseModel, RandomSceneOptions, SyntheticScene};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::manifest::{combine_digests, hash_frame_dir, write_atomic, write_json_atomic, RunManifest, StageTimings, RUN_MANIFEST_FILE};
use crate::{BuildArgs, EvalArgs, FuseArgs, PromptArgs, QueryArgs, StatsArgs, SynthArgs};

pub const SCENE_FILE: &str = "scene.json";
pub const GT_FILE: &str = "gt.ply";
pub const QUERIES_FILE: &str = "queries.json";
pub const FRAMES_DIR: &str = "frames";

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Resolve the configuration: file (or defaults), then flag overrides.
pub fn build_config(args: &BuildArgs) -> Result<FusionConfig> {
    let mut c: FusionConfig = match &args.config {
        Some(path) => read_json_file(path)?,
        None => FusionConfig::default(),
    };
    if let Some(v) = args.stride {
        c.stride = v;
    }
    if let Some(v) = args.epsilon {
        c.voxel = v;
    }
    if let Some(v) = args.rho {
        c.overlap_threshold = v;
    }
    if let Some(v) = args.scheme {
        c.scheme = FusionScheme::try_from(v).map_err(|e| anyhow!(e))?;
    }
    if let Some(v) = args.top_m {
        c.top_images = v;
    }
    if let Some(v) = args.dbscan_eps {
        c.dbscan_eps = v;
    }
    if let Some(v) = args.dbscan_min {
        c.dbscan_min_points = v;
    }
    if let Some(v) = args.px {
        c.border_px = v;
    }
    if let Some(v) = args.split_fraction {
        c.split_fraction = v;
    }
    if let Some(v) = args.bbox_max {
        c.bbox_area_max = v;
    }
    if args.no_dedup {
        c.dedup = false;
    }
    c.validate().context("invalid configuration")?;
    Ok(c)
}

fn thread_count(requested: Option<usize>) -> usize {
    match requested {
        Some(n) if n > 0 => n,
        _ => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

pub fn build(args: &BuildArgs) -> Result<Value> {
    let start = Instant::now();
    let config = build_config(args)?;
    let root = resolve_frames_root(&args.frames);
    let available = list_frames(&root).with_context(|| format!("listing frames in {}", root.display()))?;
    if available.is_empty() {
        bail!("no frames in {}", root.display());
    }
    let selected: Vec<u64> = sample_frames(available.len(), config.stride).into_iter().map(|i| available[i]).collect();
    let threads = thread_count(args.threads);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    log::info!("building from {} of {} frames with {threads} threads", selected.len(), available.len());

    let mut builder = MapBuilder::new(config.clone())?;
    let mut digests = Vec::with_capacity(selected.len());
    let mut prepare_time = Duration::ZERO;
    // bounded batches keep memory flat on long sequences
    for batch in selected.chunks(threads * 4) {
        let t = Instant::now();
        let prepared: Vec<Result<(u64, [u8; 32], PreparedFrame)>> = pool.install(|| {
            batch
                .par_iter()
                .map(|&idx| {
                    let digest = hash_frame_dir(&opensu::io::bundle::frame_dir(&root, idx))?;
                    let bundle = read_frame_bundle(&root, idx).with_context(|| format!("reading frame {idx}"))?;
                    Ok((idx, digest, prepare_frame(&bundle, &config)))
                })
                .collect()
        });
        prepare_time += t.elapsed();
        for item in prepared {
            let (idx, digest, frame) = item?;
            builder.push(&frame).with_context(|| format!("integrating frame {idx}"))?;
            digests.push((idx, digest));
        }
    }
    let (map, mut stats) = builder.finish().context("finalizing map")?;
    stats.frames_available = available.len();
    stats.prepare_seconds = prepare_time.as_secs_f64();

    let t = Instant::now();
    write_map(&map, &args.out).with_context(|| format!("writing map to {}", args.out.display()))?;
    let write_seconds = t.elapsed().as_secs_f64();
    let manifest_path = args.out.join(RUN_MANIFEST_FILE);
    let outputs = [opensu::io::map::MAP_FILE, opensu::io::map::POINTS_FILE, opensu::io::map::EMBEDDINGS_FILE]
        .iter()
        .map(|f| args.out.join(f))
        .collect();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config,
        frames_root: root,
        frames_available: available.len(),
        frames_processed: selected.len(),
        frame_indices: selected,
        input_sha256: combine_digests(digests.iter().map(|(i, d)| (*i, d))),
        threads,
        timings: StageTimings {
            prepare_seconds: stats.prepare_seconds,
            integrate_seconds: stats.integrate_seconds,
            finalize_seconds: stats.finalize_seconds,
            write_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
        stats,
        outputs,
    };
    write_json_atomic(&manifest_path, &manifest)?;
    log::info!("wrote {} instances to {}", map.len(), args.out.display());
    Ok(json!({
        "map": args.out,
        "manifest": manifest_path,
        "instances": map.len(),
        "frames_processed": manifest.frames_processed,
        "input_sha256": manifest.input_sha256,
        "stats": manifest.stats,
    }))
}

pub fn query(args: &QueryArgs) -> Result<Value> {
    let map = read_map(&args.map).with_context(|| format!("reading map {}", args.map.display()))?;
    let q = match (&args.embedding, &args.vector) {
        (Some(path), _) => read_embedding(path)?,
        (None, Some(v)) => Embedding::new(v.clone()),
        (None, None) => bail!("pass --embedding or --vector"),
    };
    let result = rank(&map, &q)?;
    if let Some(path) = &args.heatmap {
        let bytes = export_ply(&map.labeled_points(), &Coloring::BySimilarity(result.scores()))?;
        write_atomic(path, &bytes)?;
    }
    let ranked = match args.top {
        Some(n) => result.top(n),
        None => &result.ranked[..],
    };
    let names: Vec<Value> = ranked
        .iter()
        .map(|r| {
            let inst = map.get(r.global_id).expect("ranked IDs come from the map");
            json!({
                "global_id": r.global_id,
                "score": r.score,
                "name": inst.refined_name.as_deref().unwrap_or(&inst.name),
            })
        })
        .collect();
    Ok(json!({ "best": result.best, "ranked": names }))
}

pub fn export_prompt(args: &PromptArgs) -> Result<Value> {
    let map = read_map(&args.map).with_context(|| format!("reading map {}", args.map.display()))?;
    let simplified = build_simplified_map(&map);
    let prompt = build_spatial_prompt(&simplified);
    write_atomic(&args.out, prompt.as_bytes())?;
    if let Some(path) = &args.simplified {
        write_json_atomic(path, &simplified)?;
    }
    Ok(json!({ "prompt": args.out, "instances": simplified.len(), "bytes": prompt.len() }))
}

pub fn eval(args: &EvalArgs) -> Result<Value> {
    let map = read_map(&args.map).with_context(|| format!("reading map {}", args.map.display()))?;
    let gt_bytes = fs::read(&args.gt).with_context(|| format!("reading {}", args.gt.display()))?;
    let gt = GroundTruthScene::from_ply(&gt_bytes).with_context(|| format!("parsing {}", args.gt.display()))?;
    let queries_path = match &args.queries {
        Some(p) => p.clone(),
        None => args.gt.parent().unwrap_or(Path::new(".")).join(QUERIES_FILE),
    };
    let queries: QuerySet = read_json_file(&queries_path)?;
    let options = EvalOptions { voxel: args.voxel, retrieval_iou: args.retrieval_iou };
    let report = evaluate(&map, &gt, &queries, &options)?;
    let ari = if map.is_empty() { 0.0 } else { map_ari(&map, &gt)? };
    eprint!("{report}");
    let out = json!({ "report": report, "ari": ari });
    if let Some(path) = &args.out {
        write_json_atomic(path, &out)?;
    }
    Ok(out)
}

pub fn synth(args: &SynthArgs) -> Result<Value> {
    let scene: SyntheticScene = match &args.scene {
        Some(path) => read_json_file(path)?,
        None => {
            let options = RandomSceneOptions {
                objects: args.objects,
                frames: args.frames,
                embedding_dim: args.dim,
                intrinsics: CameraIntrinsics::new(
                    525.0 * args.width as f64 / 640.0,
                    525.0 * args.width as f64 / 640.0,
                    (args.width as f64 - 1.0) / 2.0,
                    (args.height as f64 - 1.0) / 2.0,
                    args.width,
                    args.height,
                )?,
                noise: NoiseModel { depth_sigma: args.sigma, dropout: args.dropout },
                separate_in_image: !args.allow_occlusion,
            };
            SyntheticScene::random(args.seed, &options)?
        }
    };
    let out = scene.render().context("rendering scene")?;
    let frames_root = args.out.join(FRAMES_DIR);
    fs::create_dir_all(&frames_root).with_context(|| format!("creating {}", frames_root.display()))?;
    for bundle in &out.bundles {
        write_frame_bundle(bundle, &frames_root).with_context(|| format!("writing frame {}", bundle.frame_index))?;
    }
    write_json_atomic(&args.out.join(SCENE_FILE), &scene)?;
    let mut written: Vec<PathBuf> = vec![args.out.join(SCENE_FILE), frames_root.clone()];
    if let Some(gt) = &out.ground_truth {
        write_atomic(&args.out.join(GT_FILE), &gt.to_ply())?;
        write_json_atomic(&args.out.join(QUERIES_FILE), &scene.queries())?;
        written.push(args.out.join(GT_FILE));
        written.push(args.out.join(QUERIES_FILE));
    }
    Ok(json!({
        "out": args.out,
        "frames": out.bundles.len(),
        "objects": scene.objects.len(),
        "gt_points": out.ground_truth.as_ref().map_or(0, |g| g.len()),
        "notices": out.notices,
        "files": written,
    }))
}

pub fn stats(args: &StatsArgs) -> Result<Value> {
    let doc = read_map_document(&args.map).with_context(|| format!("reading map {}", args.map.display()))?;
    let total: usize = doc.instances.iter().map(|r| r.point_count).sum();
    let q: usize = doc.instances.iter().map(|r| r.observations.len()).sum();
    let instances: Vec<Value> = doc
        .instances
        .iter()
        .map(|r| {
            json!({
                "global_id": r.global_id,
                "name": r.name,
                "refined_name": r.refined_name,
                "points": r.point_count,
                "observations": r.observations.len(),
            })
        })
        .collect();
    Ok(json!({
        "instances": doc.instances.len(),
        "map_points": total,
        "scene_points": doc.scene_points,
        "observations": q,
        "embedding_dim": doc.embedding_dim,
        "per_instance": instances,
    }))
}

pub fn fuse(args: &FuseArgs) -> Result<Value> {
    let scheme = FusionScheme::try_from(args.scheme).map_err(|e| anyhow!(e))?;
    let fused = if let Some(path) = &args.crops {
        let crops = read_embeddings(path, args.dim)?;
        let ordered = match &args.ratios {
            Some(r) => best_fit_first(&crops, r)?,
            None => crops,
        };
        scheme.fuse_crops(&ordered)?
    } else {
        let path = args.views.as_ref().expect("clap requires crops or views");
        let views = read_embeddings(path, args.dim)?;
        let globals = match &args.globals {
            Some(g) => read_embeddings(g, args.dim)?,
            None => {
                ensure!(!scheme.global_multiview(), "{scheme} needs --globals");
                Vec::new()
            }
        };
        scheme.fuse_views(&views, &globals)?
    };
    if let Some(path) = &args.out {
        write_embeddings(path, std::slice::from_ref(&fused))?;
    }
    Ok(json!({ "scheme": scheme.number(), "dim": fused.dim(), "embedding": fused.as_slice() }))
}
