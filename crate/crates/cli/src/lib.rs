//! Command-line front end for the `opensu` mapping engine.
//!
//! Every subcommand prints one JSON document on stdout; logs go to stderr.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub mod commands;
pub mod manifest;

#[derive(Debug, Parser)]
#[command(name = "opensu", version, about = "Incremental open-vocabulary 3D instance mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse frame bundles into an instance map.
    Build(BuildArgs),
    /// Rank map instances against a query embedding.
    Query(QueryArgs),
    /// Write the spatial-reasoning prompt for a map.
    ExportPrompt(PromptArgs),
    /// Score a map against a labeled ground-truth PLY.
    Eval(EvalArgs),
    /// Render a synthetic scene into frame bundles plus ground truth.
    Synth(SynthArgs),
    /// Summarize a map.
    Stats(StatsArgs),
    /// Apply a fusion scheme to raw embedding files.
    Fuse(FuseArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Frame bundle root, or a directory containing `frames/`.
    #[arg(long)]
    pub frames: PathBuf,
    /// Output map directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with a full configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Match radius and dedup voxel, meters.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Overlap ratio threshold for reusing an ID.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scheme: Option<u8>,
    #[arg(long)]
    pub top_m: Option<usize>,
    #[arg(long)]
    pub dbscan_eps: Option<f64>,
    #[arg(long)]
    pub dbscan_min: Option<usize>,
    /// Mask border padding, pixels.
    #[arg(long)]
    pub px: Option<usize>,
    #[arg(long)]
    pub split_fraction: Option<f64>,
    #[arg(long)]
    pub bbox_max: Option<f64>,
    /// Keep every back-projected point instead of one per voxel.
    #[arg(long)]
    pub no_dedup: bool,
    /// Worker threads for frame preparation (default: all cores).
    #[arg(long, env = "OPENSU_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Raw f32 little-endian query vector.
    #[arg(long, conflicts_with = "vector", required_unless_present = "vector")]
    pub embedding: Option<PathBuf>,
    /// Comma-separated query vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub vector: Option<Vec<f64>>,
    #[arg(long)]
    pub top: Option<usize>,
    /// Write a similarity-coloured PLY of the map.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the simplified map as a JSON array.
    #[arg(long)]
    pub simplified: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Ground-truth PLY with x, y, z, label, instance.
    #[arg(long)]
    pub gt: PathBuf,
    /// Class queries JSON (default: `queries.json` next to the ground truth).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = opensu::metrics::DEFAULT_EVAL_VOXEL)]
    pub voxel: f64,
    /// IoU a top-1 retrieval needs to count as correct.
    #[arg(long, default_value_t = opensu::metrics::DEFAULT_RETRIEVAL_IOU)]
    pub retrieval_iou: f64,
    /// Also write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Scene description to render; otherwise a random scene is drawn.
    #[arg(long, conflicts_with = "seed")]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub objects: usize,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Depth noise standard deviation, meters.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 480)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Permit objects to overlap in the image.
    #[arg(long)]
    pub allow_occlusion: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub map: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scheme: u8,
    #[arg(long)]
    pub dim: usize,
    /// Crop embeddings of one detection (multi-scale step).
    #[arg(long, required_unless_present = "views")]
    pub crops: Option<PathBuf>,
    /// Crop ratios aligned with `--crops`; the best-fit crop leads the fusion.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Per-view instance embeddings (multi-view step).
    #[arg(long, conflicts_with = "crops")]
    pub views: Option<PathBuf>,
    /// Whole-image embeddings aligned with `--views`.
    #[arg(long, requires = "views")]
    pub globals: Option<PathBuf>,
    /// Write the fused vector as raw f32.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Build(a) => commands::build(&a),
        Command::Query(a) => commands::query(&a),
        Command::ExportPrompt(a) => commands::export_prompt(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Fuse(a) => commands::fuse(&a),
    }
}
