//! The four pipeline stages, each reading its inputs from the config and the
//! previous stage's files under `out_dir`:
//!
//! | stage   | writes                                                        |
//! |---------|---------------------------------------------------------------|
//! | fill    | `fill/filled.asc`, `fill/depth.asc`                           |
//! | prompts | `prompts/depressions.asc`, `prompts/<patch>.json`, `prompts/<patch>.window.json` |
//! | segment | `segment/probability.asc`, `segment/mask.asc`                 |
//! | eval    | `eval/report.json`, `eval/report.csv`                         |
//!
//! Patches are processed on a pool of `config.workers` threads. Results are
//! collected in window order and stitched by one writer, so output bytes do
//! not depend on the pool size.

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;

use crate::ascii_grid::{read_ascii_grid, read_mask_grid, write_ascii_grid, write_mask_grid};
use crate::config::{BackendConfig, FillMode, PipelineConfig, Stage};
use crate::error::{Error, Result};
use crate::eval::{detection_curve, metrics_from_confusion, pixel_confusion, write_table_csv, MetricsReport};
use crate::hydro::fill_depressions;
use crate::labeling::{
    boxes_from_components, filter_components, label_components, label_mask, retain_components, BoxesDocument,
};
use crate::pnm::{read_ppm, write_pgm, RgbImage};
use crate::raster::{invert_depth, BinaryMask, Raster, DEFAULT_NODATA};
use crate::segmenter::{
    depression_echo_backend, replay_backend, segment_patch, HttpBackend, SegmentBackend, SegmentError,
};
use crate::synth::{gen_terrain, write_scene, SynthParams, SynthScene, DEM_FILE, GT_FILE, RGB_FILE};
use crate::tiling::{extract_tile, plan_tiles, Stitcher, TileWindow};

pub const FILL_DIR: &str = "fill";
pub const PROMPTS_DIR: &str = "prompts";
pub const SEGMENT_DIR: &str = "segment";
pub const EVAL_DIR: &str = "eval";

pub const FILLED_FILE: &str = "filled.asc";
pub const DEPTH_FILE: &str = "depth.asc";
pub const DEPRESSIONS_FILE: &str = "depressions.asc";
pub const PROBABILITY_FILE: &str = "probability.asc";
pub const MASK_FILE: &str = "mask.asc";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
/// Config written next to a synthetic scene.
pub const SCENE_CONFIG_FILE: &str = "scene.conf";

fn stage_dir(config: &PipelineConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

/// Remove and recreate a stage directory so reruns leave no stale files.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("sinksam-worker-{i}"))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))
}

/// Run `f` on every window in parallel, returning results in window order.
fn map_windows<T, F>(config: &PipelineConfig, windows: &[TileWindow], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&TileWindow) -> Result<T> + Sync + Send,
{
    pool(config.workers)?.install(|| windows.par_iter().map(&f).collect())
}

fn plan(config: &PipelineConfig, width: usize, height: usize) -> Result<Vec<TileWindow>> {
    plan_tiles(width, height, config.tile).map_err(|e| {
        Error::Config(format!(
            "cannot tile a {width}x{height} mosaic with tile.patch = {}: {e}",
            config.tile.patch
        ))
    })
}

/// The surface the fill stage works on, inverted when configured.
pub fn load_surface(config: &PipelineConfig) -> Result<Raster> {
    let path = config
        .depth_raster
        .as_ref()
        .ok_or_else(|| Error::Config("depth_raster is not set".into()))?;
    let raster = read_ascii_grid(path)?;
    if config.invert_depth {
        invert_depth(&raster)
    } else {
        Ok(raster)
    }
}

/// Fill per tile (stitched with the merge rule) or over the whole mosaic.
/// Tiles with no valid cell contribute nothing.
pub fn compute_depth(config: &PipelineConfig, surface: &Raster) -> Result<Raster> {
    match config.fill_mode {
        FillMode::Mosaic => Ok(fill_depressions(surface)?.depth),
        FillMode::Patch => {
            let windows = plan(config, surface.width(), surface.height())?;
            let tiles = map_windows(config, &windows, |w| {
                let tile = extract_tile(surface, w)?;
                if tile.valid_count() == 0 {
                    return Ok(None);
                }
                debug!("fill {}", w.id());
                Ok(Some(fill_depressions(&tile)?.depth))
            })?;
            let mut stitcher = Stitcher::new(surface.width(), surface.height(), config.merge);
            for (w, tile) in windows.iter().zip(&tiles) {
                if let Some(t) = tile {
                    stitcher.add(w, t)?;
                }
            }
            let depth = stitcher.finish()?;
            // an all-empty stitch falls back to the default sentinel and geotransform
            let (from, to) = (depth.nodata(), nodata_for(surface));
            let values = depth.values().iter().map(|&v| if v == from { to } else { v }).collect();
            Raster::new(depth.width(), depth.height(), values, to, surface.geo())
        }
    }
}

fn nodata_for(surface: &Raster) -> f64 {
    if surface.nodata() >= 0.0 {
        DEFAULT_NODATA
    } else {
        surface.nodata()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillSummary {
    pub width: usize,
    pub height: usize,
    pub depressed_px: usize,
    pub max_depth: f64,
}

pub fn cmd_fill(config: &PipelineConfig) -> Result<FillSummary> {
    config.check_inputs(Stage::Fill)?;
    let surface = load_surface(config)?;
    info!("fill: {}x{} surface, {:?} mode", surface.width(), surface.height(), config.fill_mode);
    let depth = compute_depth(config, &surface)?;
    let filled_values = surface
        .values()
        .iter()
        .zip(depth.values())
        .enumerate()
        .map(|(i, (&s, &d))| if surface.is_nodata(i) { s } else { s + d })
        .collect();
    let filled = surface.with_values(filled_values)?;

    let dir = stage_dir(config, FILL_DIR);
    fresh_dir(&dir)?;
    write_ascii_grid(&filled, dir.join(FILLED_FILE))?;
    write_ascii_grid(&depth, dir.join(DEPTH_FILE))?;

    let depressed: Vec<f64> = depth
        .values()
        .iter()
        .enumerate()
        .filter(|&(i, &d)| !depth.is_nodata(i) && d > 0.0)
        .map(|(_, &d)| d)
        .collect();
    let summary = FillSummary {
        width: depth.width(),
        height: depth.height(),
        depressed_px: depressed.len(),
        max_depth: depressed.iter().copied().fold(0.0, f64::max),
    };
    info!("fill: {} depressed cells, max depth {}", summary.depressed_px, summary.max_depth);
    Ok(summary)
}

fn read_stage_grid(config: &PipelineConfig, stage: &str, file: &str, producer: &str) -> Result<Raster> {
    let path = stage_dir(config, stage).join(file);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "{} not found; run `{producer}` first",
            path.display()
        )));
    }
    read_ascii_grid(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptsSummary {
    /// Components left after filtering, over the whole mosaic.
    pub components: usize,
    pub patches: usize,
    /// Boxes over all patch files; a component seen by two patches counts twice.
    pub boxes: usize,
}

/// Filter whole components on the stitched depth mosaic, then write one box
/// file per tile window. Overlapping windows each get their own boxes; the
/// segment stage merges them back on the mosaic.
pub fn cmd_prompts(config: &PipelineConfig) -> Result<PromptsSummary> {
    config.check_inputs(Stage::Prompts)?;
    let depth = read_stage_grid(config, FILL_DIR, DEPTH_FILE, "fill")?;
    let components = label_components(&depth);
    let kept = filter_components(&components, config.filter);
    info!("prompts: kept {} of {} components", kept.len(), components.len());
    let depressions = retain_components(&depth, &kept)?;
    let windows = plan(config, depth.width(), depth.height())?;

    let docs = map_windows(config, &windows, |w| {
        let tile = extract_tile(&depressions, w)?;
        let comps = label_components(&tile);
        let boxes = boxes_from_components(&comps, config.pad_px, w.patch, w.patch);
        Ok(BoxesDocument::from_components(w.id(), &comps, boxes))
    })?;

    let dir = stage_dir(config, PROMPTS_DIR);
    fresh_dir(&dir)?;
    write_ascii_grid(&depressions, dir.join(DEPRESSIONS_FILE))?;
    let mut n_boxes = 0;
    for (w, doc) in windows.iter().zip(&docs) {
        doc.write(dir.join(format!("{}.json", w.id())))?;
        w.write_sidecar(dir.join(format!("{}.window.json", w.id())))?;
        n_boxes += doc.boxes.len();
    }
    info!("prompts: {} boxes over {} patches", n_boxes, windows.len());
    Ok(PromptsSummary {
        components: kept.len(),
        patches: windows.len(),
        boxes: n_boxes,
    })
}

/// Boxes for `window`: from the prompts stage, or from `prompts.boxes_dir`
/// where a missing file means the detector found nothing there.
fn load_boxes(config: &PipelineConfig, window: &TileWindow) -> Result<BoxesDocument> {
    let id = window.id();
    let doc = match &config.boxes_dir {
        Some(dir) => {
            let path = dir.join(format!("{id}.json"));
            if !path.is_file() {
                debug!("no external boxes for {id}");
                return Ok(BoxesDocument {
                    patch_id: id,
                    boxes: Vec::new(),
                    areas: Vec::new(),
                    max_depths: Vec::new(),
                });
            }
            BoxesDocument::read(path)?
        }
        None => {
            let path = stage_dir(config, PROMPTS_DIR).join(format!("{id}.json"));
            if !path.is_file() {
                return Err(Error::Config(format!("{} not found; run `prompts` first", path.display())));
            }
            BoxesDocument::read(path)?
        }
    };
    doc.validate(window.patch, window.patch)?;
    Ok(doc)
}

fn patch_error(id: &str, e: SegmentError) -> Error {
    Error::Patch {
        patch_id: id.to_string(),
        source: e,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub patches: usize,
    pub boxes: usize,
    pub foreground_px: usize,
}

/// Prompt the backend patch by patch, stitch the per-pixel maximum
/// probability with the merge rule, and binarize the mosaic.
pub fn cmd_segment(config: &PipelineConfig) -> Result<SegmentSummary> {
    config.check_inputs(Stage::Segment)?;
    let depressions = read_stage_grid(config, PROMPTS_DIR, DEPRESSIONS_FILE, "prompts")?;
    let (width, height) = (depressions.width(), depressions.height());
    let image = match &config.rgb_mosaic {
        Some(path) => {
            let img = read_ppm(path)?;
            if (img.width(), img.height()) != (width, height) {
                return Err(Error::ShapeMismatch(format!(
                    "rgb_mosaic is {}x{} but the depth raster is {width}x{height}",
                    img.width(),
                    img.height()
                )));
            }
            img
        }
        None => {
            if matches!(config.backend, BackendConfig::Http { .. }) {
                log::warn!("no rgb_mosaic configured; sending blank images to the segmenter");
            }
            RgbImage::blank(width, height)
        }
    };
    let shared: Option<Box<dyn SegmentBackend>> = match &config.backend {
        BackendConfig::Echo => None,
        BackendConfig::Http { .. } => Some(Box::new(HttpBackend::new(
            config.backend.http_config().expect("http backend"),
        ))),
        BackendConfig::Replay { dir } => Some(Box::new(replay_backend(dir.clone()))),
    };
    let windows = plan(config, width, height)?;
    let dir = stage_dir(config, SEGMENT_DIR);
    fresh_dir(&dir)?;

    let results = map_windows(config, &windows, |w| {
        let id = w.id();
        let doc = load_boxes(config, w)?;
        let patch_image = extract_tile(&image, w)?;
        let outcome = match &shared {
            Some(backend) => segment_patch(backend.as_ref(), &id, &patch_image, &doc.boxes, config.binarize_threshold),
            None => {
                let echo = depression_echo_backend(extract_tile(&depressions, w)?);
                segment_patch(&echo, &id, &patch_image, &doc.boxes, config.binarize_threshold)
            }
        }
        .map_err(|e| patch_error(&id, e))?;
        debug!("segment {id}: {} boxes", doc.boxes.len());
        if config.save_masks && !outcome.masks.is_empty() {
            let mask_dir = dir.join("masks").join(&id);
            fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
            for (k, m) in outcome.masks.iter().enumerate() {
                write_pgm(&m.to_gray(), mask_dir.join(format!("{k}.pgm")))?;
            }
        }
        let geo = depressions.geo().shifted(height, w.row0, w.col0, w.patch);
        let prob = Raster::new(w.patch, w.patch, outcome.max_probability(), DEFAULT_NODATA, geo)?;
        Ok((prob, doc.boxes.len()))
    })?;

    let mut stitcher = Stitcher::new(width, height, config.merge);
    let mut n_boxes = 0;
    for (w, (prob, n)) in windows.iter().zip(&results) {
        stitcher.add(w, prob)?;
        n_boxes += n;
    }
    let probability = stitcher.finish()?;
    let mask = BinaryMask::from_raster(&probability, |p| p > config.binarize_threshold);
    write_ascii_grid(&probability, dir.join(PROBABILITY_FILE))?;
    write_mask_grid(&mask, depressions.geo(), dir.join(MASK_FILE))?;
    let summary = SegmentSummary {
        patches: windows.len(),
        boxes: n_boxes,
        foreground_px: mask.count_ones(),
    };
    info!("segment: {} foreground pixels from {} boxes", summary.foreground_px, n_boxes);
    Ok(summary)
}

/// Score `segment/mask.asc` against the configured ground truth. Objects are
/// the 8-connected components of the stitched masks.
pub fn cmd_eval(config: &PipelineConfig) -> Result<MetricsReport> {
    config.check_inputs(Stage::Eval)?;
    let pred_path = stage_dir(config, SEGMENT_DIR).join(MASK_FILE);
    if !pred_path.is_file() {
        return Err(Error::Config(format!("{} not found; run `segment` first", pred_path.display())));
    }
    let pred = read_mask_grid(&pred_path)?;
    let gt = read_mask_grid(config.eval.gt_mask.as_ref().expect("checked"))?;
    let ignore = match &config.eval.ignore_mask {
        Some(p) => Some(read_mask_grid(p)?),
        None => None,
    };
    let mut report = metrics_from_confusion(pixel_confusion(&pred, &gt, ignore.as_ref())?);
    report.detection = detection_curve(&label_mask(&pred), &label_mask(&gt), &config.eval.thresholds);

    let dir = stage_dir(config, EVAL_DIR);
    fresh_dir(&dir)?;
    report.write_json(dir.join(REPORT_JSON))?;
    let mut csv = Vec::new();
    write_table_csv(&mut csv, &[(&config.eval.model, &config.eval.prompts_source, &report)])?;
    let csv_path = dir.join(REPORT_CSV);
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    info!("eval: F1 {:.4}, IoU {:.4}", report.f1, report.iou);
    Ok(report)
}

/// Every stage in order; eval is skipped when no ground truth is configured.
pub fn cmd_run(config: &PipelineConfig) -> Result<Option<MetricsReport>> {
    // fail before writing anything if an input is missing
    config.check_inputs(Stage::Fill)?;
    config.check_inputs(Stage::Segment)?;
    if config.eval.gt_mask.is_some() {
        config.check_inputs(Stage::Eval)?;
    }
    cmd_fill(config)?;
    cmd_prompts(config)?;
    cmd_segment(config)?;
    if config.eval.gt_mask.is_some() {
        cmd_eval(config).map(Some)
    } else {
        info!("eval: skipped, eval.gt_mask is not set");
        Ok(None)
    }
}

/// Generate a scene into `out_dir` along with a `scene.conf` that runs the
/// pipeline on it (echo backend, output under `out_dir/out`).
pub fn cmd_synth(params: &SynthParams, out_dir: &Path) -> Result<SynthScene> {
    let scene = gen_terrain(params)?;
    write_scene(&scene, out_dir)?;
    let conf = format!(
        "# synthetic scene, seed {seed}\n\
         depth_raster = {DEM_FILE}\n\
         rgb_mosaic = {RGB_FILE}\n\
         eval.gt_mask = {GT_FILE}\n\
         out_dir = out\n",
        seed = params.seed
    );
    let path = out_dir.join(SCENE_CONFIG_FILE);
    fs::write(&path, conf).map_err(|e| Error::io(&path, e))?;
    info!("synth: {} sinkholes written to {}", scene.sinkholes.len(), out_dir.display());
    Ok(scene)
}
