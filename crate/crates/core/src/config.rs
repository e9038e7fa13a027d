//! Pipeline configuration.
//!
//! The file format is one `key = value` pair per line; `#` starts a comment
//! and blank lines are ignored. Section keys are dotted (`tile.patch`).
//! Relative paths resolve against the directory holding the config file;
//! overrides given on the command line resolve against the working directory.
//!
//! ```text
//! depth_raster = dem.asc
//! rgb_mosaic = rgb.ppm
//! tile.patch = 512
//! tile.stride = 256
//! filter.min_depth = 2
//! filter.min_area_px = 50
//! backend = http
//! backend.endpoint = http://localhost:8080
//! eval.gt_mask = gt_mask.asc
//! out_dir = out
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::eval::default_thresholds;
use crate::labeling::FilterThresholds;
use crate::segmenter::{HttpBackendConfig, DEFAULT_BINARIZE_THRESHOLD};
use crate::tiling::{MergeRule, TileSpec};

/// Whether depressions are filled per tile or over the whole mosaic at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillMode {
    #[default]
    Patch,
    Mosaic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    Echo,
    Http {
        endpoint: String,
        timeout: Duration,
        max_inflight: usize,
        retries: u32,
    },
    Replay {
        dir: PathBuf,
    },
}

impl BackendConfig {
    pub fn http_config(&self) -> Option<HttpBackendConfig> {
        match self {
            BackendConfig::Http {
                endpoint,
                timeout,
                max_inflight,
                retries,
            } => Some(HttpBackendConfig {
                endpoint: endpoint.clone(),
                timeout: *timeout,
                retries: *retries,
                max_inflight: *max_inflight,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub gt_mask: Option<PathBuf>,
    /// Pixels set here are left out of every count.
    pub ignore_mask: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    /// Labels for the CSV row.
    pub model: String,
    pub prompts_source: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            gt_mask: None,
            ignore_mask: None,
            thresholds: default_thresholds(),
            model: "SinkSAM".into(),
            prompts_source: "Closed Depressions BBs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub depth_raster: Option<PathBuf>,
    pub rgb_mosaic: Option<PathBuf>,
    pub invert_depth: bool,
    pub fill_mode: FillMode,
    pub tile: TileSpec,
    pub filter: FilterThresholds,
    pub pad_px: usize,
    /// Read prompt boxes from here instead of the prompts stage output.
    pub boxes_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    pub binarize_threshold: f64,
    pub merge: MergeRule,
    /// Keep per-box masks as `<out>/segment/masks/<patch>/<box>.pgm`.
    pub save_masks: bool,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            depth_raster: None,
            rgb_mosaic: None,
            invert_depth: false,
            fill_mode: FillMode::Patch,
            tile: TileSpec::default(),
            filter: FilterThresholds::default(),
            pad_px: 0,
            boxes_dir: None,
            backend: BackendConfig::Echo,
            binarize_threshold: DEFAULT_BINARIZE_THRESHOLD,
            merge: MergeRule::Max,
            save_masks: false,
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("sinksam_out"),
            workers: 1,
        }
    }
}

/// Raw backend keys, resolved into a [`BackendConfig`] once all keys are in.
#[derive(Debug, Default)]
struct BackendKeys {
    kind: Option<String>,
    endpoint: Option<String>,
    timeout_s: Option<f64>,
    max_inflight: Option<usize>,
    retries: Option<u32>,
    dir: Option<PathBuf>,
}

/// Accumulates `key = value` settings from files and overrides.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    config: PipelineConfig,
    backend: BackendKeys,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut b = Self::new();
        b.apply_text(&text, base, &path.display().to_string())?;
        Ok(b)
    }

    pub fn apply_text(&mut self, text: &str, base: &Path, source_name: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                source_name: source_name.to_string(),
                line: n + 1,
                message: format!("expected 'key = value', found '{line}'"),
            })?;
            self.set(key.trim(), value.trim(), base).map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Apply a `key=value` override; relative paths resolve against `base`.
    pub fn apply_override(&mut self, assignment: &str, base: &Path) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(key.trim(), value.trim(), base)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let c = &mut self.config;
        match key {
            "depth_raster" => c.depth_raster = Some(resolve(base, value)),
            "rgb_mosaic" => c.rgb_mosaic = Some(resolve(base, value)),
            "invert_depth" => c.invert_depth = parse_bool(key, value)?,
            "fill_mode" => {
                c.fill_mode = match value.to_ascii_lowercase().as_str() {
                    "patch" => FillMode::Patch,
                    "mosaic" => FillMode::Mosaic,
                    _ => return Err(Error::Config(format!("{key}: expected patch or mosaic, got '{value}'"))),
                }
            }
            "tile.patch" => c.tile.patch = parse(key, value)?,
            "tile.stride" => c.tile.stride = parse(key, value)?,
            "filter.min_depth" => c.filter.min_depth = parse(key, value)?,
            "filter.min_area_px" => c.filter.min_area_px = parse(key, value)?,
            "pad_px" => c.pad_px = parse(key, value)?,
            "prompts.boxes_dir" => c.boxes_dir = Some(resolve(base, value)),
            "backend" => self.backend.kind = Some(value.to_ascii_lowercase()),
            "backend.endpoint" => self.backend.endpoint = Some(value.to_string()),
            "backend.timeout" => self.backend.timeout_s = Some(parse(key, value)?),
            "backend.max_inflight" => self.backend.max_inflight = Some(parse(key, value)?),
            "backend.retries" => self.backend.retries = Some(parse(key, value)?),
            "backend.dir" => self.backend.dir = Some(resolve(base, value)),
            "binarize_threshold" => c.binarize_threshold = parse(key, value)?,
            "merge" => c.merge = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "segment.save_masks" => c.save_masks = parse_bool(key, value)?,
            "eval.gt_mask" => c.eval.gt_mask = Some(resolve(base, value)),
            "eval.ignore_mask" => c.eval.ignore_mask = Some(resolve(base, value)),
            "eval.thresholds" => {
                c.eval.thresholds = value
                    .split(',')
                    .map(|t| parse::<f64>(key, t.trim()))
                    .collect::<Result<_>>()?
            }
            "eval.model" => c.eval.model = value.to_string(),
            "eval.prompts_source" => c.eval.prompts_source = value.to_string(),
            "out_dir" => c.out_dir = resolve(base, value),
            "workers" => c.workers = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Resolve the backend and check value ranges. Paths are checked by
    /// [`PipelineConfig::check_inputs`], since each stage needs different ones.
    pub fn build(self) -> Result<PipelineConfig> {
        let mut c = self.config;
        let b = self.backend;
        c.backend = match b.kind.as_deref().unwrap_or("echo") {
            "echo" => BackendConfig::Echo,
            "http" => BackendConfig::Http {
                endpoint: b
                    .endpoint
                    .ok_or_else(|| Error::Config("backend = http needs backend.endpoint".into()))?,
                timeout: Duration::from_secs_f64(b.timeout_s.unwrap_or(30.0).max(0.001)),
                max_inflight: b.max_inflight.unwrap_or(4),
                retries: b.retries.unwrap_or(2),
            },
            "replay" => BackendConfig::Replay {
                dir: b
                    .dir
                    .ok_or_else(|| Error::Config("backend = replay needs backend.dir".into()))?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown backend '{other}' (expected echo, http or replay)"
                )))
            }
        };
        TileSpec::new(c.tile.patch, c.tile.stride).map_err(|e| Error::Config(e.to_string()))?;
        FilterThresholds::new(c.filter.min_depth, c.filter.min_area_px)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&c.binarize_threshold) {
            return Err(Error::Config(format!(
                "binarize_threshold must lie in [0, 1], got {}",
                c.binarize_threshold
            )));
        }
        let t = &c.eval.thresholds;
        if t.is_empty() || t.iter().any(|x| !(*x > 0.0 && *x < 1.0)) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "eval.thresholds must be strictly ascending values in (0, 1), got {t:?}"
            )));
        }
        if c.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let BackendConfig::Http { max_inflight: 0, .. } = c.backend {
            return Err(Error::Config("backend.max_inflight must be at least 1".into()));
        }
        Ok(c)
    }
}

fn require_file(what: &str, path: &Option<PathBuf>) -> Result<()> {
    match path {
        None => Err(Error::Config(format!("{what} is not set"))),
        Some(p) if !p.is_file() => Err(Error::Io {
            path: p.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        }),
        Some(_) => Ok(()),
    }
}

fn optional_file(what: &str, path: &Option<PathBuf>) -> Result<()> {
    match path {
        Some(_) => require_file(what, path),
        None => Ok(()),
    }
}

/// Inputs a stage reads from outside `out_dir`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Fill,
    Prompts,
    Segment,
    Eval,
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        ConfigBuilder::from_file(path)?.build()
    }

    /// Fail early when a path the stage depends on is missing.
    pub fn check_inputs(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Fill => require_file("depth_raster", &self.depth_raster),
            Stage::Prompts => Ok(()),
            Stage::Segment => {
                optional_file("rgb_mosaic", &self.rgb_mosaic)?;
                if let Some(dir) = &self.boxes_dir {
                    if !dir.is_dir() {
                        return Err(Error::Config(format!("prompts.boxes_dir {} is not a directory", dir.display())));
                    }
                }
                if let BackendConfig::Replay { dir } = &self.backend {
                    if !dir.is_dir() {
                        return Err(Error::Config(format!("backend.dir {} is not a directory", dir.display())));
                    }
                }
                Ok(())
            }
            Stage::Eval => {
                require_file("eval.gt_mask", &self.eval.gt_mask)?;
                optional_file("eval.ignore_mask", &self.eval.ignore_mask)
            }
        }
    }
}
