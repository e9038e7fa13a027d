//! Promptable segmentation backends and per-patch mask fusion.
//!
//! A backend answers a patch image plus box prompts with exactly one
//! patch-sized probability mask (and one score) per box. [`segment_patch`]
//! checks the answer and fuses the masks: a pixel is foreground when the
//! highest probability any mask assigns to it exceeds the threshold.
//!
//! HTTP wire protocol (`POST <endpoint>/segment`, JSON):
//!
//! ```text
//! request:  {"image_ppm_b64": "<base64 P6>", "boxes": [[x0, y0, x1, y1], ...]}
//! response: {"masks_pgm_b64": ["<base64 P5, maxval 255>", ...], "scores": [0.93, ...]}
//! error:    non-200 status with {"error": "..."}
//! ```
//!
//! Boxes are pixel coordinates, `[x0, x1) x [y0, y1)`.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::PromptBox;
use crate::pnm::{GrayImage, PnmError, RgbImage};
use crate::raster::{BinaryMask, Raster};

pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend returned HTTP {status}: {message}")]
    HttpStatus { status: u16, message: String },
    #[error("backend returned {found} masks for {expected} boxes")]
    MaskCountMismatch { expected: usize, found: usize },
    #[error("backend returned {found} scores for {expected} boxes")]
    ScoreCountMismatch { expected: usize, found: usize },
    #[error("mask {index} is {found:?}, patch is {expected:?}")]
    MaskDimensions {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{what} {value} is outside [0, 1]")]
    OutOfRange { what: String, value: f64 },
    #[error("malformed backend response: {0}")]
    Schema(String),
    #[error("no replay mask at {}", .0.display())]
    MissingMask(PathBuf),
    #[error("depth patch is {depth:?} but image is {image:?}")]
    Misaligned {
        depth: (usize, usize),
        image: (usize, usize),
    },
    #[error("box {0:?} is empty or outside the patch")]
    InvalidBox([usize; 4]),
}

/// Per-pixel foreground probabilities for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl ProbabilityMask {
    pub fn new(width: usize, height: usize, probs: Vec<f64>) -> Result<Self, SegmentError> {
        if probs.len() != width * height {
            return Err(SegmentError::Schema(format!(
                "{} probabilities for a {width}x{height} mask",
                probs.len()
            )));
        }
        if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(SegmentError::OutOfRange {
                what: "probability".into(),
                value: p,
            });
        }
        Ok(ProbabilityMask {
            width,
            height,
            probs,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ProbabilityMask {
            width,
            height,
            probs: vec![0.0; width * height],
        }
    }

    /// 0..=255 gray levels rescaled to [0, 1].
    pub fn from_gray(image: &GrayImage) -> Self {
        ProbabilityMask {
            width: image.width(),
            height: image.height(),
            probs: image.data().iter().map(|&v| f64::from(v) / 255.0).collect(),
        }
    }

    /// Nearest 8-bit gray level for each probability.
    pub fn to_gray(&self) -> GrayImage {
        let data = self.probs.iter().map(|&p| (p * 255.0).round() as u8).collect();
        GrayImage::new(self.width, self.height, data).expect("mask shape is consistent")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// What a backend returns for one patch, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendOutput {
    pub masks: Vec<ProbabilityMask>,
    pub scores: Vec<f64>,
}

pub struct PatchRequest<'a> {
    pub patch_id: &'a str,
    pub image: &'a RgbImage,
    pub boxes: &'a [PromptBox],
}

pub trait SegmentBackend: Send + Sync {
    fn segment(&self, request: &PatchRequest<'_>) -> Result<BackendOutput, SegmentError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationOutcome {
    /// One mask per box, in box order.
    pub masks: Vec<ProbabilityMask>,
    pub scores: Vec<f64>,
    pub fused: BinaryMask,
}

impl SegmentationOutcome {
    /// Highest probability over all masks at each pixel (zero when there are no boxes).
    pub fn max_probability(&self) -> Vec<f64> {
        max_probability(&self.masks, self.fused.width(), self.fused.height())
    }
}

fn max_probability(masks: &[ProbabilityMask], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; width * height];
    for m in masks {
        for (o, &p) in out.iter_mut().zip(&m.probs) {
            *o = o.max(p);
        }
    }
    out
}

/// Foreground where the per-pixel maximum over `masks` exceeds `threshold`.
pub fn fuse_masks(masks: &[ProbabilityMask], width: usize, height: usize, threshold: f64) -> BinaryMask {
    let bits = max_probability(masks, width, height)
        .into_iter()
        .map(|p| p > threshold)
        .collect();
    BinaryMask::new(width, height, bits).expect("fused mask shape is consistent")
}

/// Prompt `backend` with `boxes` on one patch and fuse the per-box masks.
pub fn segment_patch(
    backend: &dyn SegmentBackend,
    patch_id: &str,
    image: &RgbImage,
    boxes: &[PromptBox],
    threshold: f64,
) -> Result<SegmentationOutcome, SegmentError> {
    let (w, h) = (image.width(), image.height());
    for b in boxes {
        if b.check_within(w, h).is_err() {
            return Err(SegmentError::InvalidBox(b.to_array()));
        }
    }
    if boxes.is_empty() {
        return Ok(SegmentationOutcome {
            masks: Vec::new(),
            scores: Vec::new(),
            fused: BinaryMask::zeros(w, h),
        });
    }
    let out = backend.segment(&PatchRequest {
        patch_id,
        image,
        boxes,
    })?;
    validate_output(&out, boxes.len(), w, h)?;
    let fused = fuse_masks(&out.masks, w, h, threshold);
    Ok(SegmentationOutcome {
        masks: out.masks,
        scores: out.scores,
        fused,
    })
}

fn validate_output(out: &BackendOutput, n_boxes: usize, w: usize, h: usize) -> Result<(), SegmentError> {
    if out.masks.len() != n_boxes {
        return Err(SegmentError::MaskCountMismatch {
            expected: n_boxes,
            found: out.masks.len(),
        });
    }
    if out.scores.len() != n_boxes {
        return Err(SegmentError::ScoreCountMismatch {
            expected: n_boxes,
            found: out.scores.len(),
        });
    }
    for (index, m) in out.masks.iter().enumerate() {
        if (m.width, m.height) != (w, h) {
            return Err(SegmentError::MaskDimensions {
                index,
                expected: (w, h),
                found: (m.width, m.height),
            });
        }
    }
    if let Some(&s) = out.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(SegmentError::OutOfRange {
            what: "score".into(),
            value: s,
        });
    }
    Ok(())
}

/// Answers each box with the positive-depth cells inside it. No model involved.
#[derive(Debug, Clone)]
pub struct DepressionEchoBackend {
    depth: Raster,
}

pub fn depression_echo_backend(depth_patch: Raster) -> DepressionEchoBackend {
    DepressionEchoBackend { depth: depth_patch }
}

impl SegmentBackend for DepressionEchoBackend {
    fn segment(&self, request: &PatchRequest<'_>) -> Result<BackendOutput, SegmentError> {
        let d = &self.depth;
        let (w, h) = (request.image.width(), request.image.height());
        if (d.width(), d.height()) != (w, h) {
            return Err(SegmentError::Misaligned {
                depth: (d.width(), d.height()),
                image: (w, h),
            });
        }
        let mut masks = Vec::with_capacity(request.boxes.len());
        let mut scores = Vec::with_capacity(request.boxes.len());
        for b in request.boxes {
            let mut probs = vec![0.0; w * h];
            for r in b.y0..b.y1 {
                for c in b.x0..b.x1 {
                    let i = d.index(r, c);
                    if !d.is_nodata(i) && d.values()[i] > 0.0 {
                        probs[i] = 1.0;
                    }
                }
            }
            scores.push(if probs.contains(&1.0) { 1.0 } else { 0.0 });
            masks.push(ProbabilityMask::new(w, h, probs)?);
        }
        Ok(BackendOutput { masks, scores })
    }
}

/// Reads precomputed masks from `<dir>/<patch_id>/<box_index>.pgm`.
/// Each score is the mask's highest probability.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    dir: PathBuf,
}

pub fn replay_backend(directory: impl Into<PathBuf>) -> ReplayBackend {
    ReplayBackend {
        dir: directory.into(),
    }
}

impl ReplayBackend {
    pub fn mask_path(&self, patch_id: &str, box_index: usize) -> PathBuf {
        self.dir.join(patch_id).join(format!("{box_index}.pgm"))
    }
}

impl SegmentBackend for ReplayBackend {
    fn segment(&self, request: &PatchRequest<'_>) -> Result<BackendOutput, SegmentError> {
        let mut masks = Vec::with_capacity(request.boxes.len());
        let mut scores = Vec::with_capacity(request.boxes.len());
        for index in 0..request.boxes.len() {
            let path = self.mask_path(request.patch_id, index);
            let bytes = std::fs::read(&path).map_err(|_| SegmentError::MissingMask(path.clone()))?;
            let gray = GrayImage::decode_pgm(&bytes).map_err(|e| pgm_error(&path, index, e))?;
            let mask = ProbabilityMask::from_gray(&gray);
            scores.push(mask.probs.iter().copied().fold(0.0, f64::max));
            masks.push(mask);
        }
        Ok(BackendOutput { masks, scores })
    }
}

fn pgm_error(source: &Path, index: usize, e: PnmError) -> SegmentError {
    match e {
        PnmError::UnsupportedMaxval(m) => SegmentError::OutOfRange {
            what: format!("mask {index} maxval"),
            value: f64::from(m),
        },
        other => SegmentError::Schema(format!("mask {index} ({}): {other}", source.display())),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_ppm_b64: String,
    pub boxes: Vec<[usize; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub masks_pgm_b64: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InflightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct InflightPermit<'a>(&'a InflightLimit);

impl InflightLimit {
    fn acquire(&self) -> InflightPermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InflightPermit(self)
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure or 5xx status.
    pub retries: u32,
    pub max_inflight: usize,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.into(),
            timeout,
            retries: 2,
            max_inflight: 4,
        }
    }
}

/// Client for a segmentation service speaking the protocol in the module docs.
#[derive(Clone)]
pub struct HttpBackend {
    url: String,
    config: HttpBackendConfig,
    agent: ureq::Agent,
    limit: Arc<InflightLimit>,
}

pub fn http_backend(endpoint: &str, timeout: Duration) -> HttpBackend {
    HttpBackend::new(HttpBackendConfig::new(endpoint, timeout))
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            url: format!("{}/segment", config.endpoint.trim_end_matches('/')),
            limit: Arc::new(InflightLimit {
                max: config.max_inflight.max(1),
                active: Mutex::new(0),
                freed: Condvar::new(),
            }),
            config,
            agent,
        }
    }

    fn post_once(&self, body: &str) -> Result<(u16, String), SegmentError> {
        let _permit = self.limit.acquire();
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| self.transport_error(e))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| self.transport_error(e))?;
        Ok((status, text))
    }

    fn transport_error(&self, e: ureq::Error) -> SegmentError {
        match e {
            ureq::Error::Timeout(_) => SegmentError::Timeout(self.config.timeout),
            other => SegmentError::Unreachable(format!("{}: {other}", self.url)),
        }
    }

    fn parse_response(&self, text: &str, n_boxes: usize) -> Result<BackendOutput, SegmentError> {
        let resp: SegmentResponse =
            serde_json::from_str(text).map_err(|e| SegmentError::Schema(e.to_string()))?;
        if resp.masks_pgm_b64.len() != n_boxes {
            return Err(SegmentError::MaskCountMismatch {
                expected: n_boxes,
                found: resp.masks_pgm_b64.len(),
            });
        }
        let mut masks = Vec::with_capacity(n_boxes);
        for (index, encoded) in resp.masks_pgm_b64.iter().enumerate() {
            let bytes = B64
                .decode(encoded)
                .map_err(|e| SegmentError::Schema(format!("mask {index}: bad base64: {e}")))?;
            let gray = GrayImage::decode_pgm(&bytes).map_err(|e| pgm_error(Path::new(&self.url), index, e))?;
            masks.push(ProbabilityMask::from_gray(&gray));
        }
        Ok(BackendOutput {
            masks,
            scores: resp.scores,
        })
    }
}

impl SegmentBackend for HttpBackend {
    fn segment(&self, request: &PatchRequest<'_>) -> Result<BackendOutput, SegmentError> {
        let body = serde_json::to_string(&SegmentRequest {
            image_ppm_b64: B64.encode(request.image.encode_ppm()),
            boxes: request.boxes.iter().map(PromptBox::to_array).collect(),
        })
        .map_err(|e| SegmentError::Schema(e.to_string()))?;

        let mut attempt = 0;
        loop {
            let result = self.post_once(&body).and_then(|(status, text)| match status {
                200 => Ok(text),
                _ => {
                    let message = serde_json::from_str::<ErrorResponse>(&text)
                        .map(|e| e.error)
                        .unwrap_or(text);
                    Err(SegmentError::HttpStatus { status, message })
                }
            });
            let retryable = match &result {
                Err(SegmentError::Unreachable(_) | SegmentError::Timeout(_)) => true,
                Err(SegmentError::HttpStatus { status, .. }) => *status >= 500,
                _ => false,
            };
            if retryable && attempt < self.config.retries {
                attempt += 1;
                warn!(
                    "patch {}: attempt {attempt} failed ({}), retrying",
                    request.patch_id,
                    result.as_ref().unwrap_err()
                );
                continue;
            }
            let text = result?;
            debug!("patch {}: {} bytes of masks", request.patch_id, text.len());
            return self.parse_response(&text, request.boxes.len());
        }
    }
}
