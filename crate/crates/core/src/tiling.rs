//! Overlapping square tiles over a mosaic, and stitching tile outputs back.
//!
//! Window origins step by `stride` along each axis. When the mosaic size is
//! not a multiple of the stride the last window is shifted inward so it ends
//! exactly at the mosaic edge; windows are never padded or clipped.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm::RgbImage;
use crate::raster::{BinaryMask, GeoTransform, Raster, DEFAULT_NODATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub patch: usize,
    pub stride: usize,
}

impl Default for TileSpec {
    fn default() -> Self {
        TileSpec {
            patch: 512,
            stride: 256,
        }
    }
}

impl TileSpec {
    pub fn new(patch: usize, stride: usize) -> Result<Self> {
        if stride == 0 || stride > patch {
            return Err(Error::InvalidArgument(format!(
                "tile stride must satisfy 0 < stride <= patch, got patch {patch}, stride {stride}"
            )));
        }
        Ok(TileSpec { patch, stride })
    }
}

/// Square window with top-left cell (`row0`, `col0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileWindow {
    pub row0: usize,
    pub col0: usize,
    pub patch: usize,
}

impl TileWindow {
    /// Stable identifier used for per-patch file names.
    pub fn id(&self) -> String {
        format!("r{:05}_c{:05}", self.row0, self.col0)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.patch && col >= self.col0 && col < self.col0 + self.patch
    }

    pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn write_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

fn axis_origins(size: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = size - patch;
    let mut origins: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o < last).collect();
    origins.push(last);
    origins
}

/// Windows covering a `mosaic_w` x `mosaic_h` mosaic, row-major by origin.
pub fn plan_tiles(mosaic_w: usize, mosaic_h: usize, spec: TileSpec) -> Result<Vec<TileWindow>> {
    TileSpec::new(spec.patch, spec.stride)?;
    if mosaic_w < spec.patch || mosaic_h < spec.patch {
        return Err(Error::InvalidArgument(format!(
            "mosaic {mosaic_w}x{mosaic_h} is smaller than the {0}x{0} patch",
            spec.patch
        )));
    }
    let rows = axis_origins(mosaic_h, spec.patch, spec.stride);
    let cols = axis_origins(mosaic_w, spec.patch, spec.stride);
    Ok(rows
        .iter()
        .flat_map(|&row0| {
            cols.iter().map(move |&col0| TileWindow {
                row0,
                col0,
                patch: spec.patch,
            })
        })
        .collect())
}

/// Number of windows covering each mosaic cell.
pub fn coverage(windows: &[TileWindow], mosaic_w: usize, mosaic_h: usize) -> Vec<u32> {
    let mut counts = vec![0u32; mosaic_w * mosaic_h];
    for w in windows {
        for r in w.row0..(w.row0 + w.patch).min(mosaic_h) {
            for c in w.col0..(w.col0 + w.patch).min(mosaic_w) {
                counts[r * mosaic_w + c] += 1;
            }
        }
    }
    counts
}

/// Grids that can be cut into tiles.
pub trait Tileable: Sized {
    fn extract(&self, window: &TileWindow) -> Result<Self>;
}

impl Tileable for Raster {
    fn extract(&self, window: &TileWindow) -> Result<Self> {
        self.window(window.row0, window.col0, window.patch, window.patch)
    }
}

impl Tileable for RgbImage {
    fn extract(&self, window: &TileWindow) -> Result<Self> {
        self.window(window.row0, window.col0, window.patch, window.patch)
    }
}

impl Tileable for BinaryMask {
    fn extract(&self, window: &TileWindow) -> Result<Self> {
        if window.row0 + window.patch > self.height() || window.col0 + window.patch > self.width() {
            return Err(Error::InvalidArgument(format!(
                "window {window:?} exceeds {}x{} mask",
                self.width(),
                self.height()
            )));
        }
        let bits = (window.row0..window.row0 + window.patch)
            .flat_map(|r| (window.col0..window.col0 + window.patch).map(move |c| self.get(r, c)))
            .collect();
        BinaryMask::new(window.patch, window.patch, bits)
    }
}

pub fn extract_tile<T: Tileable>(source: &T, window: &TileWindow) -> Result<T> {
    source.extract(window)
}

/// How overlapping tile values combine into one mosaic cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeRule {
    #[default]
    Max,
    Mean,
    /// Value from the earliest tile (in stitching order) covering the cell.
    First,
}

impl FromStr for MergeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(MergeRule::Max),
            "mean" => Ok(MergeRule::Mean),
            "first" => Ok(MergeRule::First),
            other => Err(Error::InvalidArgument(format!(
                "unknown merge rule '{other}' (expected max, mean or first)"
            ))),
        }
    }
}

impl fmt::Display for MergeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeRule::Max => "max",
            MergeRule::Mean => "mean",
            MergeRule::First => "first",
        })
    }
}

/// Accumulates tiles into a mosaic. It is the only writer of its buffer;
/// tiles produced concurrently are handed to it one at a time.
#[derive(Debug)]
pub struct Stitcher {
    width: usize,
    height: usize,
    merge: MergeRule,
    acc: Vec<f64>,
    counts: Vec<u32>,
    patch: Option<usize>,
    nodata: Option<f64>,
    geo: Option<GeoTransform>,
}

impl Stitcher {
    pub fn new(mosaic_w: usize, mosaic_h: usize, merge: MergeRule) -> Self {
        Stitcher {
            width: mosaic_w,
            height: mosaic_h,
            merge,
            acc: vec![0.0; mosaic_w * mosaic_h],
            counts: vec![0; mosaic_w * mosaic_h],
            patch: None,
            nodata: None,
            geo: None,
        }
    }

    pub fn add(&mut self, window: &TileWindow, tile: &Raster) -> Result<()> {
        if tile.width() != window.patch || tile.height() != window.patch {
            return Err(Error::ShapeMismatch(format!(
                "tile {}x{} does not match window patch {}",
                tile.width(),
                tile.height(),
                window.patch
            )));
        }
        match self.patch {
            Some(p) if p != window.patch => {
                return Err(Error::ShapeMismatch(format!(
                    "inconsistent tile sizes: {p} and {}",
                    window.patch
                )))
            }
            _ => self.patch = Some(window.patch),
        }
        if window.row0 + window.patch > self.height || window.col0 + window.patch > self.width {
            return Err(Error::InvalidArgument(format!(
                "window {window:?} exceeds {}x{} mosaic",
                self.width, self.height
            )));
        }
        self.nodata.get_or_insert(tile.nodata());
        self.geo
            .get_or_insert_with(|| tile.geo().unshifted(self.height, window.row0, window.col0, window.patch));

        for r in 0..window.patch {
            let row_base = (window.row0 + r) * self.width + window.col0;
            for c in 0..window.patch {
                let ti = r * window.patch + c;
                if tile.is_nodata(ti) {
                    continue;
                }
                let v = tile.values()[ti];
                let i = row_base + c;
                let n = self.counts[i];
                self.acc[i] = match (self.merge, n) {
                    (_, 0) => v,
                    (MergeRule::Max, _) => self.acc[i].max(v),
                    (MergeRule::Mean, _) => self.acc[i] + (v - self.acc[i]) / f64::from(n + 1),
                    (MergeRule::First, _) => self.acc[i],
                };
                self.counts[i] = n + 1;
            }
        }
        Ok(())
    }

    /// Mosaic with uncovered cells set to nodata.
    pub fn finish(self) -> Result<Raster> {
        let nodata = self.nodata.unwrap_or(DEFAULT_NODATA);
        let values = self
            .acc
            .into_iter()
            .zip(self.counts)
            .map(|(v, n)| if n == 0 { nodata } else { v })
            .collect();
        Raster::new(
            self.width,
            self.height,
            values,
            nodata,
            self.geo.unwrap_or_default(),
        )
    }
}

pub fn stitch(
    tiles: &[(TileWindow, Raster)],
    merge: MergeRule,
    mosaic_w: usize,
    mosaic_h: usize,
) -> Result<Raster> {
    let mut stitcher = Stitcher::new(mosaic_w, mosaic_h, merge);
    for (window, tile) in tiles {
        stitcher.add(window, tile)?;
    }
    stitcher.finish()
}
