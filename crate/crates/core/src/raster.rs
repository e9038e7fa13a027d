//! Georeferenced rasters and binary masks.
//!
//! Values are stored row-major with row 0 as the top (northernmost) row,
//! the same order cells appear in an ASCII grid file. Nodata cells are
//! identified by exact equality with the raster's sentinel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODATA: f64 = -9999.0;

/// Position and resolution of a raster. `origin_x`/`origin_y` locate the
/// lower-left corner of the lower-left cell, in map units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cellsize: f64,
}

impl Default for GeoTransform {
    fn default() -> Self {
        GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            cellsize: 1.0,
        }
    }
}

impl GeoTransform {
    /// Transform of the `sub_h`-row block whose top-left cell sits at
    /// (`row0`, `col0`) inside a raster of `height` rows.
    pub fn shifted(&self, height: usize, row0: usize, col0: usize, sub_h: usize) -> GeoTransform {
        let rows_below = height - row0 - sub_h;
        GeoTransform {
            origin_x: self.origin_x + col0 as f64 * self.cellsize,
            origin_y: self.origin_y + rows_below as f64 * self.cellsize,
            cellsize: self.cellsize,
        }
    }

    /// Inverse of [`GeoTransform::shifted`]: recover the parent transform from a block's.
    pub fn unshifted(&self, height: usize, row0: usize, col0: usize, sub_h: usize) -> GeoTransform {
        let rows_below = height - row0 - sub_h;
        GeoTransform {
            origin_x: self.origin_x - col0 as f64 * self.cellsize,
            origin_y: self.origin_y - rows_below as f64 * self.cellsize,
            cellsize: self.cellsize,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    values: Vec<f64>,
    nodata: f64,
    geo: GeoTransform,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<f64>,
        nodata: f64,
        geo: GeoTransform,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if !(geo.cellsize > 0.0 && geo.cellsize.is_finite()) {
            return Err(Error::InvalidRaster(format!(
                "cellsize must be positive, got {}",
                geo.cellsize
            )));
        }
        if !nodata.is_finite() {
            return Err(Error::InvalidRaster(format!("nodata sentinel {nodata} is not finite")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRaster(format!(
                "non-finite value {} at row {}, col {}",
                values[i],
                i / width,
                i % width
            )));
        }
        Ok(Raster {
            width,
            height,
            values,
            nodata,
            geo,
        })
    }

    /// Constant raster with default nodata and unit geotransform.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Raster::new(
            width,
            height,
            vec![value; width * height],
            DEFAULT_NODATA,
            GeoTransform::default(),
        )
    }

    /// Raster with the same shape, nodata and geotransform as `self`.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Raster::new(self.width, self.height, values, self.nodata, self.geo)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn geo(&self) -> GeoTransform {
        self.geo
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.index(row, col)]
    }

    #[inline]
    pub fn is_nodata(&self, i: usize) -> bool {
        self.values[i] == self.nodata
    }

    pub fn valid_count(&self) -> usize {
        (0..self.len()).filter(|&i| !self.is_nodata(i)).count()
    }

    /// Largest non-nodata value, if any.
    pub fn valid_max(&self) -> Option<f64> {
        self.values
            .iter()
            .filter(|&&v| v != self.nodata)
            .copied()
            .reduce(f64::max)
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.geo == other.geo
    }

    /// Copy of the `w`x`h` block whose top-left cell is (`row0`, `col0`).
    pub fn window(&self, row0: usize, col0: usize, w: usize, h: usize) -> Result<Raster> {
        if row0 + h > self.height || col0 + w > self.width || w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "window {w}x{h} at ({row0},{col0}) exceeds {}x{} raster",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(w * h);
        for r in row0..row0 + h {
            let start = self.index(r, col0);
            values.extend_from_slice(&self.values[start..start + w]);
        }
        Raster::new(w, h, values, self.nodata, self.geo.shifted(self.height, row0, col0, h))
    }
}

/// Cell-wise `a - b`. Nodata in either input yields nodata (using `a`'s sentinel).
pub fn subtract(a: &Raster, b: &Raster) -> Result<Raster> {
    if !a.same_grid(b) {
        return Err(Error::ShapeMismatch(format!(
            "cannot subtract {}x{} {:?} from {}x{} {:?}",
            b.width, b.height, b.geo, a.width, a.height, a.geo
        )));
    }
    let values = (0..a.len())
        .map(|i| {
            if a.is_nodata(i) || b.is_nodata(i) {
                a.nodata
            } else {
                a.values[i] - b.values[i]
            }
        })
        .collect();
    a.with_values(values)
}

/// Flip a depth raster into an elevation-like surface: `max - depth` over valid cells.
pub fn invert_depth(depth: &Raster) -> Result<Raster> {
    let max = depth
        .valid_max()
        .ok_or_else(|| Error::InvalidRaster("cannot invert an all-nodata raster".into()))?;
    let flipped: Vec<Option<f64>> = depth
        .values
        .iter()
        .map(|&v| (v != depth.nodata).then_some(max - v))
        .collect();
    // an inverted value may land on the old sentinel (e.g. nodata 0 at the maximum)
    let nodata = if flipped.contains(&Some(depth.nodata)) {
        DEFAULT_NODATA
    } else {
        depth.nodata
    };
    let values = flipped.into_iter().map(|v| v.unwrap_or(nodata)).collect();
    Raster::new(depth.width, depth.height, values, nodata, depth.geo)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Mask of the valid cells of `raster` satisfying `pred`.
    pub fn from_raster(raster: &Raster, pred: impl Fn(f64) -> bool) -> Self {
        let bits = raster
            .values()
            .iter()
            .map(|&v| v != raster.nodata() && pred(v))
            .collect();
        BinaryMask {
            width: raster.width(),
            height: raster.height(),
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = on;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// 0/1 raster carrying this mask, for writing as an ASCII grid.
    pub fn to_raster(&self, geo: GeoTransform) -> Raster {
        let values = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Raster::new(self.width, self.height, values, DEFAULT_NODATA, geo)
            .expect("mask dimensions are valid")
    }
}
