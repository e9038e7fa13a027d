//! ESRI ASCII grid reading and writing.
//!
//! ```text
//! ncols         4
//! nrows         2
//! xllcorner     0
//! yllcorner     0
//! cellsize      0.025
//! NODATA_value  -9999
//! 1 2 3 4
//! 5 6 -9999 8
//! ```
//!
//! Header keywords are matched case-insensitively and must appear in this
//! order. Values are written in the shortest decimal form that parses back
//! to the same `f64`, so `read(write(r)) == r` holds exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GeoTransform, Raster};

const HEADER_KEYS: [&str; 6] = [
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "cellsize",
    "NODATA_value",
];

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ascii_grid(&text, &path.display().to_string())
}

pub fn write_ascii_grid(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_ascii_grid(raster)).map_err(|e| Error::io(path, e))
}

/// Read a 0/1 grid. Any other value, nodata included, is rejected.
pub fn read_mask_grid(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let raster = read_ascii_grid(path)?;
    mask_from_grid(&raster, &path.display().to_string())
}

pub fn write_mask_grid(mask: &BinaryMask, geo: GeoTransform, path: impl AsRef<Path>) -> Result<()> {
    write_ascii_grid(&mask.to_raster(geo), path)
}

fn mask_from_grid(raster: &Raster, source_name: &str) -> Result<BinaryMask> {
    let mut bits = Vec::with_capacity(raster.len());
    for (i, &v) in raster.values().iter().enumerate() {
        match v {
            0.0 => bits.push(false),
            1.0 => bits.push(true),
            _ => {
                return Err(Error::Parse {
                    source_name: source_name.to_string(),
                    line: HEADER_KEYS.len() + 1 + i / raster.width(),
                    message: format!("mask value {v} is not 0 or 1"),
                })
            }
        }
    }
    BinaryMask::new(raster.width(), raster.height(), bits)
}

pub fn parse_ascii_grid(text: &str, source_name: &str) -> Result<Raster> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header = [0.0f64; 6];
    let mut header_tokens: [&str; 6] = [""; 6];
    for (k, key) in HEADER_KEYS.iter().enumerate() {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| err(k + 1, format!("missing header keyword '{key}'")))?;
        let mut toks = line.split_whitespace();
        let found = toks.next().unwrap_or("");
        if !found.eq_ignore_ascii_case(key) {
            return Err(err(
                lineno,
                format!("malformed header keyword: expected '{key}', found '{found}'"),
            ));
        }
        let value = toks
            .next()
            .ok_or_else(|| err(lineno, format!("header keyword '{key}' has no value")))?;
        if let Some(extra) = toks.next() {
            return Err(err(lineno, format!("unexpected token '{extra}' after '{key}'")));
        }
        header[k] = value
            .parse::<f64>()
            .map_err(|_| err(lineno, format!("non-numeric token '{value}' for '{key}'")))?;
        header_tokens[k] = value;
    }

    let dim = |k: usize| -> Result<usize> {
        header_tokens[k]
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                err(
                    k + 1,
                    format!("{} must be a positive integer, got '{}'", HEADER_KEYS[k], header_tokens[k]),
                )
            })
    };
    let ncols = dim(0)?;
    let nrows = dim(1)?;
    let geo = GeoTransform {
        origin_x: header[2],
        origin_y: header[3],
        cellsize: header[4],
    };
    if geo.cellsize.is_nan() || geo.cellsize <= 0.0 {
        return Err(err(5, format!("cellsize must be positive, got {}", header_tokens[4])));
    }
    let nodata = header[5];

    let mut values = Vec::with_capacity(ncols * nrows);
    let mut last_line = HEADER_KEYS.len();
    for (lineno, line) in lines {
        last_line = lineno;
        if line.trim().is_empty() {
            continue;
        }
        let row = values.len() / ncols;
        if row >= nrows {
            return Err(err(
                lineno,
                format!("cell count mismatch: data beyond the declared {nrows} rows"),
            ));
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .map_err(|_| err(lineno, format!("non-numeric token '{tok}'")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value '{tok}'")));
            }
            values.push(v);
        }
        let found = values.len() - before;
        if found != ncols {
            return Err(err(
                lineno,
                format!("cell count mismatch: expected {ncols} values in row {}, found {found}", row + 1),
            ));
        }
    }
    if values.len() != ncols * nrows {
        return Err(err(
            last_line,
            format!(
                "cell count mismatch: expected {nrows} rows, found {}",
                values.len() / ncols
            ),
        ));
    }
    Raster::new(ncols, nrows, values, nodata, geo)
}

pub fn format_ascii_grid(raster: &Raster) -> String {
    let geo = raster.geo();
    let mut out = String::with_capacity(raster.len() * 4 + 128);
    let header = [
        raster.width().to_string(),
        raster.height().to_string(),
        format_real(geo.origin_x),
        format_real(geo.origin_y),
        format_real(geo.cellsize),
        format_real(raster.nodata()),
    ];
    for (key, value) in HEADER_KEYS.iter().zip(header) {
        let _ = writeln!(out, "{key:<14}{value}");
    }
    for row in raster.values().chunks(raster.width()) {
        for (c, &v) in row.iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            out.push_str(&format_real(v));
        }
        out.push('\n');
    }
    out
}

/// Shortest decimal text that parses back to exactly `v`.
pub(crate) fn format_real(v: f64) -> String {
    let plain = format!("{v}");
    let sci = format!("{v:e}");
    if sci.len() < plain.len() {
        sci
    } else {
        plain
    }
}
