//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("expected magic {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("maxval {0} unsupported, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("pixel data has {found} bytes, expected {expected}")]
    Truncated { expected: usize, found: usize },
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn window(&self, row0: usize, col0: usize, w: usize, h: usize) -> Result<RgbImage> {
        if row0 + h > self.height || col0 + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "window {w}x{h} at ({row0},{col0}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for r in row0..row0 + h {
            let start = (r * self.width + col0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        RgbImage::new(w, h, data)
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        encode(b"P6", self.width, self.height, &self.data)
    }

    pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Self, PnmError> {
        let (width, height, data) = decode(bytes, "P6", 3)?;
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} bytes for a {width}x{height} gray image",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        encode(b"P5", self.width, self.height, &self.data)
    }

    pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Self, PnmError> {
        let (width, height, data) = decode(bytes, "P5", 1)?;
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RgbImage::decode_ppm(&bytes).map_err(|e| pnm_parse_error(path, e))
}

pub fn write_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.encode_ppm()).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    GrayImage::decode_pgm(&bytes).map_err(|e| pnm_parse_error(path, e))
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.encode_pgm()).map_err(|e| Error::io(path, e))
}

fn pnm_parse_error(path: &Path, e: PnmError) -> Error {
    Error::Parse {
        source_name: path.display().to_string(),
        line: 1,
        message: e.to_string(),
    }
}

fn encode(magic: &[u8], width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() + 32);
    out.extend_from_slice(magic);
    out.extend_from_slice(format!("\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(data);
    out
}

fn decode(
    bytes: &[u8],
    magic: &'static str,
    channels: usize,
) -> std::result::Result<(usize, usize, Vec<u8>), PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(PnmError::BadMagic {
            expected: magic,
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        fields[k] = text
            .parse()
            .map_err(|_| PnmError::BadHeader(format!("missing or invalid {name}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PnmError::BadHeader("no whitespace after maxval".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width * height * channels;
    let found = bytes.len() - pos;
    if found != expected {
        return Err(PnmError::Truncated { expected, found });
    }
    Ok((width, height, bytes[pos..].to_vec()))
}
