//! Synthetic terrains with known sinkholes.
//!
//! The base surface is a planar slope plus value noise (random lattice
//! values every `noise_cell` pixels, bilinearly interpolated, scaled to
//! `noise_amp`). Each sinkhole is a cosine bowl
//! `depth * (1 + cos(pi * r / R)) / 2` for `r < R`, subtracted from the base.
//! All sampling comes from [`Lcg64`], so a seed fixes the scene on every
//! platform.
//!
//! [`brute_force_fill`] is a deliberately naive fill used to check
//! [`crate::hydro::fill_depressions`].

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ascii_grid::{write_ascii_grid, write_mask_grid};
use crate::error::{Error, Result};
use crate::labeling::{DepressionComponent, PromptBox};
use crate::pnm::{write_ppm, RgbImage};
use crate::raster::{BinaryMask, GeoTransform, Raster, DEFAULT_NODATA};

/// 64-bit linear congruential generator, `state = state * A + C (mod 2^64)`,
/// with Knuth's MMIX constants. Floats use the top 53 bits.
#[derive(Debug, Clone)]
pub struct Lcg64 {
    state: u64,
}

impl Lcg64 {
    pub const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
    pub const INCREMENT: u64 = 1_442_695_040_888_963_407;

    pub fn new(seed: u64) -> Self {
        let mut rng = Lcg64 { state: seed };
        // decorrelate small seeds
        rng.next_u64();
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; `lo` when the range is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub n_sinkholes: usize,
    /// Pit depth range, same units as the surface.
    pub depth_range: (f64, f64),
    /// Pit radius range in pixels.
    pub radius_range: (f64, f64),
    pub noise_amp: f64,
    /// Lattice spacing of the value noise, in pixels.
    pub noise_cell: usize,
    /// Surface rise per pixel, southward and (at half rate) eastward.
    pub slope: f64,
    pub base_elevation: f64,
    pub cellsize: f64,
}

impl SynthParams {
    pub fn new(seed: u64, width: usize, height: usize, n_sinkholes: usize) -> Self {
        SynthParams {
            seed,
            width,
            height,
            n_sinkholes,
            depth_range: (3.0, 8.0),
            radius_range: (6.0, 20.0),
            noise_amp: 0.3,
            noise_cell: 32,
            slope: 0.0002,
            base_elevation: 100.0,
            cellsize: 0.025,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (d0, d1) = self.depth_range;
        let (r0, r1) = self.radius_range;
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty grid {}x{}", self.width, self.height));
        }
        if !(d0 > 0.0 && d1 >= d0) {
            return bad(format!("depth range ({d0}, {d1}) must be positive and ordered"));
        }
        if !(r0 > 0.0 && r1 >= r0) {
            return bad(format!("radius range ({r0}, {r1}) must be positive and ordered"));
        }
        if self.noise_amp < 0.0 || self.noise_cell == 0 || self.cellsize.is_nan() || self.cellsize <= 0.0 {
            return bad("noise amplitude, noise cell and cellsize must be positive".into());
        }
        if self.n_sinkholes > 0 && 2.0 * (r1 + PIT_MARGIN) >= self.width.min(self.height) as f64 {
            return bad(format!(
                "pits of radius up to {r1} do not fit a {}x{} grid",
                self.width, self.height
            ));
        }
        Ok(())
    }
}

/// Gap kept between pit rims, and between rims and the grid edge.
const PIT_MARGIN: f64 = 3.0;
const ATTEMPTS_PER_PIT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinkhole {
    pub id: u32,
    /// (row, col) of the pit centre, in pixel units.
    pub center: [f64; 2],
    pub radius: f64,
    pub depth: f64,
    pub bbox: PromptBox,
    pub area_px: usize,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub dem: Raster,
    pub rgb: RgbImage,
    pub gt_mask: BinaryMask,
    /// One component per pit: the cells it lowered.
    pub truths: Vec<DepressionComponent>,
    pub sinkholes: Vec<Sinkhole>,
    pub seed: u64,
}

fn value_noise(rng: &mut Lcg64, width: usize, height: usize, cell: usize, amp: f64) -> Vec<f64> {
    let lw = width / cell + 2;
    let lh = height / cell + 2;
    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut out = Vec::with_capacity(width * height);
    for r in 0..height {
        let fy = r as f64 / cell as f64;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for c in 0..width {
            let fx = c as f64 / cell as f64;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let at = |y: usize, x: usize| lattice[y * lw + x];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(amp * (top * (1.0 - ty) + bottom * ty));
        }
    }
    out
}

fn place_pits(rng: &mut Lcg64, p: &SynthParams) -> Result<Vec<(f64, f64, f64, f64)>> {
    let mut pits: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(p.n_sinkholes);
    let mut attempts = 0;
    let budget = ATTEMPTS_PER_PIT * p.n_sinkholes.max(1);
    while pits.len() < p.n_sinkholes {
        if attempts == budget {
            return Err(Error::Placement {
                requested: p.n_sinkholes,
                attempts,
            });
        }
        attempts += 1;
        let radius = rng.uniform(p.radius_range.0, p.radius_range.1);
        let depth = rng.uniform(p.depth_range.0, p.depth_range.1);
        let lo = radius + PIT_MARGIN;
        let row = rng.uniform(lo, p.height as f64 - 1.0 - lo);
        let col = rng.uniform(lo, p.width as f64 - 1.0 - lo);
        let clear = pits.iter().all(|&(r2, c2, rad2, _)| {
            let d = ((row - r2).powi(2) + (col - c2).powi(2)).sqrt();
            d >= radius + rad2 + PIT_MARGIN
        });
        if clear {
            pits.push((row, col, radius, depth));
        }
    }
    Ok(pits)
}

/// Grayscale hillshade lit from the north-west, pits darkened, sand tint.
fn render(dem: &Raster, gt: &BinaryMask) -> RgbImage {
    let (w, h) = (dem.width(), dem.height());
    let mut img = RgbImage::blank(w, h);
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        dem.get(r, c)
    };
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            let dzdx = (at(ri, ci + 1) - at(ri, ci - 1)) / 2.0;
            let dzdy = (at(ri + 1, ci) - at(ri - 1, ci)) / 2.0;
            let mut shade = 170.0 + 60.0 * (dzdx + dzdy);
            if gt.get(r, c) {
                shade *= 0.6;
            }
            let s = shade.clamp(0.0, 255.0);
            img.set_pixel(
                r,
                c,
                [s.round() as u8, (s * 0.93).round() as u8, (s * 0.8).round() as u8],
            );
        }
    }
    img
}

pub fn gen_terrain(params: &SynthParams) -> Result<SynthScene> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let mut rng = Lcg64::new(params.seed);
    let pits = place_pits(&mut rng, params)?;
    let noise = value_noise(&mut rng, w, h, params.noise_cell, params.noise_amp);

    let mut base = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            base.push(params.base_elevation + params.slope * (r as f64 + 0.5 * c as f64) + noise[r * w + c]);
        }
    }
    let mut values = base.clone();
    let mut gt = BinaryMask::zeros(w, h);
    let mut truths = Vec::with_capacity(pits.len());
    let mut sinkholes = Vec::with_capacity(pits.len());

    for (k, &(row, col, radius, depth)) in pits.iter().enumerate() {
        let r_lo = (row - radius).floor().max(0.0) as usize;
        let r_hi = ((row + radius).ceil() as usize).min(h - 1);
        let c_lo = (col - radius).floor().max(0.0) as usize;
        let c_hi = ((col + radius).ceil() as usize).min(w - 1);
        let mut pixels = Vec::new();
        let mut max_depth = 0.0f64;
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let dist = ((r as f64 - row).powi(2) + (c as f64 - col).powi(2)).sqrt();
                if dist >= radius {
                    continue;
                }
                let i = r * w + c;
                values[i] = base[i] - depth * (1.0 + (PI * dist / radius).cos()) / 2.0;
                if values[i] < base[i] {
                    gt.set(r, c, true);
                    pixels.push((r, c));
                    max_depth = max_depth.max(base[i] - values[i]);
                }
            }
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(r, c) in &pixels {
            y0 = y0.min(r);
            x0 = x0.min(c);
            y1 = y1.max(r + 1);
            x1 = x1.max(c + 1);
        }
        let bbox = PromptBox { x0, y0, x1, y1 };
        let id = k as u32 + 1;
        sinkholes.push(Sinkhole {
            id,
            center: [row, col],
            radius,
            depth,
            bbox,
            area_px: pixels.len(),
        });
        truths.push(DepressionComponent {
            id,
            area_px: pixels.len(),
            pixels,
            max_depth,
            bbox,
        });
    }

    let geo = GeoTransform {
        origin_x: 0.0,
        origin_y: 0.0,
        cellsize: params.cellsize,
    };
    let dem = Raster::new(w, h, values, DEFAULT_NODATA, geo)?;
    let rgb = render(&dem, &gt);
    Ok(SynthScene {
        dem,
        rgb,
        gt_mask: gt,
        truths,
        sinkholes,
        seed: params.seed,
    })
}

/// File names used by [`write_scene`].
pub const DEM_FILE: &str = "dem.asc";
pub const RGB_FILE: &str = "rgb.ppm";
pub const GT_FILE: &str = "gt_mask.asc";
pub const TRUTHS_FILE: &str = "truths.json";

#[derive(Serialize)]
struct TruthsDocument<'a> {
    seed: u64,
    width: usize,
    height: usize,
    sinkholes: &'a [Sinkhole],
}

pub fn write_scene(scene: &SynthScene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ascii_grid(&scene.dem, dir.join(DEM_FILE))?;
    write_ppm(&scene.rgb, dir.join(RGB_FILE))?;
    write_mask_grid(&scene.gt_mask, scene.dem.geo(), dir.join(GT_FILE))?;
    let doc = TruthsDocument {
        seed: scene.seed,
        width: scene.dem.width(),
        height: scene.dem.height(),
        sinkholes: &scene.sinkholes,
    };
    let path = dir.join(TRUTHS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Naive fill by repeated relaxation. Outlets (valid cells on the edge or
/// touching nodata) keep their value; every other valid cell starts at
/// infinity and is relaxed to `max(dem, min of its valid 8-neighbours)`
/// until nothing changes. Sweeps alternate direction.
pub fn brute_force_fill(dem: &Raster) -> Raster {
    let (w, h) = (dem.width() as isize, dem.height() as isize);
    let nd = dem.nodata();
    let v = dem.values();
    let idx = |r: isize, c: isize| (r * w + c) as usize;
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < h && c < w;
    let offsets: Vec<(isize, isize)> = (-1..=1)
        .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
        .filter(|&o| o != (0, 0))
        .collect();

    let mut outlet = vec![false; v.len()];
    let mut water = v.to_vec();
    for r in 0..h {
        for c in 0..w {
            let i = idx(r, c);
            if v[i] == nd {
                continue;
            }
            outlet[i] = offsets.iter().any(|&(dr, dc)| {
                let (nr, nc) = (r + dr, c + dc);
                !inside(nr, nc) || v[idx(nr, nc)] == nd
            });
            if !outlet[i] {
                water[i] = f64::INFINITY;
            }
        }
    }

    let mut forward = true;
    loop {
        let mut changed = false;
        for k in 0..w * h {
            let k = if forward { k } else { w * h - 1 - k };
            let (r, c) = (k / w, k % w);
            let i = idx(r, c);
            if v[i] == nd || outlet[i] {
                continue;
            }
            let lowest = offsets
                .iter()
                .map(|&(dr, dc)| idx(r + dr, c + dc))
                .filter(|&j| v[j] != nd)
                .map(|j| water[j])
                .fold(f64::INFINITY, f64::min);
            let relaxed = v[i].max(lowest);
            if relaxed < water[i] {
                water[i] = relaxed;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        forward = !forward;
    }
    dem.with_values(water)
        .expect("every valid cell drains to an outlet")
}
