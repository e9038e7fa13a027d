#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use sinksam::hydro::is_outlet;
use sinksam::labeling::DepressionComponent;
use sinksam::raster::{BinaryMask, GeoTransform, Raster, DEFAULT_NODATA};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random DEM with integer-valued cells (to provoke flats and ties) and a
/// sprinkling of nodata holes. At least one cell is always valid.
pub fn random_dem(rng: &mut ChaCha8Rng, w: usize, h: usize, nodata_frac: f64) -> Raster {
    let mut values: Vec<f64> = (0..w * h)
        .map(|_| {
            if rng.gen_bool(nodata_frac) {
                DEFAULT_NODATA
            } else {
                f64::from(rng.gen_range(0..12u32))
            }
        })
        .collect();
    if values.iter().all(|&v| v == DEFAULT_NODATA) {
        values[0] = 1.0;
    }
    Raster::new(w, h, values, DEFAULT_NODATA, GeoTransform::default()).unwrap()
}

/// Random raster of smooth-ish real values, for round-trip checks.
pub fn random_real_raster(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster {
    let values = (0..w * h).map(|_| rng.gen_range(-50.0..150.0)).collect();
    Raster::new(w, h, values, DEFAULT_NODATA, GeoTransform { origin_x: 10.0, origin_y: 20.0, cellsize: 0.5 }).unwrap()
}

const OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn valid_neighbours(r: &Raster, row: usize, col: usize) -> impl Iterator<Item = usize> + '_ {
    let (w, h) = (r.width() as isize, r.height() as isize);
    OFFSETS.iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (row as isize + dr, col as isize + dc);
        if nr < 0 || nc < 0 || nr >= h || nc >= w {
            return None;
        }
        let j = (nr * w + nc) as usize;
        (!r.is_nodata(j)).then_some(j)
    })
}

/// Every valid cell of `filled` has an 8-connected path to an outlet of
/// `dem` along which values never increase.
pub fn drains(filled: &Raster, dem: &Raster) -> bool {
    let w = filled.width();
    let v = filled.values();
    let mut ok: Vec<bool> = (0..filled.len())
        .map(|i| !dem.is_nodata(i) && is_outlet(dem, i / w, i % w))
        .collect();
    loop {
        let mut changed = false;
        for i in 0..filled.len() {
            if ok[i] || dem.is_nodata(i) {
                continue;
            }
            if valid_neighbours(dem, i / w, i % w).any(|j| ok[j] && v[j] <= v[i]) {
                ok[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..filled.len()).all(|i| dem.is_nodata(i) || ok[i])
}

/// Union-find labeling of set cells, 8-connected. Returns, per cell, a
/// canonical representative (the smallest cell index of its component) or
/// `None` for background.
pub fn union_find_labels(w: usize, h: usize, on: &[bool]) -> Vec<Option<usize>> {
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..w * h).collect();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !on[i] {
                continue;
            }
            for &(dr, dc) in &OFFSETS {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if on[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    let (lo, hi) = (a.min(b), a.max(b));
                    parent[hi] = lo;
                }
            }
        }
    }
    (0..w * h)
        .map(|i| on[i].then(|| find(&mut parent, i)))
        .collect()
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    BinaryMask::new(w, h, (0..w * h).map(|_| rng.gen_bool(density)).collect()).unwrap()
}

fn iou(a: &DepressionComponent, b: &DepressionComponent) -> f64 {
    let inter = a.pixels.iter().filter(|p| b.pixels.contains(p)).count();
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area_px + b.area_px - inter) as f64
}

/// All one-to-one matchings with every pair at IoU >= `t`, by brute force.
/// Returns the best IoU multiset, sorted descending, under lexicographic order
/// (which is what greedy descending-IoU selection produces).
pub fn exhaustive_best_match(pred: &[DepressionComponent], gt: &[DepressionComponent], t: f64) -> Vec<f64> {
    fn search(
        p: usize,
        pred: &[DepressionComponent],
        gt: &[DepressionComponent],
        used: &mut Vec<bool>,
        current: &mut Vec<f64>,
        best: &mut Vec<f64>,
        t: f64,
    ) {
        if p == pred.len() {
            let mut cand = current.clone();
            cand.sort_by(|a, b| b.total_cmp(a));
            if lex_greater(&cand, best) {
                *best = cand;
            }
            return;
        }
        search(p + 1, pred, gt, used, current, best, t);
        for g in 0..gt.len() {
            if used[g] {
                continue;
            }
            let v = iou(&pred[p], &gt[g]);
            if v > 0.0 && v >= t {
                used[g] = true;
                current.push(v);
                search(p + 1, pred, gt, used, current, best, t);
                current.pop();
                used[g] = false;
            }
        }
    }
    let mut best = Vec::new();
    search(0, pred, gt, &mut vec![false; gt.len()], &mut Vec::new(), &mut best, t);
    best
}

/// Lexicographic comparison on descending-sorted vectors, where a longer
/// vector wins a tie on the shared prefix.
pub fn lex_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x > y;
        }
    }
    a.len() > b.len()
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}
