//! Connected depressions, threshold filtering and box prompts.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::neighbours;
use crate::raster::{BinaryMask, Raster};

/// Axis-aligned pixel box, `[x0, x1) x [y0, y1)`. `x` is the column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", try_from = "[usize; 4]")]
pub struct PromptBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PromptBox {
    /// Box checked against a `width` x `height` patch.
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, width: usize, height: usize) -> Result<Self> {
        let b = PromptBox { x0, y0, x1, y1 };
        b.check_within(width, height)?;
        Ok(b)
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "box {:?} is empty or outside a {width}x{height} patch",
                self.to_array()
            )))
        }
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        col >= self.x0 && col < self.x1 && row >= self.y0 && row < self.y1
    }

    pub fn to_array(&self) -> [usize; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl From<PromptBox> for [usize; 4] {
    fn from(b: PromptBox) -> Self {
        b.to_array()
    }
}

impl TryFrom<[usize; 4]> for PromptBox {
    type Error = String;

    fn try_from([x0, y0, x1, y1]: [usize; 4]) -> std::result::Result<Self, String> {
        if x0 < x1 && y0 < y1 {
            Ok(PromptBox { x0, y0, x1, y1 })
        } else {
            Err(format!("degenerate box [{x0}, {y0}, {x1}, {y1}]"))
        }
    }
}

/// A maximal 8-connected set of cells with positive depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepressionComponent {
    /// 1-based label, assigned in raster scan order of each component's first cell.
    pub id: u32,
    /// (row, col) cells, in discovery order.
    pub pixels: Vec<(usize, usize)>,
    pub area_px: usize,
    pub max_depth: f64,
    /// Tight bounding box of `pixels`.
    pub bbox: PromptBox,
}

/// Removal thresholds. A component is dropped when its depth or its area is
/// strictly below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub min_depth: f64,
    pub min_area_px: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_depth: 2.0,
            min_area_px: 50,
        }
    }
}

impl FilterThresholds {
    pub fn new(min_depth: f64, min_area_px: usize) -> Result<Self> {
        if !(min_depth >= 0.0 && min_depth.is_finite()) || min_area_px < 1 {
            return Err(Error::InvalidArgument(format!(
                "filter thresholds need min_depth >= 0 and min_area_px >= 1, got ({min_depth}, {min_area_px})"
            )));
        }
        Ok(FilterThresholds {
            min_depth,
            min_area_px,
        })
    }

    pub fn keeps(&self, c: &DepressionComponent) -> bool {
        !(c.max_depth < self.min_depth || c.area_px < self.min_area_px)
    }
}

fn label_cells(
    width: usize,
    height: usize,
    is_fg: impl Fn(usize) -> bool,
    depth_of: impl Fn(usize) -> f64,
) -> Vec<DepressionComponent> {
    let mut seen = vec![false; width * height];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..width * height {
        if seen[start] || !is_fg(start) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        let mut max_depth = f64::NEG_INFINITY;
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / width, i % width);
            pixels.push((r, c));
            max_depth = max_depth.max(depth_of(i));
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
            for (nr, nc) in neighbours(r, c, width, height) {
                let j = nr * width + nc;
                if !seen[j] && is_fg(j) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(DepressionComponent {
            id: out.len() as u32 + 1,
            area_px: pixels.len(),
            pixels,
            max_depth,
            bbox: PromptBox {
                x0: c0,
                y0: r0,
                x1: c1 + 1,
                y1: r1 + 1,
            },
        });
    }
    out
}

/// Label 8-connected components of cells with depth > 0. Nodata cells are background.
pub fn label_components(depth: &Raster) -> Vec<DepressionComponent> {
    let values = depth.values();
    label_cells(
        depth.width(),
        depth.height(),
        |i| !depth.is_nodata(i) && values[i] > 0.0,
        |i| values[i],
    )
}

/// Label 8-connected foreground regions of a mask. `max_depth` is 1 for every component.
pub fn label_mask(mask: &BinaryMask) -> Vec<DepressionComponent> {
    let bits = mask.bits();
    label_cells(mask.width(), mask.height(), |i| bits[i], |_| 1.0)
}

pub fn filter_components(
    components: &[DepressionComponent],
    thresholds: FilterThresholds,
) -> Vec<DepressionComponent> {
    components
        .iter()
        .filter(|c| thresholds.keeps(c))
        .cloned()
        .collect()
}

/// Tight boxes grown by `pad_px` on every side and clamped to the patch.
pub fn boxes_from_components(
    components: &[DepressionComponent],
    pad_px: usize,
    patch_w: usize,
    patch_h: usize,
) -> Vec<PromptBox> {
    components
        .iter()
        .map(|c| PromptBox {
            x0: c.bbox.x0.saturating_sub(pad_px),
            y0: c.bbox.y0.saturating_sub(pad_px),
            x1: (c.bbox.x1 + pad_px).min(patch_w),
            y1: (c.bbox.y1 + pad_px).min(patch_h),
        })
        .collect()
}

/// Copy of `depth` with every positive cell outside `kept` set to zero.
pub fn retain_components(depth: &Raster, kept: &[DepressionComponent]) -> Result<Raster> {
    let mut keep = vec![false; depth.len()];
    for c in kept {
        for &(r, col) in &c.pixels {
            keep[depth.index(r, col)] = true;
        }
    }
    let values = depth
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if depth.is_nodata(i) || keep[i] || v <= 0.0 {
                v
            } else {
                0.0
            }
        })
        .collect();
    depth.with_values(values)
}

/// Per-patch prompt file. Also accepted as input for boxes produced elsewhere,
/// in which case `areas` and `max_depths` may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxesDocument {
    pub patch_id: String,
    pub boxes: Vec<PromptBox>,
    #[serde(default)]
    pub areas: Vec<usize>,
    #[serde(default)]
    pub max_depths: Vec<f64>,
}

impl BoxesDocument {
    pub fn from_components(
        patch_id: impl Into<String>,
        components: &[DepressionComponent],
        boxes: Vec<PromptBox>,
    ) -> Self {
        BoxesDocument {
            patch_id: patch_id.into(),
            boxes,
            areas: components.iter().map(|c| c.area_px).collect(),
            max_depths: components.iter().map(|c| c.max_depth).collect(),
        }
    }

    pub fn validate(&self, patch_w: usize, patch_h: usize) -> Result<()> {
        let n = self.boxes.len();
        for (name, len) in [("areas", self.areas.len()), ("max_depths", self.max_depths.len())] {
            if len != 0 && len != n {
                return Err(Error::InvalidArgument(format!(
                    "patch '{}': {len} {name} for {n} boxes",
                    self.patch_id
                )));
            }
        }
        for b in &self.boxes {
            b.check_within(patch_w, patch_h)?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GeoTransform, DEFAULT_NODATA};

    fn depth(w: usize, h: usize, v: Vec<f64>) -> Raster {
        Raster::new(w, h, v, DEFAULT_NODATA, GeoTransform::default()).unwrap()
    }

    fn comp(max_depth: f64, area_px: usize) -> DepressionComponent {
        DepressionComponent {
            id: 1,
            pixels: vec![(0, 0); area_px],
            area_px,
            max_depth,
            bbox: PromptBox {
                x0: 0,
                y0: 0,
                x1: 1,
                y1: 1,
            },
        }
    }

    #[test]
    fn all_zero_has_no_components() {
        assert!(label_components(&depth(4, 4, vec![0.0; 16])).is_empty());
    }

    #[test]
    fn diagonal_cells_join() {
        let mut v = vec![0.0; 9];
        v[0] = 1.0;
        v[4] = 2.0;
        let comps = label_components(&depth(3, 3, v));
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].area_px, 2);
        assert_eq!(comps[0].max_depth, 2.0);
        assert_eq!(comps[0].bbox.to_array(), [0, 0, 2, 2]);
    }

    #[test]
    fn labels_follow_scan_order_and_skip_nodata() {
        #[rustfmt::skip]
        let v = vec![
            0.0, 0.0, 0.0, 3.0,
            1.0, 0.0, 0.0, 0.0,
            DEFAULT_NODATA, 0.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
        ];
        let comps = label_components(&depth(4, 4, v));
        assert_eq!(comps.len(), 3);
        assert_eq!(comps[0].pixels, vec![(0, 3)]);
        assert_eq!(comps[1].pixels, vec![(1, 0)]);
        assert_eq!(comps[2].pixels, vec![(3, 0)]);
        assert_eq!(comps.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn filter_uses_strict_less_than() {
        let t = FilterThresholds::default();
        assert!(!t.keeps(&comp(1.5, 200)));
        assert!(!t.keeps(&comp(3.0, 49)));
        assert!(t.keeps(&comp(2.0, 50)));
        let mut kept_id = comp(2.0, 50);
        kept_id.id = 7;
        let out = filter_components(&[comp(1.0, 80), kept_id], t);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 7);
    }

    #[test]
    fn threshold_validation() {
        assert!(FilterThresholds::new(-1.0, 50).is_err());
        assert!(FilterThresholds::new(2.0, 0).is_err());
        assert!(FilterThresholds::new(0.0, 1).is_ok());
    }

    #[test]
    fn box_examples() {
        let mut c = comp(5.0, 1);
        c.bbox = PromptBox {
            x0: 5,
            y0: 3,
            x1: 6,
            y1: 4,
        };
        assert_eq!(boxes_from_components(&[c.clone()], 0, 512, 512)[0].to_array(), [5, 3, 6, 4]);

        // rows 2..=4, cols 1..=7, pad 2
        c.bbox = PromptBox {
            x0: 1,
            y0: 2,
            x1: 8,
            y1: 5,
        };
        let b = boxes_from_components(&[c.clone()], 2, 512, 512)[0];
        assert_eq!(b.to_array(), [0, 0, 10, 7]);

        c.bbox = PromptBox {
            x0: 508,
            y0: 509,
            x1: 512,
            y1: 512,
        };
        let b = boxes_from_components(&[c], 3, 512, 512)[0];
        assert_eq!(b.to_array(), [505, 506, 512, 512]);
    }

    #[test]
    fn retain_zeroes_dropped_components() {
        let mut v = vec![0.0; 16];
        v[0] = 5.0;
        v[15] = 1.0;
        let d = depth(4, 4, v);
        let comps = label_components(&d);
        let kept = filter_components(&comps, FilterThresholds::new(2.0, 1).unwrap());
        let out = retain_components(&d, &kept).unwrap();
        assert_eq!(out.values()[0], 5.0);
        assert_eq!(out.values()[15], 0.0);
    }

    #[test]
    fn boxes_document_json_shape() {
        let doc = BoxesDocument {
            patch_id: "r00000_c00000".into(),
            boxes: vec![PromptBox {
                x0: 1,
                y0: 2,
                x1: 3,
                y1: 4,
            }],
            areas: vec![4],
            max_depths: vec![2.5],
        };
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(
            text,
            r#"{"patch_id":"r00000_c00000","boxes":[[1,2,3,4]],"areas":[4],"max_depths":[2.5]}"#
        );
        let external: BoxesDocument =
            serde_json::from_str(r#"{"patch_id":"p","boxes":[[0,0,5,5]]}"#).unwrap();
        assert!(external.areas.is_empty());
        external.validate(8, 8).unwrap();
        assert!(external.validate(4, 4).is_err());
        assert!(serde_json::from_str::<BoxesDocument>(r#"{"patch_id":"p","boxes":[[3,0,3,5]]}"#).is_err());
    }
}
