//! Depression filling and depression depth.
//!
//! [`fill_depressions`] is a priority-flood: every outlet cell (a valid cell
//! on the grid edge or 8-adjacent to nodata) seeds a min-queue, and cells are
//! claimed in order of the lowest spill level that can reach them. A claimed
//! cell below the current spill level is raised to it. Flats are left flat.
//!
//! Cells raised to the spill level go through a FIFO before the heap is
//! consulted again, which avoids heap traffic inside large depressions.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::raster::{subtract, Raster, DEFAULT_NODATA};

/// 8-neighbourhood offsets as (d_row, d_col).
pub(crate) const D8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct FilledResult {
    /// Depression-free surface.
    pub filled: Raster,
    /// `filled - original`, zero outside depressions.
    pub depth: Raster,
}

#[derive(Debug, Clone, Copy)]
struct QueuedCell {
    elev: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for QueuedCell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueuedCell {}

impl PartialOrd for QueuedCell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueuedCell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.elev
            .total_cmp(&other.elev)
            .then(self.seq.cmp(&other.seq))
    }
}

#[inline]
pub(crate) fn neighbours(
    row: usize,
    col: usize,
    width: usize,
    height: usize,
) -> impl Iterator<Item = (usize, usize)> {
    D8.iter().filter_map(move |&(dr, dc)| {
        let r = row as isize + dr;
        let c = col as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width)
            .then_some((r as usize, c as usize))
    })
}

/// A valid cell water can leave the grid from: on the edge, or next to nodata.
pub fn is_outlet(dem: &Raster, row: usize, col: usize) -> bool {
    let (w, h) = (dem.width(), dem.height());
    if dem.is_nodata(dem.index(row, col)) {
        return false;
    }
    if row == 0 || col == 0 || row + 1 == h || col + 1 == w {
        return true;
    }
    neighbours(row, col, w, h).any(|(r, c)| dem.is_nodata(dem.index(r, c)))
}

/// Raise every closed depression of `dem` to its spill elevation.
pub fn fill_depressions(dem: &Raster) -> Result<FilledResult> {
    let (w, h) = (dem.width(), dem.height());
    let n = dem.len();
    let mut filled = dem.values().to_vec();
    let mut closed: Vec<bool> = (0..n).map(|i| dem.is_nodata(i)).collect();
    let mut heap = BinaryHeap::new();
    let mut pit = VecDeque::new();
    let mut seq = 0u64;

    for row in 0..h {
        for col in 0..w {
            if is_outlet(dem, row, col) {
                let idx = dem.index(row, col);
                closed[idx] = true;
                heap.push(Reverse(QueuedCell {
                    elev: filled[idx],
                    seq,
                    idx,
                }));
                seq += 1;
            }
        }
    }
    if heap.is_empty() {
        return Err(Error::NoOutlet);
    }

    loop {
        let cell = match pit.pop_front() {
            Some(c) => c,
            None => match heap.pop() {
                Some(Reverse(c)) => c,
                None => break,
            },
        };
        let (row, col) = (cell.idx / w, cell.idx % w);
        for (r, c) in neighbours(row, col, w, h) {
            let nidx = r * w + c;
            if closed[nidx] {
                continue;
            }
            closed[nidx] = true;
            let queued = QueuedCell {
                elev: filled[nidx].max(cell.elev),
                seq,
                idx: nidx,
            };
            seq += 1;
            if filled[nidx] <= cell.elev {
                filled[nidx] = cell.elev;
                pit.push_back(queued);
            } else {
                heap.push(Reverse(queued));
            }
        }
    }

    let filled = dem.with_values(filled)?;
    let mut depth = subtract(&filled, dem)?;
    if dem.nodata() >= 0.0 {
        // depths are >= 0 and could collide with the sentinel
        let values = depth
            .values()
            .iter()
            .enumerate()
            .map(|(i, &d)| if dem.is_nodata(i) { DEFAULT_NODATA } else { d })
            .collect();
        depth = Raster::new(dem.width(), dem.height(), values, DEFAULT_NODATA, dem.geo())?;
    }
    Ok(FilledResult { filled, depth })
}

/// `fill_depressions(dem).depth`.
pub fn depression_depth(dem: &Raster) -> Result<Raster> {
    fill_depressions(dem).map(|r| r.depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn grid(w: usize, h: usize, v: Vec<f64>) -> Raster {
        Raster::new(w, h, v, DEFAULT_NODATA, GeoTransform::default()).unwrap()
    }

    #[test]
    fn ramp_is_unchanged() {
        let ramp = grid(6, 5, (0..30).map(|i| (i / 6 + i % 6) as f64).collect());
        let res = fill_depressions(&ramp).unwrap();
        assert_eq!(res.filled, ramp);
        assert!(res.depth.values().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_pit_fills_to_rim() {
        let mut v = vec![10.0; 25];
        v[12] = 4.0;
        let res = fill_depressions(&grid(5, 5, v)).unwrap();
        assert_eq!(res.filled.values(), &[10.0; 25]);
        let mut expected = vec![0.0; 25];
        expected[12] = 6.0;
        assert_eq!(res.depth.values(), expected.as_slice());
    }

    #[test]
    fn pit_fills_to_lowest_rim_cell() {
        // Edge ring at 9 with one notch at 8; interior cycles through 3, 4, 5.
        let mut v = vec![9.0; 49];
        v[3] = 8.0;
        for r in 1..6 {
            for c in 1..6 {
                v[r * 7 + c] = [3.0, 4.0, 5.0][(r + c) % 3];
            }
        }
        let dem = grid(7, 7, v.clone());
        let res = fill_depressions(&dem).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                let interior = (1..6).contains(&r) && (1..6).contains(&c);
                let want = if interior { 8.0 } else { v[r * 7 + c] };
                assert_eq!(res.filled.get(r, c), want, "({r},{c})");
                assert_eq!(res.depth.get(r, c), want - v[r * 7 + c]);
            }
        }
    }

    #[test]
    fn nodata_acts_as_outlet() {
        // 5x5 bowl of 10 with a nodata hole in the centre: nothing to fill.
        let mut v = vec![10.0; 25];
        v[6] = 2.0;
        v[12] = DEFAULT_NODATA;
        let res = fill_depressions(&grid(5, 5, v)).unwrap();
        assert_eq!(res.filled.get(1, 1), 2.0);
        assert!(res.filled.is_nodata(12));
        assert!(res.depth.is_nodata(12));
    }

    #[test]
    fn all_nodata_is_reported() {
        let r = grid(3, 3, vec![DEFAULT_NODATA; 9]);
        assert!(matches!(fill_depressions(&r), Err(Error::NoOutlet)));
    }

    #[test]
    fn zero_nodata_does_not_swallow_depths() {
        let mut v = vec![10.0; 25];
        v[12] = 4.0;
        v[0] = 0.0;
        let dem = Raster::new(5, 5, v, 0.0, GeoTransform::default()).unwrap();
        let res = fill_depressions(&dem).unwrap();
        assert!(res.depth.is_nodata(0));
        assert!(!res.depth.is_nodata(1));
        assert_eq!(res.depth.get(0, 1), 0.0);
        assert_eq!(res.depth.get(2, 2), 6.0);
    }

    #[test]
    fn single_cell_raster() {
        let res = fill_depressions(&grid(1, 1, vec![3.0])).unwrap();
        assert_eq!(res.filled.values(), &[3.0]);
    }
}
