//! Run-length encoded binary masks.
//!
//! Runs enumerate pixels in column-major order (pixel `(row, col)` sits at
//! flat index `col * height + row`) and alternate background/foreground,
//! starting with background. A mask whose first pixel is foreground starts
//! with a single zero-length run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Dense binary grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmask {
    height: u32,
    width: u32,
    data: Vec<bool>,
}

impl Bitmask {
    pub fn new(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            data: vec![false; height as usize * width as usize],
        }
    }

    pub fn from_fn(height: u32, width: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(height, width);
        for r in 0..height {
            for c in 0..width {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    /// Builds a mask from row-major rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[bool]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.as_ref().len()) as u32;
        let mut data = Vec::with_capacity(height as usize * width as usize);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() as u32 != width {
                return Err(Error::MalformedMask(format!(
                    "row {i} has {} columns, expected {width}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> bool {
        self.data[row as usize * self.width as usize + col as usize]
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        self.data[row as usize * self.width as usize + col as usize] = value;
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }

    pub fn encode(&self) -> SegMask {
        rle_encode(self)
    }
}

/// Binary mask stored as column-major run lengths.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegMask {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

impl SegMask {
    /// Validates and canonicalizes a run list.
    ///
    /// Zero-length runs in the interior are merged away and a trailing zero
    /// run is dropped, so equal pixel sets always produce equal counts.
    pub fn from_counts(height: u32, width: u32, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let expected = height as u64 * width as u64;
        if total != expected {
            return Err(Error::MalformedMask(format!(
                "run lengths sum to {total}, expected {height}x{width} = {expected}"
            )));
        }
        Ok(Self {
            height,
            width,
            counts: canonicalize(counts),
        })
    }

    /// All-background mask.
    pub fn empty(height: u32, width: u32) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            counts: if n == 0 { Vec::new() } else { vec![n] },
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn decode(&self) -> Bitmask {
        rle_decode(self)
    }

    /// Foreground runs as half-open flat-index intervals, in order.
    pub fn foreground_intervals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as u64;
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    /// Tight bounding box of the foreground; `(0,0,0,0)` when empty.
    pub fn bbox(&self) -> BBox {
        bbox_from_mask(self)
    }

    fn check_same_grid(&self, other: &SegMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::MaskDims {
                a_h: self.height,
                a_w: self.width,
                b_h: other.height,
                b_w: other.width,
            });
        }
        Ok(())
    }

    /// Number of pixels set in both masks.
    pub fn intersection_area(&self, other: &SegMask) -> Result<u64> {
        self.check_same_grid(other)?;
        let a: Vec<_> = self.foreground_intervals().collect();
        let b: Vec<_> = other.foreground_intervals().collect();
        let (mut i, mut j, mut inter) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                inter += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(inter)
    }

    /// Pixel union of two masks on the same grid.
    pub fn union(&self, other: &SegMask) -> Result<SegMask> {
        self.check_same_grid(other)?;
        let mut intervals: Vec<_> = self
            .foreground_intervals()
            .chain(other.foreground_intervals())
            .collect();
        intervals.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(intervals.len());
        for (s, e) in intervals {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        Ok(from_intervals(self.height, self.width, &merged))
    }
}

fn canonicalize(counts: Vec<u32>) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(counts.len());
    for (i, c) in counts.into_iter().enumerate() {
        if i == 0 {
            out.push(c);
            continue;
        }
        // A zero run means the next run has the same value as the previous
        // one; `pending_merge` is represented by a trailing zero in `out`.
        if out.len() >= 2 && *out.last().unwrap() == 0 {
            out.pop();
            *out.last_mut().unwrap() += c;
        } else {
            out.push(c);
        }
    }
    if out.len() >= 2 && *out.last().unwrap() == 0 {
        out.pop();
    }
    if out.len() == 1 && out[0] == 0 {
        out.clear();
    }
    out
}

fn from_intervals(height: u32, width: u32, intervals: &[(u64, u64)]) -> SegMask {
    let total = height as u64 * width as u64;
    let mut counts = Vec::with_capacity(intervals.len() * 2 + 1);
    let mut pos = 0u64;
    for &(s, e) in intervals {
        counts.push((s - pos) as u32);
        counts.push((e - s) as u32);
        pos = e;
    }
    if pos < total || counts.is_empty() {
        counts.push((total - pos) as u32);
    }
    SegMask {
        height,
        width,
        counts: canonicalize(counts),
    }
}

/// Run-length encodes a dense mask in column-major order.
pub fn rle_encode(mask: &Bitmask) -> SegMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..mask.width {
        for r in 0..mask.height {
            let v = mask.get(r, c);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    if mask.height as u64 * mask.width as u64 > 0 {
        counts.push(run);
    }
    SegMask {
        height: mask.height,
        width: mask.width,
        counts,
    }
}

pub fn rle_decode(mask: &SegMask) -> Bitmask {
    let h = mask.height as u64;
    let mut out = Bitmask::new(mask.height, mask.width);
    for (s, e) in mask.foreground_intervals() {
        for idx in s..e {
            out.set((idx % h) as u32, (idx / h) as u32, true);
        }
    }
    out
}

/// Intersection over union of two masks. Zero when both are empty.
pub fn mask_iou(a: &SegMask, b: &SegMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

pub fn bbox_from_mask(mask: &SegMask) -> BBox {
    let h = mask.height as u64;
    if h == 0 {
        return BBox::default();
    }
    let (mut x0, mut x1, mut y0, mut y1) = (u64::MAX, 0u64, u64::MAX, 0u64);
    let mut any = false;
    for (s, e) in mask.foreground_intervals() {
        any = true;
        let last = e - 1;
        let (c0, r0) = (s / h, s % h);
        let (c1, r1) = (last / h, last % h);
        x0 = x0.min(c0);
        x1 = x1.max(c1 + 1);
        if c0 != c1 {
            // run wraps across a column boundary
            y0 = 0;
            y1 = h;
        } else {
            y0 = y0.min(r0);
            y1 = y1.max(r1 + 1);
        }
    }
    if !any {
        return BBox::default();
    }
    BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64)
}

/// Rasterizes polygons (flat `[x0, y0, x1, y1, ...]` lists) with even-odd
/// fill, sampling at pixel centers. Multiple polygons are unioned.
pub fn rasterize_polygons(polygons: &[Vec<f64>], height: u32, width: u32) -> Result<SegMask> {
    let mut grid = Bitmask::new(height, width);
    for (pi, poly) in polygons.iter().enumerate() {
        if poly.len() % 2 != 0 || poly.len() < 6 {
            return Err(Error::MalformedMask(format!(
                "polygon {pi} has {} coordinates; need an even count of at least 6",
                poly.len()
            )));
        }
        let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        for r in 0..height {
            let py = r as f64 + 0.5;
            let mut xs: Vec<f64> = Vec::new();
            for k in 0..pts.len() {
                let (ax, ay) = pts[k];
                let (bx, by) = pts[(k + 1) % pts.len()];
                if (ay <= py) != (by <= py) {
                    xs.push(ax + (py - ay) * (bx - ax) / (by - ay));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                // pixel centers strictly inside [span0, span1)
                let lo = (span[0] - 0.5).ceil().max(0.0);
                let hi = (span[1] - 0.5).ceil().min(width as f64);
                let mut c = lo;
                while c < hi {
                    grid.set(r, c as u32, true);
                    c += 1.0;
                }
            }
        }
    }
    Ok(rle_encode(&grid))
}
