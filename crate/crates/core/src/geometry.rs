//! Boxes, dense binary masks and the overlap measures built on them.
//!
//! Boxes are half-open: `(x1, y1)` is inclusive and `(x2, y2)` exclusive, so an
//! integer box covers exactly `(x2 - x1) * (y2 - y1)` cells when rasterized.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box in grid pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width as f64 && self.y2 <= height as f64
    }

    /// Intersect with the grid; `None` when nothing of the box remains.
    pub fn clamped(&self, width: usize, height: usize) -> Option<BBox> {
        BBox::new(
            self.x1.max(0.0),
            self.y1.max(0.0),
            self.x2.min(width as f64),
            self.y2.min(height as f64),
        )
        .ok()
    }

    /// Tightest integer box around the set cells of `mask`.
    pub fn around(mask: &BinaryMask) -> Option<BBox> {
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for cell in mask.cells() {
            let (x, y) = (cell % mask.width, cell / mask.width);
            x1 = x1.min(x);
            y1 = y1.min(y);
            x2 = x2.max(x + 1);
            y2 = y2.max(y + 1);
        }
        if x1 == usize::MAX {
            return None;
        }
        BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64).ok()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Dense row-major bit grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl BinaryMask {
    /// All-unset mask. Panics on a zero dimension.
    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        BinaryMask {
            width,
            height,
            words: vec![0; (width * height).div_ceil(64)],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::empty(width, height);
        for i in 0..width * height {
            m.set_index(i, true);
        }
        m
    }

    pub fn from_bits(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::BadMaskSize {
                width,
                height,
                expected: width * height,
                found: bits.len(),
            });
        }
        let mut m = Self::empty(width, height);
        for (i, &b) in bits.iter().enumerate() {
            m.set_index(i, b);
        }
        Ok(m)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Mask whose set cells are exactly `cells` (row-major indices).
    pub fn from_cells(width: usize, height: usize, cells: &[u32]) -> Self {
        let mut m = Self::empty(width, height);
        for &c in cells {
            m.set_index(c as usize, true);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.get_index(y * self.width + x)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.set_index(y * self.width + x, value)
    }

    fn get_index(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn set_index(&mut self, i: usize, value: bool) {
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Row-major indices of set cells, ascending.
    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            core::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + bit)
            })
        })
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect();
        Ok(BinaryMask {
            words,
            width: self.width,
            height: self.height,
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect();
        Ok(BinaryMask {
            words,
            width: self.width,
            height: self.height,
        })
    }

    /// In-place union.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    fn overlap_counts(&self, other: &BinaryMask) -> Result<(usize, usize)> {
        self.check_dims(other)?;
        let (mut inter, mut union) = (0, 0);
        for (a, b) in self.words.iter().zip(&other.words) {
            inter += (a & b).count_ones() as usize;
            union += (a | b).count_ones() as usize;
        }
        Ok((inter, union))
    }

    /// Set cells with at least one unset 4-neighbour, counting cells beyond
    /// the grid edge as unset.
    pub fn boundary(&self) -> BinaryMask {
        let mut out = BinaryMask::empty(self.width, self.height);
        for i in self.cells() {
            let (x, y) = (i % self.width, i / self.width);
            let interior = x > 0
                && y > 0
                && x + 1 < self.width
                && y + 1 < self.height
                && self.get(x - 1, y)
                && self.get(x + 1, y)
                && self.get(x, y - 1)
                && self.get(x, y + 1);
            if !interior {
                out.set_index(i, true);
            }
        }
        out
    }

    /// One step of 4-neighbour erosion (the mask minus its boundary).
    pub fn eroded(&self) -> BinaryMask {
        let boundary = self.boundary();
        let words = self.words.iter().zip(&boundary.words).map(|(a, b)| a & !b).collect();
        BinaryMask {
            words,
            width: self.width,
            height: self.height,
        }
    }

    /// Dilation by a `(2r+1) x (2r+1)` square, i.e. every cell within
    /// Chebyshev distance `radius` of a set cell.
    pub fn dilated(&self, radius: usize) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let mut out = BinaryMask::empty(self.width, self.height);
        for i in self.cells() {
            let (x, y) = (i % self.width, i / self.width);
            let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(self.width - 1));
            let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(self.height - 1));
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    out.set(xx, yy, true);
                }
            }
        }
        out
    }

    /// Set cells ordered so that every prefix is a progressively eroded copy
    /// of the mask: deepest cells first, the outer boundary ring last. Within
    /// one erosion layer cells keep row-major order.
    ///
    /// `BinaryMask::from_cells(w, h, &order[..n])` is then the mask shrunk to
    /// `n` cells, and prefixes are nested.
    pub fn erosion_order(&self) -> Vec<u32> {
        let mut layers: Vec<Vec<u32>> = Vec::new();
        let mut current = self.clone();
        while !current.is_empty() {
            let ring = current.boundary();
            layers.push(ring.cells().map(|c| c as u32).collect());
            current = current.eroded();
        }
        layers.into_iter().rev().flatten().collect()
    }
}

/// Cell-count of the mask.
pub fn mask_area(m: &BinaryMask) -> usize {
    m.area()
}

/// Intersection over union; two empty masks agree perfectly (1.0).
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = a.overlap_counts(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Rasterize a box: a cell is set when its centre lies inside the box.
pub fn box_to_mask(b: &BBox, width: usize, height: usize) -> Result<BinaryMask> {
    if width == 0 || height == 0 || !b.fits(width, height) {
        return Err(Error::BoxOutsideGrid {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            width,
            height,
        });
    }
    Ok(BinaryMask::from_fn(width, height, |x, y| {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        cx >= b.x1 && cx < b.x2 && cy >= b.y1 && cy < b.y2
    }))
}

/// One mask per frame, all with the same dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    masks: Vec<BinaryMask>,
}

impl MaskSequence {
    pub fn new(masks: Vec<BinaryMask>) -> Result<Self> {
        if let Some(first) = masks.first() {
            for m in &masks[1..] {
                first.check_dims(m)?;
            }
        }
        Ok(MaskSequence { masks })
    }

    /// `frames` empty masks.
    pub fn empty(frames: usize, width: usize, height: usize) -> Self {
        MaskSequence {
            masks: vec![BinaryMask::empty(width, height); frames],
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn get(&self, t: usize) -> Option<&BinaryMask> {
        self.masks.get(t)
    }

    pub(crate) fn get_mut(&mut self, t: usize) -> Option<&mut BinaryMask> {
        self.masks.get_mut(t)
    }

    /// Per-frame IoU against `other`.
    pub fn frame_ious(&self, other: &MaskSequence) -> Result<Vec<f64>> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        self.masks
            .iter()
            .zip(&other.masks)
            .map(|(a, b)| mask_iou(a, b))
            .collect()
    }
}
