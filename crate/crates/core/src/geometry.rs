//! Boxes, binary masks, the uncompressed column-major RLE codec and IoU.
//!
//! Two coordinate conventions coexist:
//!
//! * [`BBox`] holds real-valued corner coordinates. Its area is
//!   `(x2 - x1) * (y2 - y1)`.
//! * Mask pixels are addressed by integer `(x, y)`. A mask box measures
//!   pixel extents, so `w = max_x - min_x + 1`. When a mask box has to be
//!   compared against a [`BBox`], pixel `x` is taken to cover `[x, x + 1)`
//!   (see [`BBoxCwh::to_pixel_bbox`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Validation(format!("non-finite box {:?}", self.to_array())));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Err(Error::Validation(format!(
                "box corners out of order {:?}",
                self.to_array()
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
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

    pub fn to_cwh(&self) -> BBoxCwh {
        BBoxCwh {
            cx: 0.5 * (self.x1 + self.x2),
            cy: 0.5 * (self.y1 + self.y2),
            w: self.width(),
            h: self.height(),
        }
    }

    /// Clamp into `[0, width] x [0, height]`. Returns the clamped box and
    /// whether anything moved.
    pub fn clamp_to(&self, width: f64, height: f64) -> (BBox, bool) {
        let c = BBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        };
        let moved = c != *self;
        (c, moved)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scaled(&self, s: f64) -> BBox {
        BBox {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
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
        b.to_array()
    }
}

/// Center/size form of a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBoxCwh {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBoxCwh {
    pub fn to_bbox(&self) -> BBox {
        BBox {
            x1: self.cx - 0.5 * self.w,
            y1: self.cy - 0.5 * self.h,
            x2: self.cx + 0.5 * self.w,
            y2: self.cy + 0.5 * self.h,
        }
    }

    /// Corner box covering the pixels of a mask box produced by
    /// [`mask_bbox`]: pixel columns `min..=max` map to `[min, max + 1]`.
    pub fn to_pixel_bbox(&self) -> BBox {
        let x1 = self.cx - 0.5 * (self.w - 1.0);
        let y1 = self.cy - 0.5 * (self.h - 1.0);
        BBox {
            x1,
            y1,
            x2: x1 + self.w,
            y2: y1 + self.h,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

/// Intersection over union of two real-valued boxes. Zero when the union
/// has no area.
pub fn iou_box(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Full-image binary mask stored as a column-major bitset: pixel `(x, y)`
/// lives at bit `x * height + y`, the same order RLE runs walk.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        BinaryMask {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for x in 0..width {
            for y in 0..height {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
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

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        x * self.height + y
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.get_linear(self.index(x, y))
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let i = self.index(x, y);
        self.set_linear(i, value);
    }

    #[inline]
    pub(crate) fn get_linear(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub(crate) fn set_linear(&mut self, i: usize, value: bool) {
        let bit = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    /// Set bits in column-major linear order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    /// Set pixels as `(x, y)`.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let h = self.height;
        self.ones().map(move |i| (i / h, i % h))
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    pub fn union_count(&self, other: &BinaryMask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum())
    }
}

/// Number of set pixels.
pub fn mask_area(m: &BinaryMask) -> u64 {
    m.words.iter().map(|w| w.count_ones() as u64).sum()
}

/// Pixel-set IoU. Two empty masks give 0.
pub fn iou_mask(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    let inter = a.intersection_count(b)?;
    Ok(inter as f64 / union as f64)
}

/// Tightest box around the set pixels, in center/size form with inclusive
/// pixel extents (`w = max_x - min_x + 1`).
pub fn mask_bbox(m: &BinaryMask) -> Result<BBoxCwh> {
    let mut it = m.pixels();
    let (x0, y0) = it.next().ok_or(Error::EmptyMask)?;
    // column-major walk: x is non-decreasing
    let min_x = x0;
    let (mut max_x, mut min_y, mut max_y) = (x0, y0, y0);
    for (x, y) in it {
        max_x = x;
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    Ok(BBoxCwh {
        cx: 0.5 * (min_x + max_x) as f64,
        cy: 0.5 * (min_y + max_y) as f64,
        w: (max_x - min_x + 1) as f64,
        h: (max_y - min_y + 1) as f64,
    })
}

/// Uncompressed COCO-style RLE: `size` is `[height, width]`, `counts` are
/// alternating 0/1 run lengths in column-major order starting with a
/// (possibly empty) 0-run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleMask {
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn height(&self) -> usize {
        self.size[0]
    }

    pub fn width(&self) -> usize {
        self.size[1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.size[0] * self.size[1];
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if total != n as u64 {
            return Err(Error::CorruptRle(format!(
                "run lengths sum to {total}, expected {}x{} = {n}",
                self.size[0], self.size[1]
            )));
        }
        if let Some(pos) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::CorruptRle(format!("zero-length run at index {}", pos + 1)));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        rle_decode(self)
    }
}

pub fn rle_decode(r: &RleMask) -> Result<BinaryMask> {
    r.validate()?;
    let mut m = BinaryMask::new(r.width(), r.height());
    let mut pos = 0usize;
    for (i, &c) in r.counts.iter().enumerate() {
        let c = c as usize;
        if i % 2 == 1 {
            for j in pos..pos + c {
                m.set_linear(j, true);
            }
        }
        pos += c;
    }
    Ok(m)
}

pub fn rle_encode(m: &BinaryMask) -> RleMask {
    let n = m.len();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for i in 0..n {
        let v = m.get_linear(i);
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    if n > 0 {
        counts.push(run);
    }
    RleMask {
        size: [m.height(), m.width()],
        counts,
    }
}
