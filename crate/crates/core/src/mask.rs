//! Binary masks: a dense [`Bitmap`] for pixel work and the run-length
//! [`SegmentMask`] used for storage and interchange.
//!
//! Runs are row-major and alternate background/foreground, starting with a
//! background run that may be zero. A 4×4 all-foreground mask is `[0, 16]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "bitmap {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&v| v).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Foreground pixel count inside `bbox` (clamped to the bitmap).
    pub fn count_in(&self, bbox: &BoundingBox) -> u64 {
        let x1 = bbox.x_max().min(self.width) as usize;
        let y1 = bbox.y_max().min(self.height);
        let x0 = (bbox.x_min() as usize).min(x1);
        let w = self.width as usize;
        (bbox.y_min()..y1)
            .map(|y| {
                let row = &self.data[y as usize * w..(y as usize + 1) * w];
                row[x0..x1].iter().filter(|&&v| v).count() as u64
            })
            .sum()
    }

    /// Sub-bitmap covering `bbox`.
    pub fn crop(&self, bbox: &BoundingBox) -> Bitmap {
        Bitmap::from_fn(bbox.width(), bbox.height(), |x, y| {
            self.get(bbox.x_min() + x, bbox.y_min() + y)
        })
    }

    /// Tightest box around the foreground.
    pub fn bbox(&self) -> Result<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if x0 == u32::MAX {
            return Err(Error::EmptyMask);
        }
        BoundingBox::new(x0, y0, x1, y1)
    }

    pub fn union_with(&mut self, other: &Bitmap) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    pub fn to_segment_mask(&self) -> SegmentMask {
        SegmentMask::encode(self)
    }
}

/// A foreground run confined to a single row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub y: u32,
    pub x_start: u32,
    pub x_end: u32,
}

/// Run-length encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u32>,
}

impl SegmentMask {
    pub fn encode(bitmap: &Bitmap) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &v in bitmap.as_slice() {
            if v != current {
                runs.push(len);
                len = 0;
                current = v;
            }
            len += 1;
        }
        runs.push(len);
        Self {
            width: bitmap.width(),
            height: bitmap.height(),
            runs,
        }
    }

    /// An all-background mask.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            runs: vec![width * height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: u64 = self.runs.iter().map(|&r| u64::from(r)).sum();
        let expected = u64::from(self.width) * u64::from(self.height);
        if sum != expected {
            return Err(Error::MalformedRuns { sum, expected });
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<Bitmap> {
        self.validate()?;
        let mut data = Vec::with_capacity(self.width as usize * self.height as usize);
        let mut value = false;
        for &run in &self.runs {
            data.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        Bitmap::from_vec(self.width, self.height, data)
    }

    pub fn area(&self) -> u64 {
        self.runs
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| u64::from(r))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Foreground spans in row-major order, split at row boundaries.
    ///
    /// Assumes the mask is valid; call [`SegmentMask::validate`] first on
    /// untrusted input.
    pub fn spans(&self) -> impl Iterator<Item = Span> + '_ {
        let width = u64::from(self.width.max(1));
        let mut pos = 0u64;
        self.runs.iter().enumerate().flat_map(move |(i, &run)| {
            let start = pos;
            pos += u64::from(run);
            let end = pos;
            let foreground = i % 2 == 1;
            let mut cursor = start;
            std::iter::from_fn(move || {
                if !foreground || cursor >= end {
                    return None;
                }
                let y = cursor / width;
                let row_end = ((y + 1) * width).min(end);
                let span = Span {
                    y: y as u32,
                    x_start: (cursor % width) as u32,
                    x_end: (row_end - y * width) as u32,
                };
                cursor = row_end;
                Some(span)
            })
        })
    }

    /// Tightest box around the foreground, with exclusive maxima.
    pub fn bbox(&self) -> Result<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for s in self.spans() {
            x0 = x0.min(s.x_start);
            x1 = x1.max(s.x_end);
            y0 = y0.min(s.y);
            y1 = y1.max(s.y + 1);
        }
        if x0 == u32::MAX {
            return Err(Error::EmptyMask);
        }
        BoundingBox::new(x0, y0, x1, y1)
    }

    /// Dense view of the mask restricted to `bbox`.
    pub fn crop(&self, bbox: &BoundingBox) -> Bitmap {
        let mut local = Bitmap::new(bbox.width(), bbox.height());
        for s in self.spans() {
            if s.y < bbox.y_min() || s.y >= bbox.y_max() {
                continue;
            }
            let x0 = s.x_start.max(bbox.x_min());
            let x1 = s.x_end.min(bbox.x_max());
            for x in x0..x1 {
                local.set(x - bbox.x_min(), s.y - bbox.y_min(), true);
            }
        }
        local
    }

    /// Foreground pixels inside `bbox`.
    pub fn count_in(&self, bbox: &BoundingBox) -> u64 {
        self.spans()
            .filter(|s| s.y >= bbox.y_min() && s.y < bbox.y_max())
            .map(|s| {
                let x0 = s.x_start.max(bbox.x_min());
                let x1 = s.x_end.min(bbox.x_max());
                u64::from(x1.saturating_sub(x0))
            })
            .sum()
    }

    /// Places a local bitmap at `(x_offset, y_offset)` in a `width × height`
    /// canvas. Pixels falling outside the canvas are dropped.
    pub fn from_local(
        local: &Bitmap,
        x_offset: u32,
        y_offset: u32,
        width: u32,
        height: u32,
    ) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        let mut push = |v: bool, n: u32, runs: &mut Vec<u32>| {
            if n == 0 {
                return;
            }
            if v != current {
                runs.push(len);
                len = 0;
                current = v;
            }
            len += n;
        };
        for y in 0..height {
            let inside_rows = y >= y_offset && y - y_offset < local.height();
            if !inside_rows {
                push(false, width, &mut runs);
                continue;
            }
            let ly = y - y_offset;
            let x_end = (x_offset + local.width()).min(width);
            push(false, x_offset.min(width), &mut runs);
            for x in x_offset..x_end {
                push(local.get(x - x_offset, ly), 1, &mut runs);
            }
            push(false, width - x_end.max(x_offset.min(width)), &mut runs);
        }
        runs.push(len);
        Self {
            width,
            height,
            runs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bitmap(rng: &mut ChaCha8Rng) -> Bitmap {
        let w = rng.random_range(1..20);
        let h = rng.random_range(1..20);
        let density: f64 = rng.random();
        Bitmap::from_fn(w, h, |_, _| rng.random_bool(density))
    }

    #[test]
    fn encodes_constant_masks() {
        let zeros = Bitmap::new(4, 4);
        let m = SegmentMask::encode(&zeros);
        assert_eq!(m.runs, vec![16]);
        assert_eq!(m.decode().unwrap(), zeros);

        let ones = Bitmap::from_fn(4, 4, |_, _| true);
        assert_eq!(SegmentMask::encode(&ones).runs, vec![0, 16]);
    }

    #[test]
    fn rejects_malformed_runs() {
        let m = SegmentMask {
            width: 4,
            height: 4,
            runs: vec![3, 4],
        };
        assert!(matches!(
            m.decode(),
            Err(Error::MalformedRuns {
                sum: 7,
                expected: 16
            })
        ));
    }

    #[test]
    fn two_point_hull() {
        let mut b = Bitmap::new(10, 10);
        b.set(2, 3, true);
        b.set(5, 7, true);
        let bbox = SegmentMask::encode(&b).bbox().unwrap();
        assert_eq!(bbox.to_array(), [2, 3, 6, 8]);
    }

    #[test]
    fn full_and_empty_masks() {
        let full = SegmentMask::encode(&Bitmap::from_fn(7, 5, |_, _| true));
        assert_eq!(full.bbox().unwrap().to_array(), [0, 0, 7, 5]);
        assert!(matches!(
            SegmentMask::empty(3, 3).bbox(),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn rle_roundtrip_on_random_bitmaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let b = random_bitmap(&mut rng);
            let m = SegmentMask::encode(&b);
            m.validate().unwrap();
            assert_eq!(m.decode().unwrap(), b);
            assert_eq!(m.area(), b.count());
        }
    }

    #[test]
    fn bbox_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let b = random_bitmap(&mut rng);
            let m = SegmentMask::encode(&b);
            match b.bbox() {
                Ok(expected) => assert_eq!(m.bbox().unwrap(), expected),
                Err(_) => assert!(m.bbox().is_err()),
            }
        }
    }

    proptest! {
        #[test]
        fn crop_and_from_local_agree(w in 1u32..16, h in 1u32..16, seed in any::<u64>(),
                                     ox in 0u32..20, oy in 0u32..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let local = Bitmap::from_fn(w, h, |_, _| rng.random_bool(0.4));
            let canvas = SegmentMask::from_local(&local, ox, oy, 24, 24);
            canvas.validate().unwrap();
            let dense = canvas.decode().unwrap();
            let expected = Bitmap::from_fn(24, 24, |x, y| {
                x >= ox && y >= oy && x - ox < w && y - oy < h && local.get(x - ox, y - oy)
            });
            prop_assert_eq!(&dense, &expected);
            if let Ok(bbox) = canvas.bbox() {
                prop_assert_eq!(canvas.crop(&bbox), dense.crop(&bbox));
                prop_assert_eq!(canvas.count_in(&bbox), canvas.area());
                prop_assert_eq!(dense.count_in(&bbox), canvas.area());
            }
        }
    }
}
