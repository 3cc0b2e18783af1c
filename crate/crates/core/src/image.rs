use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// 8-bit interleaved RGB or RGBA pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if channels != 3 && channels != 4 {
            return Err(Error::DimensionMismatch(format!(
                "images have 3 or 4 channels, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{channels} image needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled_rgb(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn has_alpha(&self) -> bool {
        self.channels == 4
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    #[inline]
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Alpha value, 255 for RGB images.
    #[inline]
    pub fn alpha(&self, x: u32, y: u32) -> u8 {
        if self.channels == 4 {
            self.data[self.offset(x, y) + 3]
        } else {
            255
        }
    }

    #[inline]
    pub fn set_rgb(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
        if self.channels == 4 {
            self.data[o + 3] = 255;
        }
    }

    #[inline]
    pub fn set_rgba(&mut self, x: u32, y: u32, rgba: [u8; 4]) {
        let o = self.offset(x, y);
        if self.channels == 4 {
            self.data[o..o + 4].copy_from_slice(&rgba);
        } else {
            self.data[o..o + 3].copy_from_slice(&rgba[..3]);
        }
    }

    /// Iterator over RGB triples in row-major order.
    pub fn rgb_pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data
            .chunks_exact(self.channels as usize)
            .map(|p| [p[0], p[1], p[2]])
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Result<ImageBuffer> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(Error::DimensionMismatch(format!(
                "crop {:?} exceeds {}x{} image",
                bbox.to_array(),
                self.width,
                self.height
            )));
        }
        let c = self.channels as usize;
        let row_bytes = bbox.width() as usize * c;
        let mut data = Vec::with_capacity(row_bytes * bbox.height() as usize);
        for y in bbox.y_min()..bbox.y_max() {
            let o = self.offset(bbox.x_min(), y);
            data.extend_from_slice(&self.data[o..o + row_bytes]);
        }
        ImageBuffer::new(bbox.width(), bbox.height(), self.channels, data)
    }

    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.rgb_pixels().flatten().collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn load(path: &Path) -> Result<ImageBuffer> {
        let img = image::open(path).map_err(|e| Error::ImageLoad {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;

        if img.color().has_alpha() {
            let rgba = img.to_rgba8();
            ImageBuffer::new(rgba.width(), rgba.height(), 4, rgba.into_raw())
        } else {
            let rgb = img.to_rgb8();
            ImageBuffer::new(rgb.width(), rgb.height(), 3, rgb.into_raw())
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = if self.channels == 4 {
            image::ExtendedColorType::Rgba8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width,
            self.height,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::ImageSave {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
