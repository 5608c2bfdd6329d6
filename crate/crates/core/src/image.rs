//! 8-bit raster images and PNG/JPEG I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, interleaved 8-bit image with one (gray) or three (RGB) channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "expected {} pixel values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// All-zero image.
    pub fn black(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0; height * width * channels])
    }

    /// Builds an image by evaluating `f(row, col, channel)` for every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Same geometry, fresh zeroed buffer.
    pub(crate) fn zeroed_like(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: vec![0; self.pixels.len()],
        }
    }

    #[inline]
    pub(crate) fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        let idx = (y * self.width + x) * self.channels + c;
        self.pixels[idx] = v;
    }

    /// Decodes a PNG or JPEG file. Grayscale sources keep one channel, everything
    /// else is converted to RGB (alpha is dropped).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(decoded))
    }

    pub fn from_dynamic(img: image::DynamicImage) -> Self {
        use image::ColorType;
        match img.color() {
            ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
                let gray = img.to_luma8();
                let (w, h) = gray.dimensions();
                Self {
                    height: h as usize,
                    width: w as usize,
                    channels: 1,
                    pixels: gray.into_raw(),
                }
            }
            _ => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self {
                    height: h as usize,
                    width: w as usize,
                    channels: 3,
                    pixels: rgb.into_raw(),
                }
            }
        }
    }

    pub fn to_dynamic(&self) -> image::DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => image::DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, self.pixels.clone()).expect("buffer size checked"),
            ),
            _ => image::DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, self.pixels.clone()).expect("buffer size checked"),
            ),
        }
    }

    /// Encodes as PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_dynamic()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Codec {
                path: path.to_path_buf(),
                source,
            })
    }
}
