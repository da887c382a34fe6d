//! Planar float images, `C x H x W`, row-major within each channel.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        crate::error::check_len("image data", channels * height * width, data.len())?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds an image from `f(c, y, x)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f32 + Sync,
    ) -> Self {
        let mut img = Self::zeros(channels, height, width);
        img.data
            .par_chunks_mut(width.max(1))
            .enumerate()
            .for_each(|(row, out)| {
                let (c, y) = (row / height, row % height);
                for (x, o) in out.iter_mut().enumerate() {
                    *o = f(c, y, x);
                }
            });
        img
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn check_shape(&self, other: &Image, what: &'static str) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Dimension {
                what,
                expected: self.height * self.width,
                got: other.height * other.width,
            });
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Bilinear sample at continuous pixel-index coordinates, clamped to the
    /// border.
    #[inline]
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> f32 {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, xm) };
        let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, ym) };
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let p = self.plane(c);
        let w = self.width;
        let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
        let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Bilinear resize with half-pixel-centered sampling.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Image::from_fn(self.channels, height, width, |c, y, x| {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            self.sample_bilinear(c, src_x, src_y)
        })
    }

    /// Rows `y0..y1`, columns `x0..x1`; pixels outside the source read as 0.
    pub fn crop(&self, y0: i64, y1: i64, x0: i64, x1: i64) -> Image {
        let h = (y1 - y0).max(0) as usize;
        let w = (x1 - x0).max(0) as usize;
        Image::from_fn(self.channels, h, w, |c, y, x| {
            let sy = y0 + y as i64;
            let sx = x0 + x as i64;
            if sy < 0 || sx < 0 || sy >= self.height as i64 || sx >= self.width as i64 {
                0.0
            } else {
                self.get(c, sy as usize, sx as usize)
            }
        })
    }

    /// Writes `patch` with its top-left corner at `(y0, x0)`, skipping pixels
    /// outside this image.
    pub fn paste(&mut self, patch: &Image, y0: i64, x0: i64) {
        for c in 0..self.channels.min(patch.channels) {
            for y in 0..patch.height {
                let ty = y0 + y as i64;
                if ty < 0 || ty >= self.height as i64 {
                    continue;
                }
                for x in 0..patch.width {
                    let tx = x0 + x as i64;
                    if tx < 0 || tx >= self.width as i64 {
                        continue;
                    }
                    self.set(c, ty as usize, tx as usize, patch.get(c, y, x));
                }
            }
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        let n = self.data.len().max(1) as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / n
    }

    /// Writes channels 0..3 (or a single gray channel) as 8-bit PNG, values
    /// clamped to [0, 1].
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self.channels {
            1 => {
                let buf = self.data.iter().map(|&v| to_u8(v)).collect();
                image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer size matches")
                    .save(path)?;
            }
            _ => {
                let mut buf = Vec::with_capacity(self.pixels() * 3);
                for i in 0..self.pixels() {
                    for c in 0..3 {
                        let v = if c < self.channels {
                            self.plane(c)[i]
                        } else {
                            0.0
                        };
                        buf.push(to_u8(v));
                    }
                }
                image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer size matches")
                    .save(path)?;
            }
        }
        Ok(())
    }

    /// Reads a PNG as a 3-channel image in [0, 1].
    pub fn load_png(path: &Path) -> Result<Image> {
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut img = Image::zeros(3, h, w);
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                img.data[c * h * w + i] = px[c] as f32 / 255.0;
            }
        }
        Ok(img)
    }

    /// Rounds through 8-bit storage, matching a PNG round trip.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        out
    }
}
