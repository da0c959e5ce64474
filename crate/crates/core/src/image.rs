//! RGB images in `[0, 1]` and 8-bit PNG persistence.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Three-channel image with values in `[0, 1]`, stored as a `3×H×W` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Tensor3,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(pixels: Tensor3) -> Result<Self> {
        if pixels.channels() != Self::CHANNELS {
            return Err(Error::Shape(format!(
                "image needs 3 channels, got {}",
                pixels.channels()
            )));
        }
        if pixels.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("image values must lie in [0, 1]".into()));
        }
        Ok(Self { pixels })
    }

    /// Build from an arbitrary tensor, clamping into `[0, 1]` and mapping NaN to 0.
    pub fn from_tensor_clamped(t: &Tensor3) -> Result<Self> {
        let clamped = t.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self::new(clamped)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut t = Tensor3::zeros(3, height, width);
        for (c, v) in rgb.iter().enumerate() {
            t.plane_mut(c).fill(v.clamp(0.0, 1.0));
        }
        Self { pixels: t }
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [
            self.pixels.get(0, y, x),
            self.pixels.get(1, y, x),
            self.pixels.get(2, y, x),
        ]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.iter().enumerate() {
            self.pixels.set(c, y, x, v.clamp(0.0, 1.0));
        }
    }

    pub fn pixel_u8(&self, y: usize, x: usize) -> [u8; 3] {
        self.pixel(y, x).map(to_u8)
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut t = Tensor3::zeros(3, h, w);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                t.set(c, y as usize, x as usize, f64::from(p[c]) / 255.0);
            }
        }
        Self { pixels: t }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width() as u32, self.height() as u32);
        for y in 0..self.height() {
            for x in 0..self.width() {
                out.put_pixel(x as u32, y as u32, Rgb(self.pixel_u8(y, x)));
            }
        }
        out
    }

    /// Quantize to the 8-bit grid, as a PNG round trip would.
    pub fn quantized(&self) -> Self {
        Self {
            pixels: self.pixels.map(|v| f64::from(to_u8(v)) / 255.0),
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::load(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    /// SHA-256 of the 8-bit pixel buffer, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height() as u64).to_le_bytes());
        h.update((self.width() as u64).to_le_bytes());
        h.update(self.to_rgb8().as_raw());
        hex_string(&h.finalize())
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_grid() {
        let mut img = Image::filled(5, 7, [0.2, 0.4, 0.6]).quantized();
        img.set_pixel(2, 3, [1.0, 0.0, 128.0 / 255.0]);
        let back = Image::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.digest(), img.digest());
    }

    #[test]
    fn rejects_out_of_range_values() {
        let t = Tensor3::filled(3, 2, 2, 1.5);
        assert!(Image::new(t.clone()).is_err());
        let clamped = Image::from_tensor_clamped(&t).unwrap();
        assert_eq!(clamped.pixel(0, 0), [1.0; 3]);
    }
}
