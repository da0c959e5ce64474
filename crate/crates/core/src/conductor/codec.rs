use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{LatentImage, Tensor3};

/// Maps images to latents and back.
pub trait LatentCodec: Send + Sync {
    /// Spatial downscale factor between image and latent.
    fn downscale(&self) -> usize;

    fn latent_channels(&self) -> usize;

    fn encode(&self, image: &Image) -> Result<LatentImage>;

    fn decode(&self, latent: &LatentImage) -> Result<Image>;
}

/// Latent space is pixel space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn downscale(&self) -> usize {
        1
    }

    fn latent_channels(&self) -> usize {
        Image::CHANNELS
    }

    fn encode(&self, image: &Image) -> Result<LatentImage> {
        Ok(image.tensor().clone())
    }

    fn decode(&self, latent: &LatentImage) -> Result<Image> {
        if latent.channels() != Image::CHANNELS {
            return Err(Error::Shape(format!(
                "identity codec decodes 3-channel latents, got {}",
                latent.channels()
            )));
        }
        Image::from_tensor_clamped(latent)
    }
}

/// Lossy codec: box-average `factor×factor` blocks on encode, nearest
/// upsampling on decode. Exercises the mask downsampling path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolingCodec {
    pub factor: usize,
}

impl LatentCodec for PoolingCodec {
    fn downscale(&self) -> usize {
        self.factor
    }

    fn latent_channels(&self) -> usize {
        Image::CHANNELS
    }

    fn encode(&self, image: &Image) -> Result<LatentImage> {
        let f = self.factor;
        let (h, w) = image.dims();
        if f == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!(
                "image {h}x{w} not divisible by pooling factor {f}"
            )));
        }
        let (lh, lw) = (h / f, w / f);
        let mut out = Tensor3::zeros(3, lh, lw);
        let norm = (f * f) as f64;
        for c in 0..3 {
            for y in 0..lh {
                for x in 0..lw {
                    let mut acc = 0.0;
                    for dy in 0..f {
                        for dx in 0..f {
                            acc += image.tensor().get(c, y * f + dy, x * f + dx);
                        }
                    }
                    out.set(c, y, x, acc / norm);
                }
            }
        }
        Ok(out)
    }

    fn decode(&self, latent: &LatentImage) -> Result<Image> {
        let f = self.factor;
        let (c, h, w) = latent.shape();
        let mut out = Tensor3::zeros(c, h * f, w * f);
        for ch in 0..c {
            for y in 0..h * f {
                for x in 0..w * f {
                    out.set(ch, y, x, latent.get(ch, y / f, x / f));
                }
            }
        }
        Image::from_tensor_clamped(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_round_trip_is_exact() {
        let mut img = Image::filled(4, 5, [0.1, 0.5, 0.9]);
        img.set_pixel(1, 2, [0.33, 0.0, 1.0]);
        let c = IdentityCodec;
        assert_eq!(c.decode(&c.encode(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn pooling_codec_shapes() {
        let img = Image::filled(8, 4, [0.5; 3]);
        let c = PoolingCodec { factor: 2 };
        let z = c.encode(&img).unwrap();
        assert_eq!(z.shape(), (3, 4, 2));
        assert_eq!(c.decode(&z).unwrap(), img);
        assert!(c.encode(&Image::filled(5, 4, [0.0; 3])).is_err());
    }
}
