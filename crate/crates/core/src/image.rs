use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major single-channel image. Intensities are nominally `[0, 255]`
/// until rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidShape(format!(
                "image extents must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidShape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// `[H, W, 1]` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, 1], self.pixels.clone())
            .expect("image extents are positive")
    }
}

/// Multiplies every intensity by `factor`.
pub fn rescale(image: &GrayImage, factor: f32) -> Result<GrayImage> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Config(format!(
            "rescale factor must be > 0, got {factor}"
        )));
    }
    let mut out = image.clone();
    out.pixels.iter_mut().for_each(|v| *v *= factor);
    Ok(out)
}
