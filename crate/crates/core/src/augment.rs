//! Random affine noisification of training images.
//!
//! A draw picks a rotation, shift, shear and per-axis zoom plus an optional
//! horizontal flip. The warp is inverse-mapped: each output pixel looks up
//! its source coordinate, takes the nearest pixel, and clamps to the border
//! when the coordinate falls outside the image.

use crate::error::{Error, Result};
use crate::image::{rescale, GrayImage};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Maximum absolute rotation, degrees.
    pub rotation_range: f64,
    /// Maximum horizontal shift as a fraction of width.
    pub width_shift_range: f64,
    /// Maximum vertical shift as a fraction of height.
    pub height_shift_range: f64,
    /// Maximum absolute shear angle, degrees.
    pub shear_range: f64,
    /// Zoom factors are drawn from `[1 - zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    pub horizontal_flip: bool,
    pub rescale: f32,
}

impl AugmentParams {
    /// The noisified-training settings: 40 degree rotation, 0.2 shifts, shear
    /// and zoom, random flips, nearest fill, 1/255 rescale.
    pub fn noisified() -> Self {
        AugmentParams {
            rotation_range: 40.0,
            width_shift_range: 0.2,
            height_shift_range: 0.2,
            shear_range: 0.2,
            zoom_range: 0.2,
            horizontal_flip: true,
            rescale: 1.0 / 255.0,
        }
    }

    /// No geometric change; only the rescale applies.
    pub fn identity() -> Self {
        AugmentParams {
            rotation_range: 0.0,
            width_shift_range: 0.0,
            height_shift_range: 0.0,
            shear_range: 0.0,
            zoom_range: 0.0,
            horizontal_flip: false,
            rescale: 1.0 / 255.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation range", self.rotation_range),
            ("width shift range", self.width_shift_range),
            ("height shift range", self.height_shift_range),
            ("shear range", self.shear_range),
            ("zoom range", self.zoom_range),
        ];
        for (name, v) in ranges {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.rescale > 0.0 && self.rescale.is_finite()) {
            return Err(Error::Config(format!(
                "rescale must be > 0, got {}",
                self.rescale
            )));
        }
        Ok(())
    }
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self::noisified()
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledTransform {
    /// Rotation, degrees.
    pub theta: f64,
    /// Shift in pixels.
    pub tx: f64,
    pub ty: f64,
    /// Shear, degrees.
    pub shear: f64,
    pub zx: f64,
    pub zy: f64,
    pub flip: bool,
}

impl SampledTransform {
    pub const IDENTITY: SampledTransform = SampledTransform {
        theta: 0.0,
        tx: 0.0,
        ty: 0.0,
        shear: 0.0,
        zx: 1.0,
        zy: 1.0,
        flip: false,
    };

    /// `R(theta) * Sh(shear) * Z(zx, zy)` as a row-major 2x2 matrix acting on `(x, y)`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (st, ct) = self.theta.to_radians().sin_cos();
        let (ss, cs) = self.shear.to_radians().sin_cos();
        // R * Sh
        let a = [[ct, -ct * ss - st * cs], [st, -st * ss + ct * cs]];
        [
            [a[0][0] * self.zx, a[0][1] * self.zy],
            [a[1][0] * self.zx, a[1][1] * self.zy],
        ]
    }
}

pub fn sample_transform(
    params: &AugmentParams,
    rng: &mut Rng,
    height: usize,
    width: usize,
) -> SampledTransform {
    let r = params.rotation_range;
    let wx = params.width_shift_range * width as f64;
    let hy = params.height_shift_range * height as f64;
    let s = params.shear_range;
    let z = params.zoom_range;
    SampledTransform {
        theta: rng.uniform(-r, r),
        tx: rng.uniform(-wx, wx),
        ty: rng.uniform(-hy, hy),
        shear: rng.uniform(-s, s),
        zx: rng.uniform(1.0 - z, 1.0 + z),
        zy: rng.uniform(1.0 - z, 1.0 + z),
        flip: params.horizontal_flip && rng.bernoulli(0.5),
    }
}

/// Warps `image` by `t` with nearest-neighbour sampling and edge-replicate fill.
/// The flip, when drawn, is applied last as a column reversal.
pub fn apply_affine(image: &GrayImage, t: &SampledTransform) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let m = t.matrix();
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let mut out = image.clone();
    for row in 0..h {
        let dy = row as f64 - cy;
        for col in 0..w {
            let dx = col as f64 - cx;
            let sx = cx + (m[0][0] * dx + m[0][1] * dy) + t.tx;
            let sy = cy + (m[1][0] * dx + m[1][1] * dy) + t.ty;
            let sx = sx.round().clamp(0.0, max_x) as usize;
            let sy = sy.round().clamp(0.0, max_y) as usize;
            let dst = if t.flip { w - 1 - col } else { col };
            out.set(row, dst, image.get(sy, sx));
        }
    }
    out
}

/// Draw, warp, rescale; returns an `[H, W, 1]` tensor ready for the network.
pub fn augment_sample(image: &GrayImage, params: &AugmentParams, rng: &mut Rng) -> Result<Tensor> {
    let t = sample_transform(params, rng, image.height(), image.width());
    Ok(rescale(&apply_affine(image, &t), params.rescale)?.to_tensor())
}
