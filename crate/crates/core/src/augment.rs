//! Random view augmentation: square crop + bilinear resize, horizontal flip,
//! brightness/contrast jitter, optional grayscale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the largest square, `[lo, hi]`.
    pub crop_scale: [f64; 2],
    pub flip_prob: f64,
    pub jitter_strength: f64,
    pub grayscale_prob: f64,
    pub output_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale: [0.4, 1.0],
            flip_prob: 0.5,
            jitter_strength: 0.4,
            grayscale_prob: 0.2,
            output_size: 64,
        }
    }
}

impl AugmentConfig {
    /// Leaves images unchanged apart from the float conversion.
    pub fn identity(output_size: usize) -> Self {
        Self {
            crop_scale: [1.0, 1.0],
            flip_prob: 0.0,
            jitter_strength: 0.0,
            grayscale_prob: 0.0,
            output_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.crop_scale;
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("augment: crop_scale must satisfy 0 < lo <= hi <= 1".into()));
        }
        if !prob(self.flip_prob) || !prob(self.jitter_strength) || !prob(self.grayscale_prob) {
            return Err(Error::Config("augment: probabilities and jitter must lie in [0, 1]".into()));
        }
        if self.output_size == 0 {
            return Err(Error::Config("augment: output_size must be positive".into()));
        }
        Ok(())
    }
}

/// Planar float image (channel, row, column), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn from_image(img: &Image) -> Self {
        let (w, h) = (img.width, img.height);
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in img.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c] as f32 / 255.0;
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }
}

/// One draw of every random choice the pipeline makes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewParams {
    pub crop_x: usize,
    pub crop_y: usize,
    pub crop_side: usize,
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub grayscale: bool,
}

/// Draw view parameters. The number of random draws is fixed so the
/// stream stays aligned whatever the outcomes.
pub fn sample_view<R: Rng + ?Sized>(
    config: &AugmentConfig,
    width: usize,
    height: usize,
    rng: &mut R,
) -> ViewParams {
    let [lo, hi] = config.crop_scale;
    let frac = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let full = width.min(height);
    let side = ((frac.sqrt() * full as f64).round() as usize).clamp(1, full);
    let crop_x = rng.random_range(0..=width - side);
    let crop_y = rng.random_range(0..=height - side);
    let flip = rng.random::<f64>() < config.flip_prob;
    let s = config.jitter_strength;
    let brightness = 1.0 + s * (2.0 * rng.random::<f64>() - 1.0);
    let contrast = 1.0 + s * (2.0 * rng.random::<f64>() - 1.0);
    let grayscale = rng.random::<f64>() < config.grayscale_prob;
    ViewParams {
        crop_x,
        crop_y,
        crop_side: side,
        flip,
        brightness: brightness as f32,
        contrast: contrast as f32,
        grayscale,
    }
}

/// Run the pipeline with fixed parameters.
pub fn apply_view(image: &Image, view: &ViewParams, output_size: usize) -> FloatImage {
    let src = FloatImage::from_image(image);
    let (w, h) = (src.width, src.height);
    let n = output_size;
    let plane = n * n;
    let mut out = vec![0.0f32; 3 * plane];

    let scale = view.crop_side as f64 / n as f64;
    let lo_x = view.crop_x as f64;
    let lo_y = view.crop_y as f64;
    let hi = (view.crop_side - 1) as f64;
    let coords = |d: usize, lo: f64| {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, hi) + lo;
        let i0 = s.floor() as usize;
        let frac = (s - i0 as f64) as f32;
        let i1 = (i0 + 1).min(lo as usize + view.crop_side - 1);
        (i0, i1, frac)
    };
    let xs: Vec<_> = (0..n).map(|d| coords(d, lo_x)).collect();
    let ys: Vec<_> = (0..n).map(|d| coords(d, lo_y)).collect();
    for c in 0..3 {
        let sp = &src.data[c * w * h..(c + 1) * w * h];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = sp[y0 * w + x0] * (1.0 - fx) + sp[y0 * w + x1] * fx;
                let bot = sp[y1 * w + x0] * (1.0 - fx) + sp[y1 * w + x1] * fx;
                let dst_x = if view.flip { n - 1 - ox } else { ox };
                out[c * plane + oy * n + dst_x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }

    if view.brightness != 1.0 || view.contrast != 1.0 {
        for v in &mut out {
            *v *= view.brightness;
        }
        let mean = out.iter().map(|v| *v as f64).sum::<f64>() as f32 / out.len() as f32;
        for v in &mut out {
            *v = view.contrast * (*v - mean) + mean;
        }
    }
    if view.grayscale {
        for i in 0..plane {
            let l = 0.299 * out[i] + 0.587 * out[plane + i] + 0.114 * out[2 * plane + i];
            out[i] = l;
            out[plane + i] = l;
            out[2 * plane + i] = l;
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    FloatImage {
        width: n,
        height: n,
        data: out,
    }
}

pub fn augment<R: Rng + ?Sized>(image: &Image, config: &AugmentConfig, rng: &mut R) -> FloatImage {
    let view = sample_view(config, image.width, image.height, rng);
    apply_view(image, &view, config.output_size)
}

/// Independent stream for one augmentation draw, keyed by run seed, step
/// and slot within the step.
pub fn view_rng(seed: u64, step: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11e_0000_0000);
    rng.set_stream(step.wrapping_mul(1 << 20).wrapping_add(slot));
    rng
}
