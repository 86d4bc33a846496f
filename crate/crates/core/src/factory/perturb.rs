//! Spatial- and frequency-domain perturbation families.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{resize_bilinear, shift_hsv, FaceImage};
use crate::error::{bail, Result};

/// Magnitude limits for every transformation used by the data factory.
///
/// HSV shifts use hue in degrees and saturation/value in `[0, 1]` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub rgb_shift_max: f64,
    pub hsv_shift_max_local: f64,
    pub hsv_shift_max_global: f64,
    pub brightness_contrast_max: f64,
    pub downsample_factors: Vec<usize>,
    pub sharpen_alpha_range: [f64; 2],
    pub jpeg_quality_range: [u8; 2],
    /// Maximum translation as a fraction of (width, height).
    pub translate_frac: [f64; 2],
    pub scale_max: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            rgb_shift_max: 20.0,
            hsv_shift_max_local: 0.3,
            hsv_shift_max_global: 0.1,
            brightness_contrast_max: 0.1,
            downsample_factors: vec![2, 4],
            sharpen_alpha_range: [0.2, 0.5],
            jpeg_quality_range: [30, 70],
            translate_frac: [0.03, 0.015],
            scale_max: 0.05,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.rgb_shift_max,
            self.hsv_shift_max_local,
            self.hsv_shift_max_global,
            self.brightness_contrast_max,
            self.translate_frac[0],
            self.translate_frac[1],
            self.scale_max,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            bail!(Domain, "perturbation magnitudes must be nonnegative");
        }
        if self.downsample_factors.is_empty() || self.downsample_factors.contains(&0) {
            bail!(
                Domain,
                "downsample factors must be a nonempty set of positive integers"
            );
        }
        let [a0, a1] = self.sharpen_alpha_range;
        if !(0.0 <= a0 && a0 <= a1 && a1 <= 1.0) {
            bail!(Domain, "sharpen alpha range must be ordered within [0, 1]");
        }
        let [q0, q1] = self.jpeg_quality_range;
        if !(1 <= q0 && q0 <= q1 && q1 <= 100) {
            bail!(Domain, "jpeg quality range must be ordered within [1, 100]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialOp {
    RgbShift([f64; 3]),
    HsvShift { hue: f64, sat: f64, val: f64 },
    BrightnessContrast { brightness: f64, contrast: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrequencyOp {
    Resample { factor: usize },
    Sharpen { alpha: f64 },
    Jpeg { quality: u8 },
}

fn symmetric(rng: &mut impl Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.gen_range(-max..=max)
    } else {
        0.0
    }
}

impl SpatialOp {
    /// Picks one family member uniformly, then its magnitudes.
    pub fn sample(rng: &mut impl Rng, cfg: &PerturbationConfig) -> Self {
        match rng.gen_range(0..3) {
            0 => {
                let m = cfg.rgb_shift_max;
                Self::RgbShift([symmetric(rng, m), symmetric(rng, m), symmetric(rng, m)])
            }
            1 => {
                let m = cfg.hsv_shift_max_local;
                Self::HsvShift {
                    hue: symmetric(rng, m),
                    sat: symmetric(rng, m),
                    val: symmetric(rng, m),
                }
            }
            _ => {
                let m = cfg.brightness_contrast_max;
                Self::BrightnessContrast {
                    brightness: symmetric(rng, m),
                    contrast: symmetric(rng, m),
                }
            }
        }
    }

    pub fn apply(&self, img: &FaceImage) -> FaceImage {
        let mut px = img.pixels().to_vec();
        match *self {
            Self::RgbShift(shift) => {
                for p in px.chunks_exact_mut(3) {
                    for c in 0..3 {
                        p[c] = (p[c] + shift[c]).clamp(0.0, 255.0);
                    }
                }
            }
            Self::HsvShift { hue, sat, val } => shift_hsv(&mut px, hue, sat, val),
            Self::BrightnessContrast {
                brightness,
                contrast,
            } => {
                for v in &mut px {
                    *v = (*v * (1.0 + contrast) + 255.0 * brightness).clamp(0.0, 255.0);
                }
            }
        }
        img.with_pixels(px)
    }

    /// Upper bound on the per-sample intensity change this op can cause.
    pub fn max_abs_change(&self) -> f64 {
        match *self {
            Self::RgbShift(s) => s.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            // value moves the largest channel, saturation the gap to it,
            // hue rotates inside the chroma (at most chroma * |dh| / 60)
            Self::HsvShift { hue, sat, val } => 255.0 * (val.abs() + sat.abs() + hue.abs() / 60.0),
            Self::BrightnessContrast {
                brightness,
                contrast,
            } => 255.0 * (brightness.abs() + contrast.abs()),
        }
    }
}

impl FrequencyOp {
    pub fn sample(rng: &mut impl Rng, cfg: &PerturbationConfig) -> Self {
        match rng.gen_range(0..3) {
            0 => {
                let i = rng.gen_range(0..cfg.downsample_factors.len());
                Self::Resample {
                    factor: cfg.downsample_factors[i],
                }
            }
            1 => {
                let [a0, a1] = cfg.sharpen_alpha_range;
                Self::Sharpen {
                    alpha: if a1 > a0 { rng.gen_range(a0..=a1) } else { a0 },
                }
            }
            _ => {
                let [q0, q1] = cfg.jpeg_quality_range;
                Self::Jpeg {
                    quality: rng.gen_range(q0..=q1),
                }
            }
        }
    }

    pub fn apply(&self, img: &FaceImage) -> Result<FaceImage> {
        let (w, h) = (img.width(), img.height());
        Ok(match *self {
            Self::Resample { factor } => {
                let (sw, sh) = ((w / factor).max(1), (h / factor).max(1));
                let small = resize_bilinear(img.pixels(), w, h, sw, sh);
                img.with_pixels(resize_bilinear(&small, sw, sh, w, h))
            }
            Self::Sharpen { alpha } => img.with_pixels(sharpen_blend(img, alpha)),
            Self::Jpeg { quality } => img.jpeg_round_trip(quality)?,
        })
    }
}

/// `(1 - alpha) * x + alpha * sharpen(x)` with the 5-point Laplacian
/// sharpening kernel and replicated borders.
pub fn sharpen_blend(img: &FaceImage, alpha: f64) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let src = img.pixels();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            for c in 0..3 {
                let at = |xx: usize, yy: usize| src[(yy * w + xx) * 3 + c];
                let center = at(x, y);
                let sharp = 5.0 * center - at(left, y) - at(right, y) - at(x, up) - at(x, down);
                let sharp = sharp.clamp(0.0, 255.0);
                out[(y * w + x) * 3 + c] =
                    ((1.0 - alpha) * center + alpha * sharp).clamp(0.0, 255.0);
            }
        }
    }
    out
}

/// Applies one randomly chosen spatial-domain perturbation.
pub fn perturb_spatial(img: &FaceImage, rng: &mut impl Rng, cfg: &PerturbationConfig) -> FaceImage {
    SpatialOp::sample(rng, cfg).apply(img)
}

/// Applies one randomly chosen frequency-domain perturbation.
pub fn perturb_frequency(
    img: &FaceImage,
    rng: &mut impl Rng,
    cfg: &PerturbationConfig,
) -> Result<FaceImage> {
    FrequencyOp::sample(rng, cfg).apply(img)
}
