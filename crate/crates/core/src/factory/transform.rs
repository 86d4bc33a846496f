//! Global transformations applied before a discrepancy is synthesized.
//! They change the whole image (and its landmarks) consistently, so the
//! localized discrepancy stays the only local inconsistency.

use rand::Rng;

use super::image::{landmarks_in_bounds, sample_bilinear, shift_hsv, FaceImage};
use super::perturb::PerturbationConfig;

const MAX_DRAWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalTransform {
    pub dx: f64,
    pub dy: f64,
    /// Zoom factor `>= 1`; the enlarged image is center-cropped.
    pub scale: f64,
    pub hsv: [f64; 3],
}

impl GlobalTransform {
    pub const IDENTITY: Self = Self {
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
        hsv: [0.0; 3],
    };

    pub fn sample(
        rng: &mut impl Rng,
        cfg: &PerturbationConfig,
        width: usize,
        height: usize,
    ) -> Self {
        let sym = |rng: &mut _, m: f64| {
            if m > 0.0 {
                Rng::gen_range(rng, -m..=m)
            } else {
                0.0
            }
        };
        let dx = sym(rng, cfg.translate_frac[0] * width as f64);
        let dy = sym(rng, cfg.translate_frac[1] * height as f64);
        let scale = if cfg.scale_max > 0.0 {
            rng.gen_range(1.0..=1.0 + cfg.scale_max)
        } else {
            1.0
        };
        let m = cfg.hsv_shift_max_global;
        let hsv = [sym(rng, m), sym(rng, m), sym(rng, m)];
        Self { dx, dy, scale, hsv }
    }

    fn center(width: usize, height: usize) -> (f64, f64) {
        ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    pub fn map_point(&self, p: [f64; 2], width: usize, height: usize) -> [f64; 2] {
        let (cx, cy) = Self::center(width, height);
        [
            self.scale * (p[0] - cx) + cx + self.dx,
            self.scale * (p[1] - cy) + cy + self.dy,
        ]
    }

    pub fn apply(&self, img: &FaceImage) -> FaceImage {
        let (w, h) = (img.width(), img.height());
        let landmarks = img
            .landmarks
            .iter()
            .map(|&p| self.map_point(p, w, h))
            .collect();
        let mut px = if self.dx == 0.0 && self.dy == 0.0 && self.scale == 1.0 {
            img.pixels().to_vec()
        } else {
            let (cx, cy) = Self::center(w, h);
            let mut px = vec![0.0; w * h * 3];
            for y in 0..h {
                let sy = (y as f64 - cy - self.dy) / self.scale + cy;
                for x in 0..w {
                    let sx = (x as f64 - cx - self.dx) / self.scale + cx;
                    for c in 0..3 {
                        px[(y * w + x) * 3 + c] = sample_bilinear(img, sx, sy, c);
                    }
                }
            }
            px
        };
        shift_hsv(&mut px, self.hsv[0], self.hsv[1], self.hsv[2]);
        let mut out = img.with_pixels(px);
        out.landmarks = landmarks;
        out
    }

    pub fn keeps_landmarks_in(&self, img: &FaceImage) -> bool {
        let (w, h) = (img.width(), img.height());
        let mapped: Vec<_> = img
            .landmarks
            .iter()
            .map(|&p| self.map_point(p, w, h))
            .collect();
        landmarks_in_bounds(&mapped, w, h)
    }
}

/// Draws a global transform that keeps every landmark inside the frame
/// (redrawing up to a fixed budget, then falling back to the identity).
pub fn sample_invariant_transform(
    img: &FaceImage,
    rng: &mut impl Rng,
    cfg: &PerturbationConfig,
) -> GlobalTransform {
    for _ in 0..MAX_DRAWS {
        let t = GlobalTransform::sample(rng, cfg, img.width(), img.height());
        if t.keeps_landmarks_in(img) {
            return t;
        }
    }
    GlobalTransform::IDENTITY
}

pub fn apply_invariant_transforms(
    img: &FaceImage,
    rng: &mut impl Rng,
    cfg: &PerturbationConfig,
) -> FaceImage {
    sample_invariant_transform(img, rng, cfg).apply(img)
}
