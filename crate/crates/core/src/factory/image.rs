//! Floating-point face images with attached landmarks.

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageReader, RgbImage};

use crate::error::{bail, Result};

pub const N_LANDMARKS: usize = 68;

pub type Landmarks = Vec<[f64; 2]>;

/// An RGB image in working precision (`[0, 255]`, row-major, interleaved)
/// plus 68 `(x, y)` landmarks in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    pub landmarks: Landmarks,
}

impl FaceImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        landmarks: Landmarks,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            bail!(Domain, "empty image");
        }
        if pixels.len() != width * height * 3 {
            bail!(
                Domain,
                "expected {} samples for {width}x{height}, got {}",
                width * height * 3,
                pixels.len()
            );
        }
        if landmarks.len() != N_LANDMARKS {
            bail!(
                Domain,
                "expected {N_LANDMARKS} landmarks, got {}",
                landmarks.len()
            );
        }
        let img = Self {
            width,
            height,
            pixels,
            landmarks,
        };
        if !img.landmarks_in_bounds() {
            bail!(Domain, "landmark outside the image");
        }
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, value: f64, landmarks: Landmarks) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * 3], landmarks)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    /// Same landmarks, new pixel buffer of the same size.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), self.pixels.len());
        Self {
            width: self.width,
            height: self.height,
            pixels,
            landmarks: self.landmarks.clone(),
        }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn same_shape(&self, other: &FaceImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn landmarks_in_bounds(&self) -> bool {
        landmarks_in_bounds(&self.landmarks, self.width, self.height)
    }

    pub fn clamp(&mut self) {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 255.0);
        }
    }

    /// Rounds to 8-bit intensities (still stored as `f64`).
    pub fn quantized(&self) -> Self {
        self.with_pixels(self.pixels.iter().map(|&v| quantize(v) as f64).collect())
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let buf = self.pixels.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer size")
    }

    pub fn from_rgb8(img: &RgbImage, landmarks: Landmarks) -> Result<Self> {
        let pixels = img.as_raw().iter().map(|&v| v as f64).collect();
        Self::new(
            img.width() as usize,
            img.height() as usize,
            pixels,
            landmarks,
        )
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, landmarks: Landmarks) -> Result<Self> {
        let img = ImageReader::open(path)?
            .with_guessed_format()?
            .decode()?
            .to_rgb8();
        Self::from_rgb8(&img, landmarks)
    }

    /// Quantizes, encodes as JPEG at `quality`, and decodes again.
    pub fn jpeg_round_trip(&self, quality: u8) -> Result<Self> {
        let rgb = self.to_rgb8();
        let mut bytes = Vec::new();
        JpegEncoder::new_with_quality(&mut bytes, quality).encode_image(&rgb)?;
        let decoded = ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Jpeg)
            .decode()?
            .to_rgb8();
        Ok(self.with_pixels(decoded.as_raw().iter().map(|&v| v as f64).collect()))
    }
}

pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn landmarks_in_bounds(landmarks: &[[f64; 2]], width: usize, height: usize) -> bool {
    landmarks.iter().all(|&[x, y]| {
        x.is_finite()
            && y.is_finite()
            && x >= 0.0
            && y >= 0.0
            && x <= (width - 1) as f64
            && y <= (height - 1) as f64
    })
}

/// Bilinear sample of channel `c` at continuous pixel-center coordinates,
/// replicating edge pixels outside the image.
pub fn sample_bilinear(img: &FaceImage, x: f64, y: f64, c: usize) -> f64 {
    let maxx = (img.width - 1) as f64;
    let maxy = (img.height - 1) as f64;
    let x = x.clamp(0.0, maxx);
    let y = y.clamp(0.0, maxy);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
    let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize of an interleaved RGB buffer (pixel-center aligned).
pub fn resize_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dw * dh * 3];
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let at = |xx: usize, yy: usize| src[(yy * sw + xx) * 3 + c];
                let top = at(x0, y0) * (1.0 - wx) + at(x1, y0) * wx;
                let bottom = at(x0, y1) * (1.0 - wx) + at(x1, y1) * wx;
                out[(y * dw + x) * 3 + c] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian taps truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur of a single-channel plane with zero padding.
/// Values outside `ceil(3 sigma)` of the nonzero input stay exactly zero.
pub fn gaussian_blur_plane(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    let v = plane[y * width + xx as usize];
                    if v != 0.0 {
                        acc += w * v;
                    }
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let yy = y as isize + t as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    let v = tmp[yy as usize * width + x];
                    if v != 0.0 {
                        acc += w * v;
                    }
                }
            }
            out[y * width + x] = acc.clamp(0.0, 1.0);
        }
    }
    out
}

/// RGB in `[0, 1]` to HSV with hue in degrees `[0, 360)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Shifts hue (degrees), saturation and value (both in `[0, 1]` units) of
/// every pixel; saturation and value are clamped to `[0, 1]`.
pub fn shift_hsv(pixels: &mut [f64], dh: f64, ds: f64, dv: f64) {
    if dh == 0.0 && ds == 0.0 && dv == 0.0 {
        return;
    }
    for px in pixels.chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
        let (r, g, b) = hsv_to_rgb(h + dh, (s + ds).clamp(0.0, 1.0), (v + dv).clamp(0.0, 1.0));
        px[0] = (r * 255.0).clamp(0.0, 255.0);
        px[1] = (g * 255.0).clamp(0.0, 255.0);
        px[2] = (b * 255.0).clamp(0.0, 255.0);
    }
}
