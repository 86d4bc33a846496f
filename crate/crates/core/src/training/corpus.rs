//! Procedural face-like corpus for desk-scale experiments.
//!
//! Each video has an identity (face shape, skin tone, fine skin texture,
//! background) and its frames jitter pose and lighting slightly. Fakes are
//! face-swap-like composites: a donor identity is rendered at reduced
//! resolution onto the target's geometry, color-mismatched, and blended
//! into the target frame through a feathered landmark hull.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Label, Manifest, ManifestRow, Split};
use crate::error::{bail, Result};
use crate::factory::image::{gaussian_blur_plane, resize_bilinear};
use crate::factory::mask::convex_hull;
use crate::factory::{FaceImage, Landmarks, N_LANDMARKS};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    /// Real training videos.
    pub n_videos: usize,
    /// Held-out real videos (test split).
    pub n_test_real: usize,
    /// Fake videos (test split).
    pub n_test_fake: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_videos: 100,
            n_test_real: 20,
            n_test_fake: 20,
            frames_per_video: 4,
            image_size: 64,
            seed: 0,
        }
    }
}

/// 68-point template in face coordinates: x in `[-1, 1]` across the jaw,
/// y from the brows (about -0.55) to the chin (1.05).
pub fn landmark_template() -> Vec<[f64; 2]> {
    let mut t = Vec::with_capacity(N_LANDMARKS);
    // jaw, left temple round the chin to the right temple
    for i in 0..17 {
        let a = PI * i as f64 / 16.0;
        t.push([-0.95 * a.cos(), 1.05 * a.sin()]);
    }
    // brows
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let s = i as f64 / 4.0;
            let x = if side < 0.0 {
                -0.7 + 0.55 * s
            } else {
                0.15 + 0.55 * s
            };
            t.push([x, -0.5 - 0.06 * (PI * s).sin()]);
        }
    }
    // nose bridge and base
    for i in 0..4 {
        t.push([0.0, -0.3 + 0.15 * i as f64]);
    }
    for i in 0..5 {
        let s = i as f64 / 4.0;
        t.push([-0.18 + 0.36 * s, 0.25 + 0.04 * (PI * s).sin()]);
    }
    // eyes, six points each from the outer corner
    for cx in [-0.38, 0.38] {
        for i in 0..6 {
            let a = PI * i as f64 / 3.0;
            t.push([cx - 0.17 * a.cos(), -0.32 - 0.075 * a.sin()]);
        }
    }
    // outer then inner lip contour
    for i in 0..12 {
        let a = PI * i as f64 / 6.0;
        t.push([-0.34 * a.cos(), 0.45 - 0.12 * a.sin()]);
    }
    for i in 0..8 {
        let a = PI * i as f64 / 4.0;
        t.push([-0.24 * a.cos(), 0.45 - 0.04 * a.sin()]);
    }
    debug_assert_eq!(t.len(), N_LANDMARKS);
    t
}

/// Appearance of one synthetic person plus their background.
#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub half_width: f64,
    pub half_height: f64,
    pub skin: [f64; 3],
    pub lips: [f64; 3],
    pub brow: [f64; 3],
    pub iris: [f64; 3],
    pub eye_scale: f64,
    pub texture_amp: f64,
    pub texture_seed: u64,
    pub bg_top: [f64; 3],
    pub bg_bottom: [f64; 3],
}

impl Identity {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let tone: f64 = rng.gen_range(0.0..1.0);
        let skin = [
            120.0 + 110.0 * tone + rng.gen_range(-10.0..10.0),
            80.0 + 100.0 * tone + rng.gen_range(-10.0..10.0),
            60.0 + 90.0 * tone + rng.gen_range(-10.0..10.0),
        ];
        let mut color = |lo: f64, hi: f64| {
            [
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
            ]
        };
        let bg_top = color(20.0, 230.0);
        let bg_bottom = color(20.0, 230.0);
        let brow = color(20.0, 80.0);
        let iris = color(20.0, 120.0);
        Self {
            half_width: rng.gen_range(0.38..0.44),
            half_height: rng.gen_range(0.40..0.44),
            skin,
            lips: [
                rng.gen_range(150.0..210.0),
                rng.gen_range(50.0..100.0),
                rng.gen_range(60.0..110.0),
            ],
            brow,
            iris,
            eye_scale: rng.gen_range(0.85..1.15),
            texture_amp: rng.gen_range(16.0..26.0),
            texture_seed: rng.gen(),
            bg_top,
            bg_bottom,
        }
    }
}

/// Per-frame pose and lighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Face center as a fraction of the image size.
    pub center: [f64; 2],
    pub scale: f64,
    pub light: f64,
    pub noise_seed: u64,
}

impl Pose {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            center: [
                0.5 + rng.gen_range(-0.02..0.02),
                0.46 + rng.gen_range(-0.02..0.02),
            ],
            scale: rng.gen_range(0.95..1.05),
            light: rng.gen_range(0.92..1.08),
            noise_seed: rng.gen(),
        }
    }
}

fn hash01(seed: u64, x: i64, y: i64) -> f64 {
    let h = derive_seed(seed, &[x as u64, y as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinear value noise in `[-1, 1]` on an integer lattice.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as i64, y0 as i64);
    let v00 = hash01(seed, xi, yi);
    let v10 = hash01(seed, xi + 1, yi);
    let v01 = hash01(seed, xi, yi + 1);
    let v11 = hash01(seed, xi + 1, yi + 1);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    2.0 * (top + (bottom - top) * fy) - 1.0
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

fn face_geometry(id: &Identity, pose: &Pose, size: usize) -> ([f64; 2], [f64; 2]) {
    let n = size as f64;
    let center = [pose.center[0] * n, pose.center[1] * n];
    let half = [
        id.half_width * pose.scale * n,
        id.half_height * pose.scale * n,
    ];
    (center, half)
}

/// Landmarks of `id` under `pose` in pixel coordinates.
pub fn landmarks_for(id: &Identity, pose: &Pose, size: usize) -> Landmarks {
    let (center, half) = face_geometry(id, pose, size);
    landmark_template()
        .into_iter()
        .map(|[u, v]| [center[0] + u * half[0], center[1] + v * half[1]])
        .collect()
}

fn in_ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> f64 {
    ((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2)
}

/// Color of the face (or `None` for background) at face coordinates.
fn face_color(id: &Identity, u: f64, v: f64, texture_scale: f64) -> Option<[f64; 3]> {
    if in_ellipse(u, v, 0.0, 0.0, 1.0, 1.1) > 1.0 {
        return None;
    }
    let shade = 1.0 - 0.18 * (u * u + 0.6 * v * v);
    let tex = value_noise(id.texture_seed, u * texture_scale, v * texture_scale)
        + 0.5
            * value_noise(
                id.texture_seed ^ 1,
                u * texture_scale * 0.5,
                v * texture_scale * 0.5,
            );
    let mut c = id.skin.map(|s| s * shade + id.texture_amp * tex);
    // nose shading
    if u.abs() < 0.07 && (-0.35..0.25).contains(&v) {
        c = c.map(|s| s * 0.88);
    }
    // brows
    for cx in [-0.42, 0.42] {
        if in_ellipse(u, v, cx, -0.5, 0.3, 0.06) <= 1.0 {
            c = id.brow;
        }
    }
    // eyes
    for cx in [-0.38, 0.38] {
        let e = in_ellipse(u, v, cx, -0.32, 0.17 * id.eye_scale, 0.075 * id.eye_scale);
        if e <= 1.0 {
            c = [235.0, 235.0, 230.0];
            if in_ellipse(u, v, cx, -0.32, 0.06 * id.eye_scale, 0.06 * id.eye_scale) <= 1.0 {
                c = id.iris;
            }
        }
    }
    // mouth
    let m = in_ellipse(u, v, 0.0, 0.45, 0.34, 0.12);
    if m <= 1.0 {
        c = if in_ellipse(u, v, 0.0, 0.45, 0.24, 0.04) <= 1.0 {
            id.lips.map(|s| s * 0.4)
        } else {
            id.lips
        };
    }
    Some(c)
}

/// Renders one frame at `size x size`.
pub fn render_frame(id: &Identity, pose: &Pose, size: usize) -> Result<FaceImage> {
    let (center, half) = face_geometry(id, pose, size);
    // one texture lattice cell per pixel keeps plenty of fine detail
    let texture_scale = half[0];
    let n = size as f64;
    let mut px = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 - center[0]) / half[0];
            let v = (y as f64 - center[1]) / half[1];
            let base = face_color(id, u, v, texture_scale).unwrap_or_else(|| {
                let t = y as f64 / n;
                let g = mix(id.bg_top, id.bg_bottom, t);
                let tex = 6.0 * value_noise(id.texture_seed ^ 2, x as f64 / 4.0, y as f64 / 4.0);
                g.map(|c| c + tex)
            });
            let noise = 2.0 * value_noise(pose.noise_seed, x as f64, y as f64);
            for c in base {
                px.push((c * pose.light + noise).clamp(0.0, 255.0));
            }
        }
    }
    let img = FaceImage::new(size, size, px, landmarks_for(id, pose, size))?;
    Ok(img.quantized())
}

/// Face-swap-like composite: `donor` rendered at half resolution with the
/// target's pose, color shifted by `tint`, blended into `target_frame`.
pub fn composite_fake(
    target_frame: &FaceImage,
    donor: &Identity,
    target: &Identity,
    pose: &Pose,
    tint: [f64; 3],
) -> Result<FaceImage> {
    let size = target_frame.width();
    let small = size / 2;
    // donor appearance on the target's face shape
    let mut swapped = donor.clone();
    swapped.half_width = target.half_width;
    swapped.half_height = target.half_height;
    swapped.bg_top = target.bg_top;
    swapped.bg_bottom = target.bg_bottom;
    let low = render_frame(&swapped, pose, small)?;
    let up = resize_bilinear(low.pixels(), small, small, size, size);

    let hull = convex_hull(&target_frame.landmarks);
    let mut mask = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            if point_in_convex(&hull, [x as f64, y as f64]) {
                mask[y * size + x] = 1.0;
            }
        }
    }
    let mask = gaussian_blur_plane(&mask, size, size, 1.5);
    let mut px = target_frame.pixels().to_vec();
    for (i, &m) in mask.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for c in 0..3 {
            let s = (up[i * 3 + c] + tint[c]).clamp(0.0, 255.0);
            px[i * 3 + c] = m * s + (1.0 - m) * px[i * 3 + c];
        }
    }
    Ok(target_frame.with_pixels(px).quantized())
}

fn point_in_convex(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    let n = hull.len();
    (0..n).all(|i| {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// One generated video held in memory.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub id: String,
    pub split: Split,
    pub label: Label,
    pub frames: Vec<FaceImage>,
}

fn real_video(spec: &CorpusSpec, stream: u64, index: usize, split: Split) -> Result<SynthVideo> {
    let mut rng = rng_for(spec.seed, &[stream, index as u64]);
    let id = Identity::sample(&mut rng);
    let frames = (0..spec.frames_per_video)
        .map(|_| render_frame(&id, &Pose::sample(&mut rng), spec.image_size))
        .collect::<Result<Vec<_>>>()?;
    let prefix = if split == Split::Train {
        "train"
    } else {
        "test_real"
    };
    Ok(SynthVideo {
        id: format!("{prefix}_{index:04}"),
        split,
        label: Label::Real,
        frames,
    })
}

fn fake_video(spec: &CorpusSpec, index: usize) -> Result<SynthVideo> {
    let mut rng = rng_for(spec.seed, &[3, index as u64]);
    let target = Identity::sample(&mut rng);
    let donor = Identity::sample(&mut rng);
    let tint = [0, 1, 2].map(|_| rng.gen_range(-15.0..15.0));
    let frames = (0..spec.frames_per_video)
        .map(|_| {
            let pose = Pose::sample(&mut rng);
            let frame = render_frame(&target, &pose, spec.image_size)?;
            composite_fake(&frame, &donor, &target, &pose, tint)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthVideo {
        id: format!("test_fake_{index:04}"),
        split: Split::Test,
        label: Label::Fake,
        frames,
    })
}

/// Generates the corpus in memory: training reals, then held-out reals,
/// then fakes.
pub fn synth_videos(spec: &CorpusSpec) -> Result<Vec<SynthVideo>> {
    if spec.n_videos == 0 || spec.frames_per_video == 0 {
        bail!(
            Domain,
            "corpus needs at least one video and one frame per video"
        );
    }
    if spec.image_size < 16 {
        bail!(Domain, "image size {} too small", spec.image_size);
    }
    let mut out = Vec::new();
    for i in 0..spec.n_videos {
        out.push(real_video(spec, 1, i, Split::Train)?);
    }
    for i in 0..spec.n_test_real {
        out.push(real_video(spec, 2, i, Split::Test)?);
    }
    for i in 0..spec.n_test_fake {
        out.push(fake_video(spec, i)?);
    }
    Ok(out)
}

/// Writes PNG frames under `out_dir/frames/` and `out_dir/manifest.csv`.
pub fn synth_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let frames_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frames_dir)?;
    let mut rows = Vec::new();
    for v in synth_videos(spec)? {
        for (f, img) in v.frames.iter().enumerate() {
            let rel = PathBuf::from("frames").join(format!("{}_{f:03}.png", v.id));
            img.save_png(out_dir.join(&rel))?;
            rows.push(ManifestRow {
                path: rel,
                video_id: v.id.clone(),
                split: v.split,
                label: v.label,
                landmarks: img.landmarks.clone(),
            });
        }
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        rows,
    };
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
