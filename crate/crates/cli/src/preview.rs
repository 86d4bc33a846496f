//! Contact sheet of synthesized discrepancies: one row per sample with the
//! input frame, the discrepancy image, its blending mask and the amplified
//! difference to the globally transformed base.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;

use seeable::factory::{
    synthesize_sd_detailed, FaceImage, PerturbationConfig, SubmaskScheme, N_TYPE,
};
use seeable::seed::rng_for;
use seeable::training::{Label, Manifest, Split};

use crate::{CmdResult, Failure};

const DIFF_GAIN: f64 = 8.0;
const GAP: u32 = 2;

pub fn contact_sheet(
    manifest: &Manifest,
    scheme: &SubmaskScheme,
    cfg: &PerturbationConfig,
    n: usize,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let mut rows = manifest.filter(Split::Train, Label::Real);
    if rows.is_empty() {
        rows = manifest
            .rows
            .iter()
            .filter(|r| r.label == Label::Real)
            .collect();
    }
    if rows.is_empty() {
        return Err(Failure::data("manifest has no real frames"));
    }
    let mut tiles: Vec<[RgbImage; 4]> = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(seed, &[i as u64]);
        let row = rows[rng.gen_range(0..rows.len())];
        let frame = manifest.load_image(row)?;
        let loc = rng.gen_range(0..scheme.n_loc());
        let ty = rng.gen_range(0..N_TYPE);
        let s = synthesize_sd_detailed(&frame, loc, ty, &mut rng, scheme, cfg)?;
        log::info!(
            "row {i}: {} class ({loc}, {ty}) {:?}",
            row.video_id,
            s.perturbation
        );
        let mask = RgbImage::from_fn(s.mask.width as u32, s.mask.height as u32, |x, y| {
            let v = (s.mask.get(x as usize, y as usize) * 255.0).round() as u8;
            Rgb([v, v, v])
        });
        tiles.push([
            frame.to_rgb8(),
            s.image.to_rgb8(),
            mask,
            diff(&s.image, &s.base),
        ]);
    }
    let (w, h) = (tiles[0][0].width(), tiles[0][0].height());
    let mut sheet = RgbImage::from_pixel(
        4 * w + 3 * GAP,
        n as u32 * h + (n as u32 - 1) * GAP,
        Rgb([255, 255, 255]),
    );
    for (r, row) in tiles.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let ox = c as u32 * (w + GAP);
            let oy = r as u32 * (h + GAP);
            for (x, y, p) in tile.enumerate_pixels() {
                if x < w && y < h {
                    sheet.put_pixel(ox + x, oy + y, *p);
                }
            }
        }
    }
    sheet
        .save(out)
        .map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}

fn diff(a: &FaceImage, b: &FaceImage) -> RgbImage {
    let px: Vec<u8> = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| ((x - y).abs() * DIFF_GAIN).round().min(255.0) as u8)
        .collect();
    RgbImage::from_raw(a.width() as u32, a.height() as u32, px).expect("buffer size")
}
