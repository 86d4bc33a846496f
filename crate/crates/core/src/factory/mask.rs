//! Submask schemes: partitions of the landmark-defined face region into
//! patches, one per discrepancy location.

use serde::{Deserialize, Serialize};

use super::image::gaussian_blur_plane;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    /// One mask covering the landmark convex hull.
    ConvexHull,
    /// Rectangular cells whose boundaries sit on landmark-coordinate
    /// quantiles, so cell sizes follow the landmark density.
    Meshgrid,
    /// Equal `rows x cols` partition of the landmark bounding box.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubmaskScheme {
    pub kind: SchemeKind,
    pub rows: usize,
    pub cols: usize,
    pub feather_sigma: f64,
}

impl SubmaskScheme {
    pub fn grid(rows: usize, cols: usize, feather_sigma: f64) -> Self {
        Self {
            kind: SchemeKind::Grid,
            rows,
            cols,
            feather_sigma,
        }
    }

    pub fn meshgrid(rows: usize, cols: usize, feather_sigma: f64) -> Self {
        Self {
            kind: SchemeKind::Meshgrid,
            rows,
            cols,
            feather_sigma,
        }
    }

    pub fn convex_hull(feather_sigma: f64) -> Self {
        Self {
            kind: SchemeKind::ConvexHull,
            rows: 1,
            cols: 1,
            feather_sigma,
        }
    }

    pub fn n_loc(&self) -> usize {
        match self.kind {
            SchemeKind::ConvexHull => 1,
            _ => self.rows * self.cols,
        }
    }

    fn check(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            bail!(Domain, "scheme needs at least one row and column");
        }
        if !(self.feather_sigma >= 0.0) {
            bail!(Domain, "feather sigma must be nonnegative");
        }
        Ok(())
    }
}

impl Default for SubmaskScheme {
    fn default() -> Self {
        Self::grid(4, 4, 3.0)
    }
}

/// Per-pixel blending weights in `[0, 1]`, row-major `width x height`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl BlendMask {
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Pixels with a nonzero weight.
    pub fn support(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > 0.0).collect()
    }

    pub fn area(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn feathered(&self, sigma: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: gaussian_blur_plane(&self.values, self.width, self.height, sigma),
        }
    }
}

/// Integer pixel box `[x0, x1) x [y0, y1)` covering all landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl FaceBox {
    pub fn from_landmarks(landmarks: &[[f64; 2]], width: usize, height: usize) -> Result<Self> {
        if landmarks.is_empty() {
            bail!(Domain, "no landmarks");
        }
        let (mut minx, mut miny) = (f64::INFINITY, f64::INFINITY);
        let (mut maxx, mut maxy) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &[x, y] in landmarks {
            minx = minx.min(x);
            miny = miny.min(y);
            maxx = maxx.max(x);
            maxy = maxy.max(y);
        }
        if !(maxx > minx && maxy > miny) {
            bail!(Domain, "degenerate landmark box");
        }
        let x0 = minx.floor().max(0.0) as usize;
        let y0 = miny.floor().max(0.0) as usize;
        let x1 = ((maxx.ceil() as usize) + 1).min(width);
        let y1 = ((maxy.ceil() as usize) + 1).min(height);
        if x1 <= x0 || y1 <= y0 {
            bail!(Domain, "degenerate landmark box");
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Pixel boundaries splitting `[lo, hi)` into `n` nearly equal spans.
fn even_cuts(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    let span = hi - lo;
    (0..=n).map(|i| lo + i * span / n).collect()
}

/// Cuts placed on quantiles of landmark coordinates, forced strictly
/// increasing inside `[lo, hi)`.
fn quantile_cuts(mut coords: Vec<f64>, lo: usize, hi: usize, n: usize) -> Vec<usize> {
    coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut cuts = vec![lo];
    for i in 1..n {
        let q = coords[i * coords.len() / n].round() as usize;
        let prev = *cuts.last().unwrap();
        let max_here = hi - (n - i);
        cuts.push(q.clamp(prev + 1, max_here));
    }
    cuts.push(hi);
    cuts
}

fn cell_cuts(
    scheme: &SubmaskScheme,
    landmarks: &[[f64; 2]],
    fb: &FaceBox,
) -> (Vec<usize>, Vec<usize>) {
    match scheme.kind {
        SchemeKind::Meshgrid => (
            quantile_cuts(
                landmarks.iter().map(|p| p[0]).collect(),
                fb.x0,
                fb.x1,
                scheme.cols,
            ),
            quantile_cuts(
                landmarks.iter().map(|p| p[1]).collect(),
                fb.y0,
                fb.y1,
                scheme.rows,
            ),
        ),
        _ => (
            even_cuts(fb.x0, fb.x1, scheme.cols),
            even_cuts(fb.y0, fb.y1, scheme.rows),
        ),
    }
}

/// Convex hull (counter-clockwise in image coordinates) by monotone chain.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_hull(hull: &[[f64; 2]], x: f64, y: f64) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) >= -1e-9
    })
}

fn hull_plane(landmarks: &[[f64; 2]], width: usize, height: usize) -> Result<Vec<f64>> {
    let hull = convex_hull(landmarks);
    let mut plane = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            if inside_hull(&hull, x as f64, y as f64) {
                plane[y * width + x] = 1.0;
            }
        }
    }
    if plane.iter().all(|&v| v == 0.0) {
        bail!(Domain, "landmark hull has zero area");
    }
    Ok(plane)
}

/// Unfeathered `{0, 1}` mask of patch `y_loc`.
pub fn binary_submask(
    scheme: &SubmaskScheme,
    landmarks: &[[f64; 2]],
    width: usize,
    height: usize,
    y_loc: usize,
) -> Result<BlendMask> {
    scheme.check()?;
    if y_loc >= scheme.n_loc() {
        bail!(
            Domain,
            "location {y_loc} out of range for {} patches",
            scheme.n_loc()
        );
    }
    let values = match scheme.kind {
        SchemeKind::ConvexHull => hull_plane(landmarks, width, height)?,
        SchemeKind::Grid | SchemeKind::Meshgrid => {
            let fb = FaceBox::from_landmarks(landmarks, width, height)?;
            if fb.width() < scheme.cols || fb.height() < scheme.rows {
                bail!(
                    Domain,
                    "face box too small for a {}x{} grid",
                    scheme.rows,
                    scheme.cols
                );
            }
            let (xs, ys) = cell_cuts(scheme, landmarks, &fb);
            let (r, c) = (y_loc / scheme.cols, y_loc % scheme.cols);
            let mut plane = vec![0.0; width * height];
            for y in ys[r]..ys[r + 1] {
                for x in xs[c]..xs[c + 1] {
                    plane[y * width + x] = 1.0;
                }
            }
            plane
        }
    };
    Ok(BlendMask {
        width,
        height,
        values,
    })
}

/// Mask of patch `y_loc`, Gaussian-feathered by the scheme's sigma.
pub fn make_submask(
    scheme: &SubmaskScheme,
    landmarks: &[[f64; 2]],
    width: usize,
    height: usize,
    y_loc: usize,
) -> Result<BlendMask> {
    let mask = binary_submask(scheme, landmarks, width, height, y_loc)?;
    Ok(mask.feathered(scheme.feather_sigma))
}

/// Pixels of the face region a scheme is meant to cover.
pub fn face_region(
    scheme: &SubmaskScheme,
    landmarks: &[[f64; 2]],
    width: usize,
    height: usize,
) -> Result<Vec<bool>> {
    Ok(match scheme.kind {
        SchemeKind::ConvexHull => hull_plane(landmarks, width, height)?
            .into_iter()
            .map(|v| v > 0.0)
            .collect(),
        _ => {
            let fb = FaceBox::from_landmarks(landmarks, width, height)?;
            (0..width * height)
                .map(|i| fb.contains(i % width, i / width))
                .collect()
        }
    })
}

/// Coverage, overlap and balance properties of a submask scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeReport {
    /// Union of patches covers at least 99.9% of the face region.
    pub full_coverage: bool,
    /// No pixel belongs to two patches.
    pub no_overlap: bool,
    /// Largest/smallest patch area ratio is at most 1.10.
    pub balanced: bool,
    pub coverage: f64,
    pub area_ratio: f64,
}

pub const MIN_COVERAGE: f64 = 0.999;
pub const MAX_AREA_RATIO: f64 = 1.10;

pub fn validate_scheme(
    scheme: &SubmaskScheme,
    landmarks: &[[f64; 2]],
    width: usize,
    height: usize,
) -> Result<SchemeReport> {
    let region = face_region(scheme, landmarks, width, height)?;
    let mut hits = vec![0u32; width * height];
    let mut areas = Vec::with_capacity(scheme.n_loc());
    for loc in 0..scheme.n_loc() {
        let m = binary_submask(scheme, landmarks, width, height, loc)?;
        let mut area = 0usize;
        for (h, &v) in hits.iter_mut().zip(&m.values) {
            if v > 0.0 {
                *h += 1;
                area += 1;
            }
        }
        areas.push(area);
    }
    let region_px = region.iter().filter(|&&r| r).count();
    let covered = region
        .iter()
        .zip(&hits)
        .filter(|(&r, &h)| r && h > 0)
        .count();
    let coverage = covered as f64 / region_px as f64;
    let max = *areas.iter().max().unwrap();
    let min = *areas.iter().min().unwrap();
    let area_ratio = if min == 0 {
        f64::INFINITY
    } else {
        max as f64 / min as f64
    };
    Ok(SchemeReport {
        full_coverage: coverage >= MIN_COVERAGE,
        no_overlap: hits.iter().all(|&h| h <= 1),
        balanced: area_ratio <= MAX_AREA_RATIO,
        coverage,
        area_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_landmarks() -> Vec<[f64; 2]> {
        // 68 points spread on the border of [40, 200] x [30, 230]
        (0..68)
            .map(|i| {
                let t = i as f64 / 67.0;
                match i % 4 {
                    0 => [40.0 + 160.0 * t, 30.0],
                    1 => [40.0 + 160.0 * t, 230.0],
                    2 => [40.0, 30.0 + 200.0 * t],
                    _ => [200.0, 30.0 + 200.0 * t],
                }
            })
            .collect()
    }

    #[test]
    fn first_grid_cell_is_top_left() {
        let lm = box_landmarks();
        let s = SubmaskScheme::grid(4, 4, 0.0);
        let m = make_submask(&s, &lm, 256, 256, 0).unwrap();
        let fb = FaceBox::from_landmarks(&lm, 256, 256).unwrap();
        assert_eq!((fb.x0, fb.y0, fb.x1, fb.y1), (40, 30, 201, 231));
        assert!(m.is_binary());
        assert_eq!(m.get(40, 30), 1.0);
        assert_eq!(m.get(39, 30), 0.0);
        assert_eq!(m.get(40 + 161 / 4 - 1, 30 + 201 / 4 - 1), 1.0);
        assert_eq!(m.get(40 + 161 / 4, 30), 0.0);
    }

    #[test]
    fn grid_cells_tile_the_box() {
        let lm = box_landmarks();
        let s = SubmaskScheme::grid(4, 4, 3.0);
        let fb = FaceBox::from_landmarks(&lm, 256, 256).unwrap();
        let mut acc = vec![0.0; 256 * 256];
        for loc in 0..16 {
            let m = binary_submask(&s, &lm, 256, 256, loc).unwrap();
            for (a, v) in acc.iter_mut().zip(&m.values) {
                *a += v;
            }
        }
        for y in 0..256 {
            for x in 0..256 {
                let want = if fb.contains(x, y) { 1.0 } else { 0.0 };
                assert_eq!(acc[y * 256 + x], want);
            }
        }
    }

    #[test]
    fn feathered_masks_stay_in_unit_range() {
        let lm = box_landmarks();
        let s = SubmaskScheme::grid(4, 4, 3.0);
        let m = make_submask(&s, &lm, 256, 256, 5).unwrap();
        assert!(m.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(!m.is_binary());
    }

    #[test]
    fn hull_mask_has_area() {
        let lm = box_landmarks();
        let m = make_submask(&SubmaskScheme::convex_hull(0.0), &lm, 256, 256, 0).unwrap();
        assert!(m.area() > 0);
        assert!(make_submask(&SubmaskScheme::convex_hull(0.0), &lm, 256, 256, 1).is_err());
    }

    #[test]
    fn degenerate_landmarks_are_rejected() {
        let lm = vec![[10.0, 10.0]; 68];
        let s = SubmaskScheme::grid(4, 4, 0.0);
        assert!(make_submask(&s, &lm, 64, 64, 0).is_err());
        assert!(make_submask(&SubmaskScheme::convex_hull(0.0), &lm, 64, 64, 0).is_err());
    }

    #[test]
    fn box_grid_scheme_properties() {
        let lm = box_landmarks();
        let r = validate_scheme(&SubmaskScheme::grid(4, 4, 3.0), &lm, 256, 256).unwrap();
        assert!(r.full_coverage && r.no_overlap && r.balanced, "{r:?}");
        let r = validate_scheme(&SubmaskScheme::convex_hull(3.0), &lm, 256, 256).unwrap();
        assert!(r.full_coverage && r.no_overlap && r.balanced);
    }
}
