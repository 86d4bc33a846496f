//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance suite.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use seeable::factory::{FaceImage, Landmarks};
use seeable::seed::rng_for;
use seeable::training::corpus::{landmarks_for, render_frame, Identity, Pose};

/// Rank-free AUC: every (fake, real) pair scores 1 if the fake ranks higher,
/// 1/2 on a tie.
pub fn brute_force_auc(scores: &[(f64, bool)]) -> f64 {
    let (mut half_units, mut pairs) = (0u64, 0u64);
    for &(f, fake) in scores {
        if !fake {
            continue;
        }
        for &(r, real_fake) in scores {
            if real_fake {
                continue;
            }
            pairs += 1;
            half_units += if f > r {
                2
            } else if f == r {
                1
            } else {
                0
            };
        }
    }
    half_units as f64 / (2 * pairs) as f64
}

/// Manhattan distance between cells `a` and `b` of a `cols`-wide grid.
pub fn manhattan(a: usize, b: usize, cols: usize) -> u32 {
    let (ra, ca) = ((a / cols) as i64, (a % cols) as i64);
    let (rb, cb) = ((b / cols) as i64, (b % cols) as i64);
    ((ra - rb).abs() + (ca - cb).abs()) as u32
}

/// Expected guidance weight computed from grid coordinates.
pub fn guidance_oracle(pred: usize, truth: usize, rows: usize, cols: usize, n_type: usize) -> f64 {
    let _ = rows;
    let (p, t) = (pred / n_type, truth / n_type);
    let mirror = (p / cols) * cols + (cols - 1 - p % cols);
    if p == t {
        0.25
    } else if mirror == t {
        0.5
    } else {
        manhattan(p, t, cols) as f64
    }
}

/// Points on the unit sphere that minimize the Riesz energy
/// `sum_{i<j} 1 / |p_i - p_j|`, found by projected gradient descent. For
/// `count <= dim + 1` the minimizer is a regular simplex.
pub fn riesz_minimizer(dim: usize, count: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_for(seed, &[]);
    let mut p = Array2::from_shape_fn((count, dim), |_| rng.sample::<f64, _>(StandardNormal));
    normalize_rows(&mut p);
    let mut step = 0.05;
    let mut energy = riesz_energy(&p);
    for _ in 0..20_000 {
        let mut g = Array2::<f64>::zeros((count, dim));
        for i in 0..count {
            for j in 0..count {
                if i == j {
                    continue;
                }
                let diff = &p.row(i) - &p.row(j);
                let d2 = diff.dot(&diff);
                let scale = -1.0 / (d2 * d2.sqrt());
                g.row_mut(i).scaled_add(scale, &diff);
            }
        }
        let candidate = {
            let mut c = &p - &(step * &g);
            normalize_rows(&mut c);
            c
        };
        let e = riesz_energy(&candidate);
        if e < energy {
            p = candidate;
            energy = e;
            step *= 1.2;
        } else {
            step *= 0.5;
            if step < 1e-16 {
                break;
            }
        }
    }
    p
}

fn riesz_energy(p: &Array2<f64>) -> f64 {
    let mut e = 0.0;
    for i in 0..p.nrows() {
        for j in i + 1..p.nrows() {
            let diff = &p.row(i) - &p.row(j);
            e += 1.0 / diff.dot(&diff).sqrt();
        }
    }
    e
}

pub fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / n);
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-random orthogonal matrix from a Gram-Schmidt pass over Gaussian
/// columns.
pub fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut q = random_matrix(dim, dim, rng);
    for i in 0..dim {
        for j in 0..i {
            let d = q.row(i).dot(&q.row(j));
            let rj = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-d, &rj);
        }
        let n = q.row(i).dot(&q.row(i)).sqrt();
        q.row_mut(i).mapv_inplace(|v| v / n);
    }
    q
}

/// Supervised contrastive loss written out term by term.
pub fn supcon_oracle(z: &Array2<f64>, labels: &[usize], tau: f64) -> f64 {
    let n = z.nrows();
    let u = unit_rows(z);
    let mut total = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let denom: f64 = (0..n)
            .filter(|&a| a != i)
            .map(|a| (cos(&u, i, a) / tau).exp())
            .sum();
        let mut li = 0.0;
        for &p in &positives {
            li -= ((cos(&u, i, p) / tau).exp() / denom).ln();
        }
        total += li / positives.len() as f64;
    }
    total
}

/// Prototype-anchored NT-Xent: the positive is the class prototype, the
/// negatives are the batch members of other classes and the other
/// prototypes; each anchor is divided by its positive count (or 1).
pub fn proto_term_oracle(
    z: &Array2<f64>,
    labels: &[usize],
    protos: &Array2<f64>,
    offset: usize,
    tau: f64,
) -> f64 {
    let n = z.nrows();
    let u = unit_rows(z);
    let mut total = 0.0;
    for i in 0..n {
        let target = labels[i] + offset;
        let sim_p = |k: usize| u.row(i).dot(&protos.row(k));
        let pos = (sim_p(target) / tau).exp();
        let mut denom = pos;
        for a in (0..n).filter(|&a| labels[a] != labels[i]) {
            denom += (cos(&u, i, a) / tau).exp();
        }
        for k in (0..protos.nrows()).filter(|&k| k != target) {
            denom += (sim_p(k) / tau).exp();
        }
        let n_pos = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .count()
            .max(1);
        total += -(pos / denom).ln() / n_pos as f64;
    }
    total
}

fn unit_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut u = z.clone();
    normalize_rows(&mut u);
    u
}

fn cos(u: &Array2<f64>, i: usize, j: usize) -> f64 {
    u.row(i).dot(&u.row(j))
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Synthetic face rendered from the stream `(seed, i)`.
pub fn face(size: usize, seed: u64, i: u64) -> FaceImage {
    let mut rng = rng_for(seed, &[i]);
    let id = Identity::sample(&mut rng);
    render_frame(&id, &Pose::sample(&mut rng), size).unwrap()
}

pub fn face_landmarks(size: usize, seed: u64, i: u64) -> Landmarks {
    let mut rng = rng_for(seed, &[i]);
    let id = Identity::sample(&mut rng);
    landmarks_for(&id, &Pose::sample(&mut rng), size)
}

/// Random face-sized image with landmarks from the corpus template.
pub fn noise_face(size: usize, rng: &mut impl Rng) -> FaceImage {
    let px = (0..size * size * 3)
        .map(|_| rng.gen_range(0.0..255.0))
        .collect();
    FaceImage::new(size, size, px, face_landmarks(size, rng.gen(), 0)).unwrap()
}
