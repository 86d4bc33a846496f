//! Fixed, evenly-distributed prototypes on the unit hypersphere.
//!
//! `K` prototypes are the vertices of a regular simplex spanning a
//! `(K-1)`-dimensional subspace of `R^D`, so every pair has the same inner
//! product `-1/(K-1)`. They serve as regression targets and as the
//! classifier used for prototype matching.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView1};

use crate::error::{bail, Error, Result};

const MAGIC: &[u8; 8] = b"SBLPROTO";
const FORMAT_VERSION: u32 = 1;

// Similarities closer than this count as tied.
const TIE_EPS: f64 = 1e-12;

/// `count` unit vectors in `R^dim` with constant pairwise inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    vectors: Array2<f64>,
}

impl PrototypeSet {
    /// Wraps an existing matrix after checking the simplex invariants.
    pub fn from_matrix(vectors: Array2<f64>) -> Result<Self> {
        let (count, dim) = vectors.dim();
        check_shape(dim, count)?;
        let set = Self { vectors };
        let dev = set.gram_deviation();
        if dev > 1e-9 {
            bail!(
                Dimension,
                "matrix is not an evenly-distributed prototype set (Gram deviation {dev:e})"
            );
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn count(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn get(&self, k: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(k)
    }

    /// Target inner product between two distinct prototypes.
    pub fn target_dot(&self) -> f64 {
        -1.0 / (self.count() as f64 - 1.0)
    }

    /// Largest absolute deviation of the Gram matrix from its ideal form
    /// (1 on the diagonal, `-1/(K-1)` elsewhere).
    pub fn gram_deviation(&self) -> f64 {
        let gram = self.vectors.dot(&self.vectors.t());
        let off = self.target_dot();
        let mut worst = 0.0f64;
        for ((i, j), &g) in gram.indexed_iter() {
            let want = if i == j { 1.0 } else { off };
            worst = worst.max((g - want).abs());
        }
        worst
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Row-major little-endian matrix with a `(dim, count)` header.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(self.dim() as u64)?;
        w.write_u64::<LittleEndian>(self.count() as u64)?;
        for &v in self.vectors.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            bail!(Format, "not a prototype file");
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            bail!(Format, "unsupported prototype file version {version}");
        }
        let dim = r.read_u64::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        check_shape(dim, count)?;
        let mut data = vec![0.0; dim * count];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        let vectors =
            Array2::from_shape_vec((count, dim), data).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_matrix(vectors)
    }
}

fn check_shape(dim: usize, count: usize) -> Result<()> {
    if dim == 0 {
        bail!(Dimension, "embedding dimension must be positive");
    }
    if count < 2 || count > dim + 1 {
        bail!(
            Dimension,
            "need 2 <= count <= dim + 1 prototypes, got count={count}, dim={dim}"
        );
    }
    Ok(())
}

/// Builds `count` regular-simplex vertices embedded in `R^dim`.
///
/// The analytic construction is run in `n = count - 1` dimensions, where the
/// `n + 1` vertices are `1/sqrt(n) * 1` and
/// `-(1 + sqrt(n+1)) / n^(3/2) * 1 + sqrt((n+1)/n) * e_{i-1}`; the result is
/// zero-padded up to `dim` coordinates and each row renormalized.
pub fn make_simplex_prototypes(dim: usize, count: usize) -> Result<PrototypeSet> {
    check_shape(dim, count)?;
    let n = count - 1;
    let nf = n as f64;
    let first = 1.0 / nf.sqrt();
    let shared = -(1.0 + (nf + 1.0).sqrt()) / nf.powf(1.5);
    let spike = ((nf + 1.0) / nf).sqrt();

    let mut vectors = Array2::<f64>::zeros((count, dim));
    for c in 0..n {
        vectors[[0, c]] = first;
    }
    for i in 1..count {
        for c in 0..n {
            vectors[[i, c]] = shared;
        }
        vectors[[i, i - 1]] += spike;
    }
    for mut row in vectors.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    Ok(PrototypeSet { vectors })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two nonzero vectors of equal length.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        bail!(Domain, "length mismatch: {} vs {}", a.len(), b.len());
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        bail!(Domain, "cosine similarity of a zero vector");
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine distance `1 - sim(a, b)`, in `[0, 2]`.
pub fn d_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Index of the most similar prototype; ties go to the smallest index.
pub fn match_prototype(z: &[f64], protos: &PrototypeSet) -> Result<usize> {
    match_prototype_in(z, protos, 0..protos.count())
}

/// Prototype matching restricted to a contiguous index range.
pub fn match_prototype_in(
    z: &[f64],
    protos: &PrototypeSet,
    range: std::ops::Range<usize>,
) -> Result<usize> {
    if z.len() != protos.dim() {
        bail!(
            Domain,
            "embedding has {} dims, prototypes have {}",
            z.len(),
            protos.dim()
        );
    }
    if range.is_empty() || range.end > protos.count() {
        bail!(Domain, "invalid prototype range {range:?}");
    }
    let zn = norm(z);
    if zn == 0.0 {
        bail!(Domain, "cannot match a zero embedding");
    }
    let mut best = range.start;
    let mut best_sim = f64::NEG_INFINITY;
    for k in range {
        let p = protos.get(k);
        let sim = z.iter().zip(p.iter()).map(|(a, b)| a * b).sum::<f64>() / zn;
        if sim > best_sim + TIE_EPS {
            best = k;
            best_sim = sim;
        }
    }
    Ok(best)
}
