//! Encoder/projector contract and a small trainable convolutional encoder.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::factory::image::resize_bilinear;
use crate::factory::FaceImage;

/// Features `h = f_e(image)` and the normalized projection
/// `z = f_p(h) / |f_p(h)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

impl Embedding {
    pub fn h_norm(&self) -> f64 {
        self.h.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// An image encoder `f_e` followed by a projector `f_p`.
pub trait EncoderContract: Sync {
    fn feature_dim(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn features(&self, img: &FaceImage) -> Vec<f64>;
    /// Raw (unnormalized) projection of a feature vector.
    fn project(&self, h: &[f64]) -> Vec<f64>;

    fn embed(&self, img: &FaceImage) -> Embedding {
        let h = self.features(img);
        let mut z = self.project(&h);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            z.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding { h, z }
    }
}

/// Layer sizes of [`ToyEncoder`]: a stack of 3x3 convolutions, each
/// followed by instance normalization, ReLU and average pooling, then a
/// linear projector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// Images are resized to `input_size x input_size` before encoding.
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub pools: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: vec![16, 32, 32],
            pools: vec![2, 2, 4],
            embed_dim: 32,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.pools.len() {
            bail!(Model, "encoder needs one pooling factor per conv layer");
        }
        if self.channels.contains(&0) || self.pools.contains(&0) || self.embed_dim < 2 {
            bail!(Model, "encoder sizes must be positive (embed_dim >= 2)");
        }
        let mut side = self.input_size;
        for &p in &self.pools {
            if side < 2 {
                bail!(Model, "feature map too small to normalize");
            }
            if !side.is_multiple_of(p) {
                bail!(
                    Model,
                    "pooling factor {p} does not divide feature side {side}"
                );
            }
            side /= p;
        }
        if side == 0 {
            bail!(Model, "feature map vanished");
        }
        Ok(())
    }

    fn sides(&self) -> Vec<usize> {
        let mut sides = vec![self.input_size];
        for &p in &self.pools {
            let s = *sides.last().unwrap() / p;
            sides.push(s);
        }
        sides
    }

    pub fn feature_dim(&self) -> usize {
        let side = *self.sides().last().unwrap();
        self.channels.last().unwrap() * side * side
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut cin = 3;
        self.channels
            .iter()
            .map(|&cout| {
                let s = (cin, cout);
                cin = cout;
                s
            })
            .collect()
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        let conv: usize = self
            .layer_shapes()
            .iter()
            .map(|&(cin, cout)| cout * cin * 9 + 2 * cout)
            .sum();
        conv + self.embed_dim * self.feature_dim() + self.embed_dim
    }
}

const NORM_EPS: f64 = 1e-5;

/// Offsets of each parameter block within the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    conv: Vec<ConvBlock>,
    proj_w: usize,
    proj_b: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    cin: usize,
    cout: usize,
    /// `cout x (cin * 9)` weights, no bias (normalization removes it).
    w: usize,
    gamma: usize,
    beta: usize,
}

impl ConvBlock {
    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.cout, self.cin * 9), &params[self.w..self.gamma])
            .expect("weight block")
    }
}

impl Layout {
    fn new(spec: &EncoderSpec) -> Self {
        let mut off = 0;
        let conv = spec
            .layer_shapes()
            .into_iter()
            .map(|(cin, cout)| {
                let w = off;
                let gamma = w + cout * cin * 9;
                off = gamma + 2 * cout;
                ConvBlock {
                    cin,
                    cout,
                    w,
                    gamma,
                    beta: gamma + cout,
                }
            })
            .collect();
        let proj_w = off;
        let proj_b = off + spec.embed_dim * spec.feature_dim();
        Self {
            conv,
            proj_w,
            proj_b,
        }
    }
}

/// Small CNN encoder with a one-layer linear projector, trained by
/// explicit backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    spec: EncoderSpec,
    params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    pub h: Vec<f64>,
    /// Raw projector output.
    pub z_raw: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// im2col matrix of the layer input, `(cin * 9) x side^2`.
    cols: Array2<f64>,
    /// Normalized conv output, `cout x side^2`.
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    /// Whether the ReLU passed each value.
    active: Vec<bool>,
}

impl ToyEncoder {
    /// He-initialized encoder; identical seeds give identical parameters.
    pub fn new(spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; spec.param_count()];
        for blk in &layout.conv {
            let std = (2.0 / (blk.cin * 9) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid std");
            for p in &mut params[blk.w..blk.gamma] {
                *p = dist.sample(&mut rng);
            }
            params[blk.gamma..blk.beta].fill(1.0);
        }
        let std = (1.0 / spec.feature_dim() as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        for p in &mut params[layout.proj_w..layout.proj_b] {
            *p = dist.sample(&mut rng);
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: EncoderSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            bail!(
                Model,
                "expected {} parameters, got {}",
                spec.param_count(),
                params.len()
            );
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Maps `[0, 255]` RGB to channel-major `[-1, 1]` at the input size.
    fn preprocess(&self, img: &FaceImage) -> Vec<f64> {
        let n = self.spec.input_size;
        let resized;
        let px = if img.width() == n && img.height() == n {
            img.pixels()
        } else {
            resized = resize_bilinear(img.pixels(), img.width(), img.height(), n, n);
            &resized
        };
        let mut out = vec![0.0; 3 * n * n];
        for (i, p) in px.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n * n + i] = p[c] / 127.5 - 1.0;
            }
        }
        out
    }

    pub fn forward(&self, img: &FaceImage) -> ForwardCache {
        let layout = Layout::new(&self.spec);
        let sides = self.spec.sides();
        let mut x = self.preprocess(img);
        let mut layers = Vec::with_capacity(layout.conv.len());
        for (l, blk) in layout.conv.iter().enumerate() {
            let side = sides[l];
            let cols = im2col(&x, blk.cin, side);
            let y = blk.weights(&self.params).dot(&cols);
            let (xhat, inv_std) = instance_norm(y);
            let (gamma, beta) = (
                &self.params[blk.gamma..blk.beta],
                &self.params[blk.beta..blk.beta + blk.cout],
            );
            let mut active = Vec::with_capacity(xhat.len());
            let mut act = Vec::with_capacity(xhat.len());
            for (c, row) in xhat.rows().into_iter().enumerate() {
                for &v in row {
                    let o = gamma[c] * v + beta[c];
                    active.push(o > 0.0);
                    act.push(o.max(0.0));
                }
            }
            x = avg_pool(&act, blk.cout, side, self.spec.pools[l]);
            layers.push(LayerCache {
                cols,
                xhat,
                inv_std,
                active,
            });
        }
        let h = x;
        let z_raw = self.project(&h);
        ForwardCache { layers, h, z_raw }
    }

    /// Accumulates into `grad` the parameter gradient given `dL/dz_raw`.
    pub fn backward(&self, cache: &ForwardCache, grad_z: &[f64], grad: &mut [f64]) {
        let layout = Layout::new(&self.spec);
        let sides = self.spec.sides();
        let (d, f) = (self.spec.embed_dim, self.spec.feature_dim());
        let w = &self.params[layout.proj_w..layout.proj_b];
        let mut grad_h = vec![0.0; f];
        for o in 0..d {
            let g = grad_z[o];
            if g == 0.0 {
                continue;
            }
            grad[layout.proj_b + o] += g;
            let gw = &mut grad[layout.proj_w + o * f..layout.proj_w + (o + 1) * f];
            for (gwv, &hv) in gw.iter_mut().zip(&cache.h) {
                *gwv += g * hv;
            }
            for (gh, &wv) in grad_h.iter_mut().zip(&w[o * f..(o + 1) * f]) {
                *gh += g * wv;
            }
        }
        let mut upstream = grad_h;
        for l in (0..layout.conv.len()).rev() {
            let blk = layout.conv[l];
            let side = sides[l];
            let lc = &cache.layers[l];
            let plane = side * side;
            let g_act = avg_pool_backward(&upstream, blk.cout, side, self.spec.pools[l]);

            // through ReLU and the affine part of the normalization
            let mut g_xhat = Array2::<f64>::zeros((blk.cout, plane));
            for c in 0..blk.cout {
                let gamma = self.params[blk.gamma + c];
                let (mut dg, mut db) = (0.0, 0.0);
                for p in 0..plane {
                    let i = c * plane + p;
                    if lc.active[i] {
                        let g = g_act[i];
                        dg += g * lc.xhat[[c, p]];
                        db += g;
                        g_xhat[[c, p]] = g * gamma;
                    }
                }
                grad[blk.gamma + c] += dg;
                grad[blk.beta + c] += db;
            }
            // through the standardization
            let n = plane as f64;
            let mut g_y = g_xhat;
            for (c, mut row) in g_y.rows_mut().into_iter().enumerate() {
                let xh = lc.xhat.row(c);
                let mean_g = row.sum() / n;
                let mean_gx = row.dot(&xh) / n;
                for (g, &x) in row.iter_mut().zip(xh) {
                    *g = lc.inv_std[c] * (*g - mean_g - x * mean_gx);
                }
            }
            let wlen = blk.gamma - blk.w;
            let mut g_w =
                ArrayViewMut2::from_shape((blk.cout, blk.cin * 9), &mut grad[blk.w..blk.w + wlen])
                    .expect("weight block");
            general_mat_mul(1.0, &g_y, &lc.cols.t(), 1.0, &mut g_w);
            if l > 0 {
                let g_cols = blk.weights(&self.params).t().dot(&g_y);
                upstream = col2im(&g_cols, blk.cin, side);
            }
        }
    }
}

impl EncoderContract for ToyEncoder {
    fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    fn features(&self, img: &FaceImage) -> Vec<f64> {
        self.forward(img).h
    }

    fn project(&self, h: &[f64]) -> Vec<f64> {
        let layout = Layout::new(&self.spec);
        let f = self.spec.feature_dim();
        let w = &self.params[layout.proj_w..layout.proj_b];
        let b = &self.params[layout.proj_b..layout.proj_b + self.spec.embed_dim];
        (0..self.spec.embed_dim)
            .map(|o| {
                b[o] + w[o * f..(o + 1) * f]
                    .iter()
                    .zip(h)
                    .map(|(a, c)| a * c)
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Patches of a zero-padded `c x side x side` tensor for a 3x3
/// convolution: row `(ci * 3 + ky) * 3 + kx`, column `y * side + x`.
fn im2col(x: &[f64], channels: usize, side: usize) -> Array2<f64> {
    let plane = side * side;
    let mut cols = Array2::<f64>::zeros((channels * 9, plane));
    for ci in 0..channels {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = cols.row_mut((ci * 3 + ky) * 3 + kx);
                let row = row.as_slice_mut().expect("contiguous row");
                let (y0, y1) = (1usize.saturating_sub(ky), (side + 1 - ky).min(side));
                let (x0, x1) = (1usize.saturating_sub(kx), (side + 1 - kx).min(side));
                for y in y0..y1 {
                    let sy = y + ky - 1;
                    row[y * side + x0..y * side + x1]
                        .copy_from_slice(&src[sy * side + x0 + kx - 1..sy * side + x1 + kx - 1]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the tensor.
fn col2im(cols: &Array2<f64>, channels: usize, side: usize) -> Vec<f64> {
    let plane = side * side;
    let mut out = vec![0.0; channels * plane];
    for ci in 0..channels {
        let dst = &mut out[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = cols.row((ci * 3 + ky) * 3 + kx);
                let (y0, y1) = (1usize.saturating_sub(ky), (side + 1 - ky).min(side));
                let (x0, x1) = (1usize.saturating_sub(kx), (side + 1 - kx).min(side));
                for y in y0..y1 {
                    let sy = y + ky - 1;
                    for x in x0..x1 {
                        dst[sy * side + x + kx - 1] += row[y * side + x];
                    }
                }
            }
        }
    }
    out
}

/// Standardizes every row to zero mean and unit variance.
fn instance_norm(mut y: Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let n = y.ncols() as f64;
    let mut inv_std = Vec::with_capacity(y.nrows());
    for mut row in y.rows_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = 1.0 / (var + NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * s);
        inv_std.push(s);
    }
    (y, inv_std)
}

fn avg_pool(x: &[f64], channels: usize, side: usize, p: usize) -> Vec<f64> {
    if p == 1 {
        return x.to_vec();
    }
    let out_side = side / p;
    let scale = 1.0 / (p * p) as f64;
    let mut out = vec![0.0; channels * out_side * out_side];
    for c in 0..channels {
        for y in 0..side {
            let oy = y / p;
            for xx in 0..side {
                out[(c * out_side + oy) * out_side + xx / p] +=
                    x[(c * side + y) * side + xx] * scale;
            }
        }
    }
    out
}

fn avg_pool_backward(g: &[f64], channels: usize, side: usize, p: usize) -> Vec<f64> {
    if p == 1 {
        return g.to_vec();
    }
    let out_side = side / p;
    let scale = 1.0 / (p * p) as f64;
    let mut out = vec![0.0; channels * side * side];
    for c in 0..channels {
        for y in 0..side {
            for xx in 0..side {
                out[(c * side + y) * side + xx] =
                    g[(c * out_side + y / p) * out_side + xx / p] * scale;
            }
        }
    }
    out
}
