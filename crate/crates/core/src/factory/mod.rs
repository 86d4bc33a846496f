//! The soft-discrepancy data factory: locally perturbed copies of real
//! faces, each labelled with the (location, type) of its perturbation.

pub mod image;
pub mod label;
pub mod mask;
pub mod perturb;
pub mod transform;

use rand::Rng;

pub use self::image::{FaceImage, Landmarks, N_LANDMARKS};
pub use self::label::{
    decode_label, encode_label, ClassLayout, DiscrepancyLabel, DiscrepancyType, N_TYPE,
};
pub use self::mask::{
    make_submask, validate_scheme, BlendMask, SchemeKind, SchemeReport, SubmaskScheme,
};
pub use self::perturb::{
    perturb_frequency, perturb_spatial, FrequencyOp, PerturbationConfig, SpatialOp,
};
pub use self::transform::{apply_invariant_transforms, GlobalTransform};

use crate::error::{bail, Result};

/// `mask * source + (1 - mask) * target`, channelwise, clamped to `[0, 255]`.
pub fn blend(mask: &BlendMask, source: &FaceImage, target: &FaceImage) -> Result<FaceImage> {
    if !source.same_shape(target) || mask.width != target.width() || mask.height != target.height()
    {
        bail!(Domain, "blend inputs differ in shape");
    }
    let mut px = Vec::with_capacity(target.pixels().len());
    for ((&m, s), t) in mask
        .values
        .iter()
        .zip(source.pixels().chunks_exact(3))
        .zip(target.pixels().chunks_exact(3))
    {
        for c in 0..3 {
            let v = if m == 0.0 {
                t[c]
            } else if m == 1.0 {
                s[c]
            } else {
                m * s[c] + (1.0 - m) * t[c]
            };
            px.push(v.clamp(0.0, 255.0));
        }
    }
    Ok(target.with_pixels(px))
}

/// Perturbation applied to the whole image before masking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Spatial(SpatialOp),
    Frequency(FrequencyOp),
}

impl Perturbation {
    pub fn sample(y_type: DiscrepancyType, rng: &mut impl Rng, cfg: &PerturbationConfig) -> Self {
        match y_type {
            DiscrepancyType::Spatial => Self::Spatial(SpatialOp::sample(rng, cfg)),
            DiscrepancyType::Frequency => Self::Frequency(FrequencyOp::sample(rng, cfg)),
        }
    }

    pub fn apply(&self, img: &FaceImage) -> Result<FaceImage> {
        match self {
            Self::Spatial(op) => Ok(op.apply(img)),
            Self::Frequency(op) => op.apply(img),
        }
    }
}

/// Everything produced while synthesizing one discrepancy.
#[derive(Debug, Clone)]
pub struct SdSample {
    pub image: FaceImage,
    pub label: DiscrepancyLabel,
    /// Input after the global transforms, before the local perturbation.
    pub base: FaceImage,
    pub mask: BlendMask,
    pub transform: GlobalTransform,
    pub perturbation: Perturbation,
}

/// Synthesizes a soft discrepancy of type `y_type` at patch `y_loc`,
/// returning all intermediate products.
pub fn synthesize_sd_detailed(
    img: &FaceImage,
    y_loc: usize,
    y_type: usize,
    rng: &mut impl Rng,
    scheme: &SubmaskScheme,
    cfg: &PerturbationConfig,
) -> Result<SdSample> {
    let kind = DiscrepancyType::from_index(y_type)?;
    let label = DiscrepancyLabel::new(y_loc, y_type, scheme.n_loc(), N_TYPE)?;
    let transform = transform::sample_invariant_transform(img, rng, cfg);
    let base = transform.apply(img);
    let mask = make_submask(scheme, &base.landmarks, base.width(), base.height(), y_loc)?;
    let perturbation = Perturbation::sample(kind, rng, cfg);
    let perturbed = perturbation.apply(&base)?;
    // the perturbed copy fills the patch, the untouched image the rest
    let image = blend(&mask, &perturbed, &base)?;
    Ok(SdSample {
        image,
        label,
        base,
        mask,
        transform,
        perturbation,
    })
}

pub fn synthesize_sd(
    img: &FaceImage,
    y_loc: usize,
    y_type: usize,
    rng: &mut impl Rng,
    scheme: &SubmaskScheme,
    cfg: &PerturbationConfig,
) -> Result<(FaceImage, DiscrepancyLabel)> {
    let s = synthesize_sd_detailed(img, y_loc, y_type, rng, scheme, cfg)?;
    Ok((s.image, s.label))
}
