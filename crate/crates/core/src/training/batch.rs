//! Training batches: one frame from each of several distinct real videos,
//! each given one soft discrepancy with a uniformly drawn class.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use super::manifest::{Label, VideoFrames};
use crate::error::{bail, Result};
use crate::factory::{synthesize_sd, ClassLayout, FaceImage, PerturbationConfig, SubmaskScheme};
use crate::seed::{derive_seed, rng_for};

/// Real training videos. Construction refuses any fake video, so nothing
/// downstream of it can see one.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    videos: Vec<VideoFrames>,
}

impl TrainingPool {
    pub fn new(videos: Vec<VideoFrames>) -> Result<Self> {
        if let Some(v) = videos.iter().find(|v| v.label != Label::Real) {
            bail!(Data, "fake video {} offered for one-class training", v.id);
        }
        if let Some(v) = videos.iter().find(|v| v.frames.is_empty()) {
            bail!(Data, "video {} has no frames", v.id);
        }
        Ok(Self { videos })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn videos(&self) -> &[VideoFrames] {
        &self.videos
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<FaceImage>,
    pub labels: Vec<usize>,
    /// Pool index of the video each image came from.
    pub videos: Vec<usize>,
}

/// Synthesizes one discrepancy per listed video. Slot `i` draws its frame,
/// class and perturbation from a stream seeded by `(seed, i)`, so the batch
/// does not depend on how the work is scheduled.
pub fn batch_for_videos(
    pool: &TrainingPool,
    videos: &[usize],
    seed: u64,
    layout: &ClassLayout,
    scheme: &SubmaskScheme,
    cfg: &PerturbationConfig,
) -> Result<Batch> {
    let mut seen = videos.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != videos.len() {
        bail!(Data, "batch repeats a video");
    }
    let samples = videos
        .par_iter()
        .enumerate()
        .map(|(slot, &v)| {
            let video = pool
                .videos
                .get(v)
                .ok_or_else(|| crate::Error::Data(format!("video index {v} out of range")))?;
            let mut rng = rng_for(seed, &[slot as u64]);
            let frame = &video.frames[rng.gen_range(0..video.frames.len())];
            let class = rng.gen_range(0..layout.n_classes());
            let (loc, ty) = layout.decode(class)?;
            let (img, label) = synthesize_sd(frame, loc, ty, &mut rng, scheme, cfg)?;
            debug_assert_eq!(label.y, class);
            Ok((img, class))
        })
        .collect::<Result<Vec<_>>>()?;
    let (images, labels) = samples.into_iter().unzip();
    Ok(Batch {
        images,
        labels,
        videos: videos.to_vec(),
    })
}

/// A batch of `batch_size` distinct videos chosen uniformly at random.
pub fn build_batch(
    pool: &TrainingPool,
    batch_size: usize,
    rng: &mut impl Rng,
    layout: &ClassLayout,
    scheme: &SubmaskScheme,
    cfg: &PerturbationConfig,
) -> Result<Batch> {
    if pool.len() < batch_size {
        bail!(
            Data,
            "{} distinct videos cannot fill a batch of {batch_size}",
            pool.len()
        );
    }
    let videos = index::sample(rng, pool.len(), batch_size).into_vec();
    batch_for_videos(pool, &videos, rng.gen(), layout, scheme, cfg)
}

/// Video lists for one epoch: `ceil(n / batch_size)` batches over a fresh
/// permutation. The last batch is topped up with videos from the start of
/// the permutation so it stays full and duplicate-free.
pub fn epoch_plan(
    n_videos: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if n_videos < batch_size {
        bail!(
            Data,
            "{n_videos} distinct videos cannot fill a batch of {batch_size}"
        );
    }
    let mut order: Vec<usize> = (0..n_videos).collect();
    order.shuffle(&mut rng_for(seed, &[0x5eed, epoch as u64]));
    let mut plan: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let last = plan.last_mut().expect("at least one batch");
    let mut fill = order.iter();
    while last.len() < batch_size {
        let v = *fill.next().expect("enough videos");
        if !last.contains(&v) {
            last.push(v);
        }
    }
    Ok(plan)
}

/// Seed of the batch at `(epoch, step)`.
pub fn step_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    derive_seed(seed, &[epoch as u64, step as u64])
}
