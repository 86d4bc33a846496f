//! Frame- and video-level scoring by prototype consistency.
//!
//! For every discrepancy class `k` a test frame receives the synthetic
//! discrepancy `k`; its contribution is `|h_k| * (1 + sim(z_k, p_k))`. Faces
//! the model "understands" (real ones) score high, so the reported anomaly
//! score is the negated sum.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::EncoderContract;
use crate::error::{bail, Result};
use crate::factory::{synthesize_sd, ClassLayout, FaceImage, PerturbationConfig, SubmaskScheme};
use crate::prototypes::PrototypeSet;
use crate::seed::rng_for;

/// Frames scored per video at most.
pub const MAX_FRAMES_PER_VIDEO: usize = 30;

/// Everything needed to turn a frame into a consistency score.
pub struct Detector<'a, E: EncoderContract + ?Sized> {
    pub encoder: &'a E,
    pub protos: &'a PrototypeSet,
    pub layout: ClassLayout,
    pub scheme: SubmaskScheme,
    pub perturbation: PerturbationConfig,
    /// Base seed of the per-(frame, class) discrepancy streams.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub score: f64,
    pub contributions: Vec<f64>,
}

/// Per-frame scores and their aggregate for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub frame_indices: Vec<usize>,
    pub frame_scores: Vec<f64>,
    /// Mean of the frame scores.
    pub video_score: f64,
    /// Per-class contributions averaged over the scored frames.
    pub contributions: Vec<f64>,
}

impl ScoreReport {
    pub fn consistency_score(&self) -> f64 {
        self.video_score
    }

    pub fn anomaly_score(&self) -> f64 {
        -self.video_score
    }
}

impl<'a, E: EncoderContract + ?Sized> Detector<'a, E> {
    pub fn new(
        encoder: &'a E,
        protos: &'a PrototypeSet,
        layout: ClassLayout,
        scheme: SubmaskScheme,
        perturbation: PerturbationConfig,
        seed: u64,
    ) -> Result<Self> {
        if encoder.embed_dim() != protos.dim() {
            bail!(
                Model,
                "encoder embeds into {} dims, prototypes live in {}",
                encoder.embed_dim(),
                protos.dim()
            );
        }
        if protos.count() != layout.n_prototypes() {
            bail!(
                Model,
                "{} prototypes for a layout needing {}",
                protos.count(),
                layout.n_prototypes()
            );
        }
        if scheme.n_loc() != layout.n_loc() {
            bail!(
                Model,
                "scheme has {} patches, layout {}",
                scheme.n_loc(),
                layout.n_loc()
            );
        }
        Ok(Self {
            encoder,
            protos,
            layout,
            scheme,
            perturbation,
            seed,
        })
    }

    fn contribution(&self, img: &FaceImage, frame_index: usize, class: usize) -> Result<f64> {
        let (loc, ty) = self.layout.decode(class)?;
        let mut rng = rng_for(self.seed, &[frame_index as u64, class as u64]);
        let (sd, _) = synthesize_sd(img, loc, ty, &mut rng, &self.scheme, &self.perturbation)?;
        let emb = self.encoder.embed(&sd);
        let p = self.protos.get(self.layout.proto_index(class));
        let sim: f64 = emb.z.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
        Ok(emb.h_norm() * (1.0 + sim.clamp(-1.0, 1.0)))
    }

    /// Consistency score of one frame: the sum over discrepancy classes of
    /// `|h_k| * (1 + sim(z_k, p_k))`. The reserved prototype, if any, takes
    /// no part.
    pub fn score_frame(&self, img: &FaceImage, frame_index: usize) -> Result<FrameScore> {
        let contributions = (0..self.layout.n_classes())
            .into_par_iter()
            .map(|k| self.contribution(img, frame_index, k))
            .collect::<Result<Vec<_>>>()?;
        let score = contributions.iter().sum();
        Ok(FrameScore {
            score,
            contributions,
        })
    }

    /// Scores up to [`MAX_FRAMES_PER_VIDEO`] evenly spaced frames and
    /// averages them.
    pub fn score_video(&self, frames: &[FaceImage]) -> Result<ScoreReport> {
        if frames.is_empty() {
            bail!(Domain, "cannot score a video without frames");
        }
        let frame_indices = subsample_indices(frames.len(), MAX_FRAMES_PER_VIDEO);
        let scores = frame_indices
            .iter()
            .map(|&i| self.score_frame(&frames[i], i))
            .collect::<Result<Vec<_>>>()?;
        let n = scores.len() as f64;
        let frame_scores: Vec<f64> = scores.iter().map(|s| s.score).collect();
        let video_score = frame_scores.iter().sum::<f64>() / n;
        let mut contributions = vec![0.0; self.layout.n_classes()];
        for s in &scores {
            for (acc, c) in contributions.iter_mut().zip(&s.contributions) {
                *acc += c / n;
            }
        }
        Ok(ScoreReport {
            frame_indices,
            frame_scores,
            video_score,
            contributions,
        })
    }
}

/// `min(n, max)` evenly spaced indices `floor(i * n / m)`.
pub fn subsample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max).collect()
}

/// One scored video as written to the score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub video_id: String,
    pub is_fake: bool,
    pub consistency_score: f64,
    pub anomaly_score: f64,
    pub n_frames: usize,
}

pub const SCORE_HEADER: &str = "video_id,label,consistency_score,anomaly_score,n_frames";

/// Writes rows as comma-separated text; floats use the shortest
/// representation that parses back to the same value.
pub fn write_scores(path: impl AsRef<Path>, rows: &[ScoreRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SCORE_HEADER}")?;
    for r in rows {
        if r.video_id.contains(',') {
            bail!(Data, "video id {:?} contains a comma", r.video_id);
        }
        writeln!(
            w,
            "{},{},{},{},{}",
            r.video_id,
            if r.is_fake { "fake" } else { "real" },
            r.consistency_score,
            r.anomaly_score,
            r.n_frames
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != SCORE_HEADER {
                bail!(Data, "unexpected score header {line:?}");
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!(Data, "line {}: expected 5 fields", n + 1);
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| crate::Error::Data(format!("line {}: {e}", n + 1)))
        };
        rows.push(ScoreRow {
            video_id: f[0].to_string(),
            is_fake: match f[1] {
                "fake" => true,
                "real" => false,
                other => bail!(Data, "line {}: unknown label {other:?}", n + 1),
            },
            consistency_score: num(f[2])?,
            anomaly_score: num(f[3])?,
            n_frames: f[4]
                .parse()
                .map_err(|e| crate::Error::Data(format!("line {}: {e}", n + 1)))?,
        });
    }
    Ok(rows)
}
