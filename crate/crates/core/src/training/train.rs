//! One-class training loop.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use super::batch::{batch_for_videos, epoch_plan, step_seed, Batch, TrainingPool};
use super::checkpoint::{Checkpoint, LOG_TAIL};
use super::config::TrainConfig;
use super::manifest::{Label, Manifest, Split};
use crate::encoder::{EncoderContract, ToyEncoder};
use crate::error::{bail, Result};
use crate::factory::{synthesize_sd, ClassLayout, FaceImage, PerturbationConfig, SubmaskScheme};
use crate::losses::{objective, LossTerms, Objective, Targets, Temperature};
use crate::prototypes::PrototypeSet;
use crate::seed::{derive_seed, rng_for};

/// Per-epoch averages of the per-sample loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub bcr: f64,
    /// Unweighted guidance term.
    pub guidance: f64,
    pub total: f64,
    pub wall_clock_s: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,lambda,bcr,guidance,total,wall_clock_s";

pub fn write_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.epoch, r.lr, r.lambda, r.bcr, r.guidance, r.total, r.wall_clock_s
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != LOG_HEADER {
                bail!(Data, "unexpected log header {line:?}");
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || crate::Error::Data(format!("log line {}: malformed", n + 1));
        if f.len() != 7 {
            return Err(bad());
        }
        let v: Vec<f64> = f[1..]
            .iter()
            .map(|s| s.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        rows.push(LogRow {
            epoch: f[0].parse().map_err(|_| bad())?,
            lr: v[0],
            lambda: v[1],
            bcr: v[2],
            guidance: v[3],
            total: v[4],
            wall_clock_s: v[5],
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

/// Loss terms of one batch and the parameter gradient of `terms.total`.
pub fn batch_gradient(
    encoder: &ToyEncoder,
    batch: &Batch,
    targets: &Targets,
    tau: Temperature,
    lambda: f64,
    kind: Objective,
) -> Result<(LossTerms, Vec<f64>)> {
    let caches: Vec<_> = batch
        .images
        .par_iter()
        .map(|img| encoder.forward(img))
        .collect();
    let (n, d) = (caches.len(), encoder.embed_dim());
    let z = Array2::from_shape_fn((n, d), |(i, j)| caches[i].z_raw[j]);
    let (terms, grad_z) = objective(z.view(), &batch.labels, targets, tau, lambda, kind, true)?;
    let grad_z = grad_z.expect("gradient requested");
    let n_params = encoder.params().len();
    let per_sample: Vec<Vec<f64>> = caches
        .par_iter()
        .enumerate()
        .map(|(i, cache)| {
            let mut g = vec![0.0; n_params];
            encoder.backward(cache, grad_z.row(i).as_slice().expect("contiguous"), &mut g);
            g
        })
        .collect();
    // fixed-order reduction keeps the sum independent of thread count
    let mut grad = vec![0.0; n_params];
    for g in &per_sample {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((terms, grad))
}

/// SGD with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(n_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
    }
}

/// Loads the real training videos of a manifest. Fake rows are never
/// decoded.
pub fn training_pool(manifest: &Manifest) -> Result<TrainingPool> {
    TrainingPool::new(manifest.load_videos(Some(Split::Train), Some(Label::Real))?)
}

pub fn train(manifest: &Manifest, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_pool(&training_pool(manifest)?, cfg, |_| {})
}

/// Trains a fresh toy encoder on `pool`, calling `on_epoch` after every
/// epoch.
pub fn train_pool(
    pool: &TrainingPool,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pool.len() < cfg.batch_size {
        bail!(
            Data,
            "{} training videos cannot fill a batch of {}",
            pool.len(),
            cfg.batch_size
        );
    }
    let layout = cfg.layout()?;
    let scheme = cfg.scheme();
    let graph = cfg.graph()?;
    let protos = cfg.prototypes()?;
    let targets = Targets::new(&protos, layout, &graph)?;
    let tau = cfg.temperature()?;
    let mut encoder = ToyEncoder::new(cfg.encoder_spec(), derive_seed(cfg.seed, &[0xe7c0]))?;
    let mut sgd = Sgd::new(encoder.params().len(), cfg.momentum, cfg.weight_decay);

    let mut schedule = Vec::new();
    for epoch in 0..cfg.epochs {
        for (step, videos) in epoch_plan(pool.len(), cfg.batch_size, cfg.seed, epoch)?
            .into_iter()
            .enumerate()
        {
            schedule.push((epoch, step, videos));
        }
    }
    let make = |(epoch, step, videos): &(usize, usize, Vec<usize>)| {
        batch_for_videos(
            pool,
            videos,
            step_seed(cfg.seed, *epoch, *step),
            &layout,
            &scheme,
            &cfg.perturbation,
        )
    };

    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut acc = [0.0; 3];
    let mut seen = 0usize;
    let mut consume = |i: usize, batch: Batch, encoder: &mut ToyEncoder| -> Result<()> {
        let (epoch, step, _) = &schedule[i];
        let (lr, lambda) = (cfg.learning_rate(*epoch), cfg.lambda(*epoch));
        let (terms, mut grad) =
            batch_gradient(encoder, &batch, &targets, tau, lambda, cfg.objective)?;
        if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            bail!(
                Numeric,
                "non-finite loss or gradient at epoch {epoch} step {step} (bcr {}, guidance {})",
                terms.bcr(),
                terms.guidance
            );
        }
        // average over the batch so the learning rate does not scale with it
        let n = batch.labels.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        sgd.step(encoder.params_mut(), &grad, lr);
        if encoder.params().iter().any(|p| !p.is_finite()) {
            bail!(Numeric, "parameters diverged at epoch {epoch} step {step}");
        }
        acc[0] += (terms.bcr() + terms.cross_entropy) / n;
        acc[1] += terms.guidance / n;
        acc[2] += terms.total / n;
        seen += 1;
        let last_of_epoch = schedule.get(i + 1).is_none_or(|next| next.0 != *epoch);
        if last_of_epoch {
            let k = seen as f64;
            let row = LogRow {
                epoch: *epoch,
                lr,
                lambda,
                bcr: acc[0] / k,
                guidance: acc[1] / k,
                total: acc[2] / k,
                wall_clock_s: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} lr {:.3e} lambda {:.4} bcr {:.4} guidance {:.4} total {:.4}",
                row.epoch,
                row.lr,
                row.lambda,
                row.bcr,
                row.guidance,
                row.total
            );
            on_epoch(&row);
            log.push(row);
            acc = [0.0; 3];
            seen = 0;
        }
        Ok(())
    };

    if cfg.strict {
        for (i, item) in schedule.iter().enumerate() {
            consume(i, make(item)?, &mut encoder)?;
        }
    } else {
        // batches are synthesized ahead on a producer thread; their
        // contents depend only on the schedule, not on timing
        std::thread::scope(|s| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<Batch>>(cfg.queue_depth);
            let schedule = &schedule;
            s.spawn(move || {
                for item in schedule {
                    let b = make(item);
                    let failed = b.is_err();
                    if tx.send(b).is_err() || failed {
                        break;
                    }
                }
            });
            for i in 0..schedule.len() {
                let batch = rx
                    .recv()
                    .map_err(|_| crate::Error::Data("batch producer stopped".into()))??;
                consume(i, batch, &mut encoder)?;
            }
            Ok(())
        })?;
    }

    let tail = log[log.len().saturating_sub(LOG_TAIL)..].to_vec();
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            epoch: cfg.epochs,
            log_tail: tail,
            prototypes: protos,
            encoder,
        },
        log,
    })
}

/// Fraction of synthetic discrepancies whose embedding matches the
/// prototype of their own class. Image `i` receives `per_image` random
/// discrepancies drawn from the stream `(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn class_accuracy<E: EncoderContract + ?Sized>(
    encoder: &E,
    protos: &PrototypeSet,
    layout: &ClassLayout,
    scheme: &SubmaskScheme,
    cfg: &PerturbationConfig,
    images: &[&FaceImage],
    per_image: usize,
    seed: u64,
) -> Result<f64> {
    if images.is_empty() || per_image == 0 {
        bail!(Domain, "nothing to evaluate");
    }
    let hits = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = rng_for(seed, &[i as u64]);
            let mut hits = 0usize;
            for _ in 0..per_image {
                let class = rng.gen_range(0..layout.n_classes());
                let (loc, ty) = layout.decode(class)?;
                let (sd, _) = synthesize_sd(img, loc, ty, &mut rng, scheme, cfg)?;
                let z = encoder.embed(&sd).z;
                let proto =
                    crate::prototypes::match_prototype_in(&z, protos, layout.class_protos())?;
                if layout.class_of_proto(proto) == Some(class) {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / (images.len() * per_image) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_momentum_matches_hand_computation() {
        let mut p = vec![1.0];
        let mut opt = Sgd::new(1, 0.9, 0.0);
        opt.step(&mut p, &[2.0], 0.1);
        assert!((p[0] - 0.8).abs() < 1e-15);
        opt.step(&mut p, &[2.0], 0.1);
        // v = 0.9 * 2 + 2 = 3.8
        assert!((p[0] - 0.42).abs() < 1e-15);
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![LogRow {
            epoch: 0,
            lr: 1e-3,
            lambda: 0.0,
            bcr: 3.25,
            guidance: 1.0 / 7.0,
            total: 3.25,
            wall_clock_s: 0.5,
        }];
        let path = dir.path().join("log.csv");
        write_log(&path, &rows).unwrap();
        assert_eq!(read_log(&path).unwrap(), rows);
    }
}
