//! Training configuration, readable from and writable to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderSpec;
use crate::error::{bail, Result};
use crate::factory::{ClassLayout, PerturbationConfig, SubmaskScheme};
use crate::graph::PatchGraph;
use crate::losses::{Objective, Temperature};
use crate::prototypes::{make_simplex_prototypes, PrototypeSet};

/// Convolutional trunk of the toy encoder; the embedding width comes from
/// [`TrainConfig::embed_dim`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrunkConfig {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub pools: Vec<usize>,
}

impl Default for TrunkConfig {
    fn default() -> Self {
        let s = EncoderSpec::default();
        Self {
            input_size: s.input_size,
            channels: s.channels,
            pools: s.pools,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub tau: f64,
    pub lambda_max: f64,
    /// Linear ramp of the guidance weight from 0 to `lambda_max`; when off
    /// the weight is `lambda_max` throughout.
    pub lambda_ramp: bool,
    pub objective: Objective,
    pub seed: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub embed_dim: usize,
    /// Keep prototype 0 as an unused pristine slot.
    pub reserve_prototype: bool,
    pub feather_sigma: f64,
    /// Synthesize batches on the training thread instead of a producer
    /// thread.
    pub strict: bool,
    pub queue_depth: usize,
    pub encoder: TrunkConfig,
    pub perturbation: PerturbationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 6,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_start: 1e-3,
            lr_end: 1e-5,
            tau: 0.1,
            lambda_max: 0.1,
            lambda_ramp: true,
            objective: Objective::Seeable,
            seed: 0,
            grid_rows: 4,
            grid_cols: 4,
            embed_dim: 128,
            reserve_prototype: true,
            feather_sigma: 3.0,
            strict: false,
            queue_depth: 4,
            encoder: TrunkConfig::default(),
            perturbation: PerturbationConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings sized for a few minutes of single-core training on
    /// 64x64 synthetic faces.
    pub fn desk() -> Self {
        Self {
            epochs: 700,
            batch_size: 32,
            lr_start: 0.03,
            lr_end: 3e-4,
            embed_dim: 32,
            feather_sigma: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            bail!(Domain, "need at least one epoch and a batch of two");
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            bail!(
                Domain,
                "learning rates must be positive with lr_end <= lr_start"
            );
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            bail!(
                Domain,
                "momentum must lie in [0, 1) and weight decay be nonnegative"
            );
        }
        if !(self.lambda_max >= 0.0) {
            bail!(Domain, "lambda_max must be nonnegative");
        }
        if self.queue_depth == 0 {
            bail!(Domain, "queue depth must be positive");
        }
        Temperature::new(self.tau)?;
        self.perturbation.validate()?;
        self.encoder_spec().validate()?;
        let layout = self.layout()?;
        if layout.n_prototypes() > self.embed_dim + 1 {
            bail!(
                Dimension,
                "{} prototypes need an embedding of at least {} dims",
                layout.n_prototypes(),
                layout.n_prototypes() - 1
            );
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| crate::Error::Format(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn layout(&self) -> Result<ClassLayout> {
        ClassLayout::new(
            self.grid_rows,
            self.grid_cols,
            self.reserve_prototype as usize,
        )
    }

    pub fn scheme(&self) -> SubmaskScheme {
        SubmaskScheme::grid(self.grid_rows, self.grid_cols, self.feather_sigma)
    }

    pub fn graph(&self) -> Result<PatchGraph> {
        PatchGraph::grid(self.grid_rows, self.grid_cols)
    }

    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::new(self.tau)
    }

    pub fn prototypes(&self) -> Result<PrototypeSet> {
        make_simplex_prototypes(self.embed_dim, self.layout()?.n_prototypes())
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            input_size: self.encoder.input_size,
            channels: self.encoder.channels.clone(),
            pools: self.encoder.pools.clone(),
            embed_dim: self.embed_dim,
        }
    }

    /// Cosine decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.lr_end + 0.5 * (self.lr_start - self.lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn lambda(&self, epoch: usize) -> f64 {
        if self.lambda_ramp {
            crate::losses::lambda_schedule(epoch, self.epochs, self.lambda_max)
        } else {
            self.lambda_max
        }
    }
}
