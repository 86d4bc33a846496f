//! Data handling, the one-class training loop, checkpoints and evaluation.

pub mod auc;
pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod manifest;
pub mod train;

pub use auc::evaluate_auc;
pub use batch::{build_batch, Batch, TrainingPool};
pub use checkpoint::Checkpoint;
pub use config::{TrainConfig, TrunkConfig};
pub use corpus::{synth_corpus, synth_videos, CorpusSpec, SynthVideo};
pub use manifest::{Label, Manifest, ManifestRow, Split, VideoFrames};
pub use train::{class_accuracy, read_log, train, train_pool, write_log, LogRow, TrainOutcome};
