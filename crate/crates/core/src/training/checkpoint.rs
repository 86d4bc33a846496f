//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `SBLCKPT1`, `u32` version, config as
//! length-prefixed TOML, `u64` epoch, log rows, prototype block, `u64`
//! parameter count and the parameters as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::config::TrainConfig;
use super::train::LogRow;
use crate::detector::Detector;
use crate::encoder::ToyEncoder;
use crate::error::{bail, Result};
use crate::prototypes::PrototypeSet;

const MAGIC: &[u8; 8] = b"SBLCKPT1";
const VERSION: u32 = 1;

/// Rows of the training log kept in a checkpoint.
pub const LOG_TAIL: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub log_tail: Vec<LogRow>,
    pub prototypes: PrototypeSet,
    pub encoder: ToyEncoder,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        let cfg = self.config.to_toml();
        w.write_u64::<LittleEndian>(cfg.len() as u64)?;
        w.write_all(cfg.as_bytes())?;
        w.write_u64::<LittleEndian>(self.epoch as u64)?;
        w.write_u64::<LittleEndian>(self.log_tail.len() as u64)?;
        for r in &self.log_tail {
            w.write_u64::<LittleEndian>(r.epoch as u64)?;
            for v in [r.lr, r.lambda, r.bcr, r.guidance, r.total, r.wall_clock_s] {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        self.prototypes.write_to(w)?;
        let params = self.encoder.params();
        w.write_u64::<LittleEndian>(params.len() as u64)?;
        for &p in params {
            w.write_f64::<LittleEndian>(p)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| crate::Error::Format("truncated checkpoint".into()))?;
        if &magic != MAGIC {
            bail!(Format, "not a checkpoint file");
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            bail!(Format, "unsupported checkpoint version {version}");
        }
        let len = read_len(r, 1 << 20)?;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        let cfg = String::from_utf8(cfg)
            .map_err(|_| crate::Error::Format("config is not UTF-8".into()))?;
        let config = TrainConfig::from_toml(&cfg)?;
        let epoch = r.read_u64::<LittleEndian>()? as usize;
        let n_log = read_len(r, 1 << 20)?;
        let mut log_tail = Vec::with_capacity(n_log);
        for _ in 0..n_log {
            let epoch = r.read_u64::<LittleEndian>()? as usize;
            let mut v = [0.0; 6];
            for x in &mut v {
                *x = r.read_f64::<LittleEndian>()?;
            }
            log_tail.push(LogRow {
                epoch,
                lr: v[0],
                lambda: v[1],
                bcr: v[2],
                guidance: v[3],
                total: v[4],
                wall_clock_s: v[5],
            });
        }
        let prototypes = PrototypeSet::read_from(r)?;
        let n_params = read_len(r, 1 << 28)?;
        let mut params = vec![0.0; n_params];
        for p in &mut params {
            *p = r.read_f64::<LittleEndian>()?;
        }
        let encoder = ToyEncoder::from_params(config.encoder_spec(), params)?;
        Ok(Self {
            config,
            epoch,
            log_tail,
            prototypes,
            encoder,
        })
    }

    /// Detector over this checkpoint's encoder and prototypes; `seed`
    /// drives the scoring-time discrepancies.
    pub fn detector(&self, seed: u64) -> Result<Detector<'_, ToyEncoder>> {
        Detector::new(
            &self.encoder,
            &self.prototypes,
            self.config.layout()?,
            self.config.scheme(),
            self.config.perturbation.clone(),
            seed,
        )
    }
}

fn read_len(r: &mut impl Read, max: u64) -> Result<usize> {
    let n = r.read_u64::<LittleEndian>()?;
    if n > max {
        bail!(Format, "implausible length {n} in checkpoint");
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let config = TrainConfig {
            grid_rows: 2,
            grid_cols: 2,
            embed_dim: 16,
            encoder: super::super::config::TrunkConfig {
                input_size: 16,
                channels: vec![4],
                pools: vec![4],
            },
            ..TrainConfig::desk()
        };
        Checkpoint {
            prototypes: config.prototypes().unwrap(),
            encoder: ToyEncoder::new(config.encoder_spec(), 5).unwrap(),
            epoch: 2,
            log_tail: vec![LogRow {
                epoch: 1,
                lr: 0.1,
                lambda: 0.05,
                bcr: 1.0 / 3.0,
                guidance: 2.5,
                total: 0.1 + 0.2,
                wall_clock_s: 0.25,
            }],
            config,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = tiny();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(&mut buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let c = tiny();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::read_from(&mut bad.as_slice()),
            Err(crate::Error::Format(_))
        ));
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 3]).is_err());
        assert!(Checkpoint::read_from(&mut &b"SBL"[..]).is_err());
    }
}
