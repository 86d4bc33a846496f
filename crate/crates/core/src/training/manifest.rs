//! Frame manifests: one row per face image with its video, split, label and
//! landmarks.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{bail, Result};
use crate::factory::{FaceImage, Landmarks, N_LANDMARKS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => bail!(Data, "unknown split {s:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            _ => bail!(Data, "unknown label {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Image path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub video_id: String,
    pub split: Split,
    pub label: Label,
    pub landmarks: Landmarks,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

fn header() -> Vec<String> {
    let mut h: Vec<String> = ["path", "video_id", "split", "label"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..N_LANDMARKS {
        h.push(format!("x{i}"));
        h.push(format!("y{i}"));
    }
    h
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_reader(File::open(path)?);
        if reader
            .headers()?
            .iter()
            .ne(header().iter().map(String::as_str))
        {
            bail!(Data, "{}: unexpected manifest header", path.display());
        }
        let mut rows = Vec::new();
        for (n, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = n + 2;
            let mut landmarks = Vec::with_capacity(N_LANDMARKS);
            for i in 0..N_LANDMARKS {
                let coord = |k: usize| -> Result<f64> {
                    match rec[4 + k].trim().parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => bail!(
                            Data,
                            "line {line}: bad landmark coordinate {:?}",
                            &rec[4 + k]
                        ),
                    }
                };
                landmarks.push([coord(2 * i)?, coord(2 * i + 1)?]);
            }
            rows.push(ManifestRow {
                path: PathBuf::from(&rec[0]),
                video_id: rec[1].to_string(),
                split: Split::parse(&rec[2])?,
                label: Label::parse(&rec[3])?,
                landmarks,
            });
        }
        if rows.is_empty() {
            bail!(Data, "{}: manifest has no rows", path.display());
        }
        Ok(Self { root, rows })
    }

    /// Writes the manifest; paths are stored as given.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.path.to_string_lossy().into_owned(),
                r.video_id.clone(),
                r.split.as_str().to_string(),
                r.label.as_str().to_string(),
            ];
            for p in &r.landmarks {
                rec.push(p[0].to_string());
                rec.push(p[1].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.path.is_absolute() {
            row.path.clone()
        } else {
            self.root.join(&row.path)
        }
    }

    pub fn load_image(&self, row: &ManifestRow) -> Result<FaceImage> {
        FaceImage::load(self.resolve(row), row.landmarks.clone())
    }

    pub fn filter(&self, split: Split, label: Label) -> Vec<&ManifestRow> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.label == label)
            .collect()
    }

    /// Rows grouped by video id, in first-appearance order of the videos and
    /// manifest order within each video.
    pub fn videos(&self, split: Option<Split>) -> Vec<Video> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            if split.is_some_and(|s| s != r.split) {
                continue;
            }
            groups
                .entry(r.video_id.clone())
                .or_insert_with(|| {
                    order.push(r.video_id.clone());
                    Vec::new()
                })
                .push(i);
        }
        order
            .into_iter()
            .map(|id| {
                let rows = groups.remove(&id).unwrap();
                let label = self.rows[rows[0]].label;
                Video { id, label, rows }
            })
            .collect()
    }
}

/// Indices of a video's rows in its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub label: Label,
    pub rows: Vec<usize>,
}

/// Decoded frames of one video.
#[derive(Debug, Clone)]
pub struct VideoFrames {
    pub id: String,
    pub label: Label,
    pub frames: Vec<FaceImage>,
}

impl Manifest {
    pub fn load_videos(
        &self,
        split: Option<Split>,
        label: Option<Label>,
    ) -> Result<Vec<VideoFrames>> {
        let mut out = Vec::new();
        for v in self.videos(split) {
            if label.is_some_and(|l| l != v.label) {
                continue;
            }
            if v.rows.iter().any(|&i| self.rows[i].label != v.label) {
                bail!(Data, "video {} mixes real and fake frames", v.id);
            }
            let frames = v
                .rows
                .iter()
                .map(|&i| self.load_image(&self.rows[i]))
                .collect::<Result<Vec<_>>>()?;
            out.push(VideoFrames {
                id: v.id,
                label: v.label,
                frames,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(video: &str, label: Label) -> ManifestRow {
        ManifestRow {
            path: PathBuf::from(format!("{video}.png")),
            video_id: video.into(),
            split: Split::Train,
            label,
            landmarks: (0..N_LANDMARKS).map(|i| [i as f64 * 0.5, 1.25]).collect(),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            root: dir.path().to_path_buf(),
            rows: vec![
                row("a", Label::Real),
                row("b", Label::Fake),
                row("a", Label::Real),
            ],
        };
        let path = dir.path().join("m.csv");
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back, m);
        let vids = back.videos(None);
        assert_eq!(vids.len(), 2);
        assert_eq!(vids[0].rows, vec![0, 2]);
        assert_eq!(vids[1].label, Label::Fake);
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "path,video\nx,y\n").unwrap();
        assert!(matches!(Manifest::load(&path), Err(crate::Error::Data(_))));
        assert!(Manifest::load(dir.path().join("missing.csv")).is_err());
    }
}
