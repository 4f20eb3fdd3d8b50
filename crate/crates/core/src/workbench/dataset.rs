//! On-disk datasets: manifest, caption files and normalisation statistics.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{load_motion, save_motion};
use crate::losses::Denormalizer;
use crate::motion::{representation_width, InteractionSample, MotionSequence, Provenance};
use crate::tape::Mat;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Two-agent motion file, relative to the manifest directory.
    pub motion_file: String,
    /// One caption per line, relative to the manifest directory.
    pub caption_file: String,
    pub split: Split,
    #[serde(default = "real")]
    pub provenance: Provenance,
}

fn real() -> Provenance {
    Provenance::Real
}

/// Per-channel statistics shared by both agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Statistics over every frame of both agents; standard deviations are
    /// floored at [`STD_FLOOR`].
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a InteractionSample>) -> Result<Self> {
        let reps: Vec<_> = samples
            .into_iter()
            .flat_map(|s| s.agents.iter().map(MotionSequence::to_representation))
            .collect();
        let width = reps.first().map(|r| r.ncols()).unwrap_or(0);
        if reps.iter().any(|r| r.ncols() != width) {
            return Err(Error::shape("samples have different joint counts"));
        }
        let count: usize = reps.iter().map(|r| r.nrows()).sum();
        if count == 0 {
            return Err(Error::DatasetTooSmall("no frames to compute statistics from".into()));
        }
        let mut mean = vec![0.0; width];
        for r in &reps {
            for row in r.rows() {
                for (k, &v) in row.iter().enumerate() {
                    mean[k] += v as f64;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; width];
        for r in &reps {
            for row in r.rows() {
                for (k, &v) in row.iter().enumerate() {
                    let d = v as f64 - mean[k];
                    var[k] += d * d;
                }
            }
        }
        let std = var.iter().map(|v| (v / count as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn denormalizer(&self) -> Denormalizer {
        Denormalizer {
            mean: Mat::from_shape_vec((1, self.width()), self.mean.clone()).expect("row vector"),
            std: Mat::from_shape_vec((1, self.width()), self.std.clone()).expect("row vector"),
        }
    }

    pub fn normalize(&self, seq: &MotionSequence) -> Result<Mat> {
        let rep = seq.to_representation();
        if rep.ncols() != self.width() {
            return Err(Error::shape(format!("sequence width {} vs stats width {}", rep.ncols(), self.width())));
        }
        let mut x = rep.mapv(f64::from);
        for (k, mut col) in x.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[k], self.std[k]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(x)
    }

    pub fn denormalize(&self, x: &Mat, joints: usize, fps: u16) -> Result<MotionSequence> {
        if x.ncols() != self.width() || representation_width(joints) != self.width() {
            return Err(Error::shape(format!("input width {} vs stats width {}", x.ncols(), self.width())));
        }
        crate::diffusion::to_sequence(x, &self.denormalizer(), joints, fps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() || self.mean.is_empty() {
            return Err(Error::Config("normalisation stats are malformed".into()));
        }
        if self.std.iter().any(|s| !(*s >= STD_FLOOR)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalisation stats contain a non-positive deviation".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub fps: u16,
    pub joint_count: usize,
    pub normalization: NormStats,
}

impl DatasetManifest {
    /// Writes samples, captions and a manifest into `dir`. Statistics come
    /// from the train split alone.
    pub fn write(dir: &Path, samples: &[(InteractionSample, Split)]) -> Result<Self> {
        let first = &samples
            .first()
            .ok_or_else(|| Error::DatasetTooSmall("no samples to write".into()))?
            .0;
        let (fps, joints) = (first.fps(), first.joint_count());
        if samples.iter().any(|(s, _)| s.fps() != fps || s.joint_count() != joints) {
            return Err(Error::shape("samples disagree on fps or joint count"));
        }
        let train: Vec<&InteractionSample> =
            samples.iter().filter(|(_, sp)| *sp == Split::Train).map(|(s, _)| s).collect();
        let normalization = NormStats::from_samples(train)?;
        fs::create_dir_all(dir.join("motions"))?;
        fs::create_dir_all(dir.join("captions"))?;
        let mut entries = Vec::with_capacity(samples.len());
        for (i, (s, split)) in samples.iter().enumerate() {
            let motion_file = format!("motions/{i:05}.t2imot");
            let caption_file = format!("captions/{i:05}.txt");
            save_motion(&dir.join(&motion_file), &[&s.agents[0], &s.agents[1]])?;
            fs::write(dir.join(&caption_file), s.captions.join("\n") + "\n")?;
            entries.push(ManifestEntry {
                motion_file,
                caption_file,
                split: *split,
                provenance: s.provenance,
            });
        }
        let manifest = Self {
            entries,
            fps,
            joint_count: joints,
            normalization,
        };
        manifest.save(&dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads `dir/manifest.json` (or a manifest path directly).
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::corrupt(&file, e.to_string()))?;
        m.validate()?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, root))
    }

    pub fn validate(&self) -> Result<()> {
        self.normalization.validate()?;
        if self.normalization.width() != representation_width(self.joint_count) {
            return Err(Error::Config("statistics width does not match the joint count".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.motion_file.as_str()) {
                return Err(Error::Config(format!("{} is listed twice", e.motion_file)));
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// Loads every sample of `split` in manifest order.
    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<InteractionSample>> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| self.load_entry(root, e))
            .collect()
    }

    pub fn load_entry(&self, root: &Path, e: &ManifestEntry) -> Result<InteractionSample> {
        let path = root.join(&e.motion_file);
        let mut agents = load_motion(&path)?;
        if agents.len() != 2 {
            return Err(Error::corrupt(&path, format!("{} agents, expected 2", agents.len())));
        }
        let captions: Vec<String> = fs::read_to_string(root.join(&e.caption_file))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let b = agents.pop().expect("two agents");
        let a = agents.pop().expect("two agents");
        InteractionSample::new([a, b], captions, e.provenance)
    }
}
