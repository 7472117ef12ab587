//! On-disk datasets: one directory holding a `manifest.json`, and per sequence
//! a backbone `.hms`, a ground-truth `.hms` and a landmark CSV.
//!
//! Heatmaps are stored as `f32`, so a reloaded dataset matches the in-memory
//! one only up to single precision.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, SequenceSample};
use crate::error::{Error, Result};
use crate::heatmap::io::{read_hms, read_landmarks_csv, write_hms, write_landmarks_csv};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "stable-align-dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub name: String,
    pub split: Split,
    pub frames: usize,
    pub seed: u64,
    pub backbone: String,
    pub gt_heatmaps: String,
    pub landmarks: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub landmarks: usize,
    pub height: usize,
    pub width: usize,
    pub sequences: Vec<SequenceEntry>,
}

fn write_sequence(dir: &Path, entry: &SequenceEntry, sample: &SequenceSample) -> Result<()> {
    write_hms(BufWriter::new(File::create(dir.join(&entry.backbone))?), &sample.backbone_heatmaps)?;
    write_hms(BufWriter::new(File::create(dir.join(&entry.gt_heatmaps))?), &sample.gt_heatmaps)?;
    write_landmarks_csv(BufWriter::new(File::create(dir.join(&entry.landmarks))?), &sample.gt_landmarks)
}

/// Writes both splits and the manifest into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<Manifest> {
    let first = dataset
        .train
        .first()
        .or(dataset.test.first())
        .ok_or_else(|| Error::Empty("dataset without sequences".into()))?;
    let shape = &first.gt_heatmaps[0];
    fs::create_dir_all(dir)?;
    let mut sequences = Vec::new();
    for (split, samples) in [(Split::Train, &dataset.train), (Split::Test, &dataset.test)] {
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        for (i, sample) in samples.iter().enumerate() {
            let name = format!("{prefix}_{i:04}");
            let entry = SequenceEntry {
                backbone: format!("{name}.backbone.hms"),
                gt_heatmaps: format!("{name}.gt.hms"),
                landmarks: format!("{name}.landmarks.csv"),
                name,
                split,
                frames: sample.frames(),
                seed: sample.seed,
            };
            write_sequence(dir, &entry, sample)?;
            sequences.push(entry);
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        landmarks: shape.landmarks(),
        height: shape.height(),
        width: shape.width(),
        sequences,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != 1 {
        return Err(Error::Format {
            format: "manifest",
            message: format!("unsupported format {} v{}", manifest.format, manifest.version),
        });
    }
    Ok(manifest)
}

fn load_sequence(dir: &Path, manifest: &Manifest, entry: &SequenceEntry) -> Result<SequenceSample> {
    let backbone = read_hms(BufReader::new(File::open(dir.join(&entry.backbone))?))?;
    let gt = read_hms(BufReader::new(File::open(dir.join(&entry.gt_heatmaps))?))?;
    let landmarks = read_landmarks_csv(BufReader::new(File::open(dir.join(&entry.landmarks))?))?;
    if backbone.len() != entry.frames {
        return Err(Error::shape(format!("{} frames in {}", entry.frames, entry.name), backbone.len()));
    }
    let sample = SequenceSample::new(landmarks, gt, backbone, entry.seed)?;
    let shape = &sample.gt_heatmaps[0];
    if (shape.landmarks(), shape.height(), shape.width()) != (manifest.landmarks, manifest.height, manifest.width) {
        return Err(Error::shape(
            format!("{}x{}x{}", manifest.landmarks, manifest.height, manifest.width),
            format!("{} in {}", shape.shape_string(), entry.name),
        ));
    }
    Ok(sample)
}

/// Loads every sequence of one split, in manifest order.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<SequenceSample>> {
    let manifest = read_manifest(dir)?;
    let samples = manifest
        .sequences
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_sequence(dir, &manifest, e))
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::Empty(format!("no {split:?} sequences in {}", dir.display())));
    }
    Ok(samples)
}
