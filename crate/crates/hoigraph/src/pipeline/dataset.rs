//! Dataset file format: a JSON document holding the vocabulary, feature
//! dimension, the per-class training-instance table, and one record per
//! scene. Labels and verbs are written as names and resolved against the
//! header vocabulary at load time.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphrep::{BBox, Detection, GroundTruthHoi, Scene};
use crate::hoieval::{HoiClass, SplitTable};
use crate::kge::{GoldenSet, Triplet, Vocab};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Parsed, validated dataset ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub feature_dim: usize,
    pub splits: SplitTable,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    /// Deduplicated (person, verb, object) triplets over all ground truth.
    pub fn golden_set(&self) -> Result<GoldenSet> {
        GoldenSet::from_triplets(self.golden_occurrences(), &self.vocab)
    }

    /// Every ground-truth triplet occurrence, in scene order.
    pub fn golden_occurrences(&self) -> Vec<Triplet> {
        let mut out = Vec::new();
        for scene in &self.scenes {
            for gt in &scene.ground_truth {
                for &verb in &gt.verbs {
                    out.push(Triplet::new(self.vocab.person, verb, gt.object_label));
                }
            }
        }
        out
    }
}

/// Training-instance counts per interaction class over a scene list.
pub fn class_counts_from_scenes(scenes: &[Scene]) -> BTreeMap<HoiClass, u32> {
    let mut counts = BTreeMap::new();
    for scene in scenes {
        for gt in &scene.ground_truth {
            for &verb in &gt.verbs {
                *counts
                    .entry(HoiClass { object: gt.object_label, verb })
                    .or_insert(0u32) += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Serialize, Deserialize)]
struct FileVocab {
    objects: Vec<String>,
    verbs: Vec<String>,
    person: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileClassCount {
    object: String,
    verb: String,
    count: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileDetection {
    bbox: [f64; 4],
    score: f64,
    label: String,
    feature: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileGroundTruth {
    human_box: [f64; 4],
    object_box: [f64; 4],
    object_label: String,
    verbs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileScene {
    id: String,
    width: u32,
    height: u32,
    detections: Vec<FileDetection>,
    ground_truth: Vec<FileGroundTruth>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDataset {
    format_version: u32,
    vocab: FileVocab,
    feature_dim: usize,
    class_counts: Vec<FileClassCount>,
    scenes: Vec<FileScene>,
}

fn box_to_array(b: &BBox) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

fn box_from_array(a: &[f64; 4], context: &str) -> Result<BBox> {
    BBox::new(a[0], a[1], a[2], a[3])
        .map_err(|e| Error::Dataset(format!("{context}: {e}")))
}

fn check_bounds(b: &BBox, width: u32, height: u32, context: &str) -> Result<()> {
    if b.x2 > width as f64 || b.y2 > height as f64 {
        return Err(Error::Dataset(format!(
            "{context}: box [{}, {}, {}, {}] exceeds {width}x{height}",
            b.x1, b.y1, b.x2, b.y2
        )));
    }
    Ok(())
}

/// Serialize a dataset to its JSON file form.
pub fn dataset_to_json(dataset: &Dataset) -> Result<String> {
    let vocab = &dataset.vocab;
    let file = FileDataset {
        format_version: DATASET_FORMAT_VERSION,
        vocab: FileVocab {
            objects: vocab.objects.clone(),
            verbs: vocab.verbs.clone(),
            person: vocab.objects[vocab.person].clone(),
        },
        feature_dim: dataset.feature_dim,
        class_counts: dataset
            .splits
            .classes()
            .map(|(class, &count)| FileClassCount {
                object: vocab.objects[class.object].clone(),
                verb: vocab.verbs[class.verb].clone(),
                count,
            })
            .collect(),
        scenes: dataset
            .scenes
            .iter()
            .map(|s| FileScene {
                id: s.id.clone(),
                width: s.width,
                height: s.height,
                detections: s
                    .detections
                    .iter()
                    .map(|d| FileDetection {
                        bbox: box_to_array(&d.bbox),
                        score: d.score,
                        label: vocab.objects[d.label].clone(),
                        feature: d.feature.clone(),
                    })
                    .collect(),
                ground_truth: s
                    .ground_truth
                    .iter()
                    .map(|gt| FileGroundTruth {
                        human_box: box_to_array(&gt.human_box),
                        object_box: box_to_array(&gt.object_box),
                        object_label: vocab.objects[gt.object_label].clone(),
                        verbs: gt.verbs.iter().map(|&v| vocab.verbs[v].clone()).collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Dataset(format!("serialize: {e}")))
}

/// Parse and validate a dataset from its JSON file form.
pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let file: FileDataset =
        serde_json::from_str(text).map_err(|e| Error::Dataset(format!("parse: {e}")))?;
    if file.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset format version {} (expected {DATASET_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let person = file
        .vocab
        .objects
        .iter()
        .position(|o| *o == file.vocab.person)
        .ok_or_else(|| {
            Error::Dataset(format!("person label `{}` missing from objects", file.vocab.person))
        })?;
    let vocab = Vocab::new(file.vocab.objects, file.vocab.verbs, person)
        .map_err(|e| Error::Dataset(format!("header vocab: {e}")))?;
    if file.feature_dim == 0 {
        return Err(Error::Dataset("feature_dim must be at least 1".into()));
    }

    let mut counts = BTreeMap::new();
    for (i, c) in file.class_counts.iter().enumerate() {
        let object = vocab.object_index(&c.object).ok_or_else(|| {
            Error::Dataset(format!("class count {i}: unknown object name `{}`", c.object))
        })?;
        let verb = vocab.verb_index(&c.verb).ok_or_else(|| {
            Error::Dataset(format!("class count {i}: unknown verb name `{}`", c.verb))
        })?;
        counts.insert(HoiClass { object, verb }, c.count);
    }

    let mut scenes = Vec::with_capacity(file.scenes.len());
    for (si, fs) in file.scenes.iter().enumerate() {
        let ctx = |what: &str| format!("scene {si} ({}), {what}", fs.id);
        if fs.width == 0 || fs.height == 0 {
            return Err(Error::Dataset(ctx("zero image dimension")));
        }
        let mut detections = Vec::with_capacity(fs.detections.len());
        for (di, fd) in fs.detections.iter().enumerate() {
            let label = vocab.object_index(&fd.label).ok_or_else(|| {
                Error::Dataset(ctx(&format!("detection {di}: unknown object name `{}`", fd.label)))
            })?;
            if !(0.0..=1.0).contains(&fd.score) {
                return Err(Error::Dataset(ctx(&format!(
                    "detection {di}: score {} outside [0, 1]",
                    fd.score
                ))));
            }
            if fd.feature.len() != file.feature_dim {
                return Err(Error::Dataset(ctx(&format!(
                    "detection {di}: feature length {} != {}",
                    fd.feature.len(),
                    file.feature_dim
                ))));
            }
            if fd.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(ctx(&format!("detection {di}: non-finite feature"))));
            }
            let bbox = box_from_array(&fd.bbox, &ctx(&format!("detection {di}")))?;
            check_bounds(&bbox, fs.width, fs.height, &ctx(&format!("detection {di}")))?;
            detections.push(Detection { bbox, score: fd.score, label, feature: fd.feature.clone() });
        }
        let mut ground_truth = Vec::with_capacity(fs.ground_truth.len());
        for (gi, fg) in fs.ground_truth.iter().enumerate() {
            let object_label = vocab.object_index(&fg.object_label).ok_or_else(|| {
                Error::Dataset(ctx(&format!(
                    "ground truth {gi}: unknown object name `{}`",
                    fg.object_label
                )))
            })?;
            let mut verbs = Vec::with_capacity(fg.verbs.len());
            for name in &fg.verbs {
                let verb = vocab.verb_index(name).ok_or_else(|| {
                    Error::Dataset(ctx(&format!("ground truth {gi}: unknown verb name `{name}`")))
                })?;
                verbs.push(verb);
            }
            // Verb lists are sets.
            verbs.sort_unstable();
            verbs.dedup();
            let human_box = box_from_array(&fg.human_box, &ctx(&format!("ground truth {gi} human")))?;
            let object_box = box_from_array(&fg.object_box, &ctx(&format!("ground truth {gi} object")))?;
            check_bounds(&human_box, fs.width, fs.height, &ctx(&format!("ground truth {gi} human")))?;
            check_bounds(&object_box, fs.width, fs.height, &ctx(&format!("ground truth {gi} object")))?;
            ground_truth.push(GroundTruthHoi { human_box, object_box, object_label, verbs });
        }
        scenes.push(Scene {
            id: fs.id.clone(),
            width: fs.width,
            height: fs.height,
            detections,
            ground_truth,
        });
    }

    Ok(Dataset {
        vocab,
        feature_dim: file.feature_dim,
        splits: SplitTable::new(counts),
        scenes,
    })
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut text = dataset_to_json(dataset)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("read {}: {e}", path.display())))?;
    dataset_from_json(&text)
}
