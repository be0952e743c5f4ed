//! Labeled and unlabeled long-tailed corpora.
//!
//! The unlabeled corpus is split in two on purpose: [`UnlabeledPool`] holds
//! only feature vectors and is the sole type the training code accepts,
//! while the ground-truth labels of generated tasks live next to it in
//! [`UnlabeledSet`] and are only read by evaluation.

mod cifar;
mod profile;
mod splits;
mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub use cifar::{ingest_cifar10_binary, CIFAR10_CLASSES, CIFAR10_RECORD_BYTES};
pub use profile::{exponential_profile, lomax_draw, lomax_profile, ClassProfile, Lomax, ProfileKind};
pub use splits::{assign_splits, Split, SplitMode, SplitSpec};
pub use synth::{long_tailed_split, subsample_to_profile, synth_gaussian_task, unlabeled_counts, GeneratedTask, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Labeled corpus with per-class tallies kept in sync with its examples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    examples: Vec<LabeledExample>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl LabeledSet {
    pub fn new(examples: Vec<LabeledExample>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("labeled set needs at least one class".into()));
        }
        let dim = examples.first().map(|e| e.features.len());
        let mut class_counts = vec![0; num_classes];
        for (i, e) in examples.iter().enumerate() {
            if e.label >= num_classes {
                return Err(Error::Data(format!(
                    "example {i} has label {} but there are {num_classes} classes",
                    e.label
                )));
            }
            if Some(e.features.len()) != dim {
                return Err(Error::Data(format!("example {i} has a different feature width")));
            }
            if !e.features.iter().all(|v| v.is_finite()) {
                return Err(Error::Data(format!("example {i} has non-finite features")));
            }
            class_counts[e.label] += 1;
        }
        Ok(Self {
            examples,
            num_classes,
            class_counts,
        })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `n_j` per class.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.len())
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.examples[i].features
    }

    pub fn label(&self, i: usize) -> usize {
        self.examples[i].label
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// True when `n_i ≤ n_j` for every `i > j`.
    pub fn is_cardinality_sorted(&self) -> bool {
        self.class_counts.windows(2).all(|w| w[0] >= w[1])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_tagged(path, None)
    }

    /// Like [`save`](Self::save), recording the hash of the producing config.
    pub fn save_tagged(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let file = DataFile {
            config_hash: config_hash.map(str::to_string),
            num_classes: self.num_classes,
            labels: Some(self.labels()),
            features: self.examples.iter().map(|e| e.features.clone()).collect(),
        };
        fsutil::write_atomic(path, &serde_json::to_vec(&file)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: DataFile = serde_json::from_str(&fsutil::read_to_string(path)?)?;
        let labels = file
            .labels
            .ok_or_else(|| Error::Data(format!("{} carries no labels", path.display())))?;
        if labels.len() != file.features.len() {
            return Err(Error::shape("data file labels", file.features.len(), labels.len()));
        }
        let examples = file
            .features
            .into_iter()
            .zip(labels)
            .map(|(features, label)| LabeledExample { features, label })
            .collect();
        Self::new(examples, file.num_classes)
    }
}

/// Unlabeled feature vectors: everything training may see of `U`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledPool {
    examples: Vec<Vec<f64>>,
}

impl UnlabeledPool {
    pub fn new(examples: Vec<Vec<f64>>) -> Self {
        Self { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.examples[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.examples.iter().map(Vec::as_slice)
    }
}

/// Unlabeled corpus `U`, optionally with the ground truth of a generated
/// task kept for pseudo-label accuracy measurement.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledSet {
    pool: UnlabeledPool,
    hidden_labels: Option<Vec<usize>>,
}

impl UnlabeledSet {
    pub fn new(examples: Vec<Vec<f64>>, hidden_labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(h) = &hidden_labels {
            if h.len() != examples.len() {
                return Err(Error::shape("hidden labels", examples.len(), h.len()));
            }
        }
        Ok(Self {
            pool: UnlabeledPool::new(examples),
            hidden_labels,
        })
    }

    /// The training-facing view.
    pub fn pool(&self) -> &UnlabeledPool {
        &self.pool
    }

    /// `M`.
    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn hidden_labels(&self) -> Option<&[usize]> {
        self.hidden_labels.as_deref()
    }

    /// `m_j` per class, when ground truth is known.
    pub fn class_counts(&self, num_classes: usize) -> Option<Vec<usize>> {
        self.hidden_labels.as_ref().map(|h| {
            let mut c = vec![0; num_classes];
            for &y in h {
                c[y] += 1;
            }
            c
        })
    }

    pub fn save(&self, path: &Path, num_classes: usize) -> Result<()> {
        self.save_tagged(path, num_classes, None)
    }

    pub fn save_tagged(&self, path: &Path, num_classes: usize, config_hash: Option<&str>) -> Result<()> {
        let file = DataFile {
            config_hash: config_hash.map(str::to_string),
            num_classes,
            labels: self.hidden_labels.clone(),
            features: self.pool.examples.clone(),
        };
        fsutil::write_atomic(path, &serde_json::to_vec(&file)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: DataFile = serde_json::from_str(&fsutil::read_to_string(path)?)?;
        Self::new(file.features, file.labels)
    }
}

/// Pseudo labels `ŷ_i` for samples of an unlabeled pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabeledSet {
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl PseudoLabeledSet {
    pub fn new(ids: Vec<usize>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::shape("pseudo labels", ids.len(), labels.len()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!("pseudo label {y} out of range")));
        }
        Ok(Self { ids, labels, num_classes })
    }

    pub fn empty(num_classes: usize) -> Self {
        Self {
            ids: Vec::new(),
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

/// On-disk layout of a data file (JSON).
#[derive(Debug, Serialize, Deserialize)]
struct DataFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    num_classes: usize,
    labels: Option<Vec<usize>>,
    features: Vec<Vec<f64>>,
}

/// Structured description of a generated or ingested dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub profile: ClassProfile,
    pub labeled_counts: Vec<usize>,
    pub unlabeled_counts: Option<Vec<usize>>,
    pub test_counts: Vec<usize>,
    pub splits: SplitSpec,
    /// File name to content hash.
    pub files: std::collections::BTreeMap<String, String>,
}

impl DatasetManifest {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fsutil::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(label: usize) -> LabeledExample {
        LabeledExample { features: vec![label as f64, 1.0], label }
    }

    #[test]
    fn counts_track_examples() {
        let s = LabeledSet::new(vec![ex(0), ex(0), ex(1), ex(2), ex(0)], 3).unwrap();
        assert_eq!(s.class_counts(), &[3, 1, 1]);
        assert!(s.is_cardinality_sorted());
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn label_out_of_range_rejected() {
        assert!(LabeledSet::new(vec![ex(3)], 3).is_err());
    }

    #[test]
    fn unlabeled_counts_from_hidden() {
        let u = UnlabeledSet::new(vec![vec![0.0]; 3], Some(vec![1, 1, 0])).unwrap();
        assert_eq!(u.class_counts(2), Some(vec![1, 2]));
        let blind = UnlabeledSet::new(vec![vec![0.0]; 3], None).unwrap();
        assert_eq!(blind.class_counts(2), None);
    }

    #[test]
    fn data_files_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let s = LabeledSet::new(
            vec![LabeledExample { features: vec![0.1 + 0.2, -1e-300, 1.0 / 3.0], label: 1 }],
            2,
        )
        .unwrap();
        let p = dir.path().join("d.json");
        s.save(&p).unwrap();
        assert_eq!(LabeledSet::load(&p).unwrap(), s);

        let u = UnlabeledSet::new(vec![vec![std::f64::consts::PI]], Some(vec![0])).unwrap();
        let q = dir.path().join("u.json");
        u.save(&q, 2).unwrap();
        assert_eq!(UnlabeledSet::load(&q).unwrap(), u);
    }
}
