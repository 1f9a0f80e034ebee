//! Per-frame feature sequences, labelled videos, and their on-disk formats.

mod io;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Matrix;

pub use io::{load_manifest, read_features, save_dataset, write_features, LoadOptions, ManifestEntry, ManifestFile};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

/// Shot length used when a manifest omits boundaries.
pub const DEFAULT_SHOT_LENGTH: usize = 8;

/// `T × D` per-frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    features: Matrix,
}

impl FeatureSequence {
    pub fn new(features: Matrix) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyInput("feature sequence needs at least one frame"));
        }
        if !features.is_finite() {
            return Err(Error::State("feature sequence contains non-finite values".into()));
        }
        Ok(Self { features })
    }

    /// Frame count `T`.
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.features
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.features.row(t)
    }

    /// Rows at `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        self.features.select_rows(indices)
    }

    /// Each nonzero row divided by its L2 norm. Returns the indices of zero
    /// rows, which pass through unchanged.
    pub fn l2_normalise(&self) -> (FeatureSequence, Vec<usize>) {
        let mut features = self.features.clone();
        let mut zero_rows = Vec::new();
        for t in 0..features.rows() {
            let row = features.row_mut(t);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                zero_rows.push(t);
            } else {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        (FeatureSequence { features }, zero_rows)
    }
}

/// Half-open frame range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Shot {
    pub start: usize,
    pub end: usize,
}

impl Shot {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl From<[usize; 2]> for Shot {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Shot> for [usize; 2] {
    fn from(s: Shot) -> Self {
        [s.start, s.end]
    }
}

/// Consecutive shots of `length` frames covering `[0, frames)`; the last may be shorter.
pub fn uniform_shots(frames: usize, length: usize) -> Vec<Shot> {
    let length = length.max(1);
    (0..frames)
        .step_by(length)
        .map(|s| Shot::new(s, (s + length).min(frames)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureSequence,
    /// Category index; absent for unlabelled videos.
    pub label: Option<usize>,
    pub shots: Vec<Shot>,
    pub human_summaries: Vec<Vec<usize>>,
}

impl VideoRecord {
    pub fn frames(&self) -> usize {
        self.features.len()
    }

    pub fn require_label(&self) -> Result<usize> {
        self.label
            .ok_or_else(|| Error::State(format!("video {} has no category label", self.id)))
    }
}

/// A loaded collection of videos over `categories`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub categories: Vec<String>,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.dim())
    }

    pub fn find(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Copy with every feature row L2-normalised; zero rows are reported as warnings.
    pub fn l2_normalised(&self) -> (Dataset, ValidationReport) {
        let mut report = ValidationReport::default();
        let videos = self
            .videos
            .iter()
            .map(|v| {
                let (features, zeros) = v.features.l2_normalise();
                if !zeros.is_empty() {
                    report.warn(&v.id, "features", format!("{} zero rows left unnormalised", zeros.len()));
                }
                VideoRecord {
                    features,
                    ..v.clone()
                }
            })
            .collect();
        (
            Dataset {
                categories: self.categories.clone(),
                videos,
            },
            report,
        )
    }

    /// Videos at the given indices, cloned.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            categories: self.categories.clone(),
            videos: indices.iter().map(|&i| self.videos[i].clone()).collect(),
        }
    }

    /// Checks every invariant; never fails, returns the findings.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let c = self.num_classes();
        let mut seen = std::collections::HashSet::new();
        let dim = self.feature_dim();
        for v in &self.videos {
            if !seen.insert(v.id.as_str()) {
                report.error(&v.id, "id", "duplicate video id");
            }
            if let Some(label) = v.label {
                if label >= c {
                    report.error(&v.id, "label", format!("label {label} out of range for {c} categories"));
                }
            }
            if Some(v.features.dim()) != dim {
                report.error(&v.id, "features", "feature dimension differs from the first video");
            }
            let t = v.frames();
            if let Err(msg) = check_partition(&v.shots, t) {
                report.error(&v.id, "shots", msg);
            }
            for (k, summary) in v.human_summaries.iter().enumerate() {
                if let Some(bad) = summary.iter().find(|&&f| f >= t) {
                    report.error(
                        &v.id,
                        "human_summaries",
                        format!("summary {k} has frame {bad} outside [0, {t})"),
                    );
                }
            }
        }
        report
    }
}

/// `Ok` when `shots` partition `[0, frames)` in order without gaps or overlap.
pub fn check_partition(shots: &[Shot], frames: usize) -> std::result::Result<(), String> {
    let mut cursor = 0;
    for (i, s) in shots.iter().enumerate() {
        if s.is_empty() {
            return Err(format!("shot {i} [{}, {}) is empty", s.start, s.end));
        }
        if s.start < cursor {
            return Err(format!("shot {i} [{}, {}) overlaps the previous shot", s.start, s.end));
        }
        if s.start > cursor {
            return Err(format!("gap before shot {i}: frames [{cursor}, {}) uncovered", s.start));
        }
        cursor = s.end;
    }
    if cursor != frames {
        return Err(format!("shots cover [0, {cursor}) but the video has {frames} frames"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub video_id: Option<String>,
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    fn push(&mut self, severity: Severity, video: Option<&str>, field: &str, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            severity,
            video_id: video.map(str::to_owned),
            field: field.to_owned(),
            message: message.into(),
        });
    }

    pub fn error(&mut self, video: &str, field: &str, message: impl Into<String>) {
        self.push(Severity::Error, Some(video), field, message);
    }

    pub fn warn(&mut self, video: &str, field: &str, message: impl Into<String>) {
        self.push(Severity::Warning, Some(video), field, message);
    }

    pub fn global_error(&mut self, field: &str, message: impl Into<String>) {
        self.push(Severity::Error, None, field, message);
    }

    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(|i| i.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.issues.extend(other.issues);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.issues {
            let sev = match i.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            let video = i.video_id.as_deref().unwrap_or("-");
            writeln!(f, "  {sev}: video {video}, field {}: {}", i.field, i.message)?;
        }
        Ok(())
    }
}

/// One cross-validation split; indices into `Dataset::videos`, ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` disjoint test folds covering the dataset, stratified by label.
///
/// Videos are grouped by label, shuffled within each group, then dealt
/// round-robin with the fold cursor carried across groups, so each fold gets
/// `⌊n_c/k⌋` or `⌈n_c/k⌉` videos of every category and fold sizes differ by at
/// most one.
pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > dataset.len() {
        return Err(Error::Config(format!(
            "{k} folds requested but the dataset has {} videos",
            dataset.len()
        )));
    }
    let mut rng = crate::seed::component_rng(seed, "folds");
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, v) in dataset.videos.iter().enumerate() {
        groups.entry(v.label).or_default().push(i);
    }
    let mut tests = vec![Vec::new(); k];
    let mut cursor = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            tests[cursor % k].push(i);
            cursor += 1;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..dataset.len()).filter(|i| test.binary_search(i).is_err()).collect();
            Fold { train, test }
        })
        .collect())
}
