use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{uniform_shots, Dataset, FeatureSequence, Shot, ValidationReport, VideoRecord, DEFAULT_SHOT_LENGTH};
use crate::error::{Error, Result};
use crate::neural::Matrix;

const MAGIC: &[u8; 4] = b"RLSF";
const FORMAT_VERSION: u32 = 1;

/// Writes features as `f32`; values must be `f32`-representable for an exact round trip.
pub fn write_features(path: &Path, features: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 4 * features.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(features.cols() as u64).to_le_bytes());
    for &v in features.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 24 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(24))
        .ok_or_else(|| bad(format!("implausible shape {rows}x{cols}")))?;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for {rows}x{cols}, found {}", bytes.len())));
    }
    let data = bytes[24..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub features_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<Vec<Shot>>,
    #[serde(default)]
    pub human_summaries: Vec<Vec<usize>>,
}

/// The JSON manifest document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub categories: Vec<String>,
    pub videos: Vec<ManifestEntry>,
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub default_shot_length: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            default_shot_length: DEFAULT_SHOT_LENGTH,
        }
    }
}

/// Loads a manifest and its feature files. Any invariant breach fails with
/// [`Error::Validation`]; warnings come back alongside the dataset.
pub fn load_manifest(path: &Path, options: LoadOptions) -> Result<(Dataset, ValidationReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut report = ValidationReport::default();
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in manifest.videos {
        let feature_path = base.join(&entry.features_path);
        let features = match read_features(&feature_path).and_then(FeatureSequence::new) {
            Ok(f) => f,
            Err(e) => {
                report.error(&entry.id, "features_path", e.to_string());
                continue;
            }
        };
        let shots = match entry.shots {
            Some(s) => s,
            None => {
                report.warn(
                    &entry.id,
                    "shots",
                    format!("no shot boundaries; using uniform {}-frame shots", options.default_shot_length),
                );
                uniform_shots(features.len(), options.default_shot_length)
            }
        };
        let (_, zeros) = features.l2_normalise();
        if !zeros.is_empty() {
            report.warn(&entry.id, "features", format!("{} all-zero frames", zeros.len()));
        }
        videos.push(VideoRecord {
            id: entry.id,
            features,
            label: entry.label,
            shots,
            human_summaries: entry.human_summaries,
        });
    }
    let dataset = Dataset {
        categories: manifest.categories,
        videos,
    };
    report.merge(dataset.validate());
    if report.has_errors() {
        return Err(Error::Validation(report));
    }
    Ok((dataset, report))
}

/// Writes `manifest.json` and one `features/<id>.rlsf` per video under `dir`.
/// Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let feature_dir = dir.join("features");
    std::fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for v in &dataset.videos {
        let rel = PathBuf::from("features").join(format!("{}.rlsf", v.id));
        write_features(&dir.join(&rel), v.features.matrix())?;
        entries.push(ManifestEntry {
            id: v.id.clone(),
            features_path: rel,
            label: v.label,
            shots: Some(v.shots.clone()),
            human_summaries: v.human_summaries.clone(),
        });
    }
    let manifest = ManifestFile {
        categories: dataset.categories.clone(),
        videos: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
