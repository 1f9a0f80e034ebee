//! Python bindings for the `rlsum` core crate.
//!
//! Configuration is passed as keyword arguments that overlay the Rust
//! defaults; nested sections (`qnet`, `env`, `rewards`) take dicts. Logs,
//! summaries and reports come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use ::rlsum as core;
use core::dataset::{self, LoadOptions, SyntheticConfig};
use core::env::{Action, FrameSet};
use core::qnet::ActionValues;

fn to_py(err: core::Error) -> PyErr {
    match err {
        core::Error::Io { .. } => PyIOError::new_err(err.to_string()),
        core::Error::Config(_)
        | core::Error::Validation(_)
        | core::Error::Dimension { .. }
        | core::Error::EmptyInput(_)
        | core::Error::OutOfRange { .. }
        | core::Error::Format { .. } => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn json_err(err: serde_json::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// Recursively overlays `patch` on `base`, rejecting keys `base` lacks.
fn overlay(base: &mut Value, patch: Value, path: &str) -> PyResult<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| PyValueError::new_err(format!("unknown option `{here}`")))?;
                overlay(slot, v, &here)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn config_from<T: Serialize + DeserializeOwned>(base: T, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(kwargs) = kwargs else { return Ok(base) };
    let py = kwargs.py();
    let text: String = py.import("json")?.call_method1("dumps", (kwargs,))?.extract()?;
    let patch: Value = serde_json::from_str(&text).map_err(json_err)?;
    let mut value = serde_json::to_value(base).map_err(json_err)?;
    overlay(&mut value, patch, "")?;
    serde_json::from_value(value).map_err(json_err)
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_dict<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(json_err)
}

fn values_dict(py: Python<'_>, q: &ActionValues) -> PyResult<Py<PyAny>> {
    let d = PyDict::new(py);
    d.set_item("q_discard", q.q_discard)?;
    d.set_item("q_keep", q.q_keep)?;
    d.set_item("v", q.v)?;
    d.set_item("a_discard", q.a_discard)?;
    d.set_item("a_keep", q.a_keep)?;
    d.set_item("keep_probability", q.keep_probability())?;
    Ok(d.into_any().unbind())
}

/// A collection of labelled feature sequences.
#[pyclass(module = "rlsum")]
struct Dataset {
    inner: dataset::Dataset,
}

impl Dataset {
    fn video(&self, index: usize) -> PyResult<&dataset::VideoRecord> {
        self.inner
            .videos
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("video index {index} out of range ({})", self.inner.len())))
    }
}

#[pymethods]
impl Dataset {
    /// Loads a manifest; raises `ValueError` listing every validation error.
    #[staticmethod]
    #[pyo3(signature = (manifest, shot_length=None))]
    fn load(manifest: PathBuf, shot_length: Option<usize>) -> PyResult<Self> {
        let mut options = LoadOptions::default();
        if let Some(len) = shot_length {
            options.default_shot_length = len;
        }
        let (inner, report) = dataset::load_manifest(&manifest, options).map_err(to_py)?;
        if report.has_errors() {
            return Err(to_py(core::Error::Validation(report)));
        }
        Ok(Self { inner })
    }

    /// Generates the synthetic benchmark; keyword arguments override
    /// `classes`, `per_class`, `frames`, `dim`, `signal_fraction`,
    /// `noise_level`, `shot_length` and `seed`.
    #[staticmethod]
    #[pyo3(signature = (**kwargs))]
    fn synthetic(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let config = config_from(SyntheticConfig::default(), kwargs)?;
        let data = dataset::generate_synthetic(&config).map_err(to_py)?;
        Ok(Self { inner: data.dataset })
    }

    /// Writes features and a manifest into `dir`; returns the manifest path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        dataset::save_dataset(&self.inner, &dir).map_err(to_py)
    }

    /// Copy with every frame scaled to unit length.
    fn normalised(&self) -> Self {
        Self {
            inner: self.inner.l2_normalised().0,
        }
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("video index {i} out of range ({})", self.inner.len())));
        }
        Ok(Self {
            inner: self.inner.subset(&indices),
        })
    }

    /// Label-stratified `(train, test)` index pairs.
    #[pyo3(signature = (k=5, seed=0))]
    fn folds(&self, k: usize, seed: u64) -> PyResult<Vec<(Vec<usize>, Vec<usize>)>> {
        let folds = dataset::make_folds(&self.inner, k, seed).map_err(to_py)?;
        Ok(folds.into_iter().map(|f| (f.train, f.test)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(videos={}, classes={}, feature_dim={:?})",
            self.inner.len(),
            self.inner.num_classes(),
            self.inner.feature_dim()
        )
    }

    #[getter]
    fn categories(&self) -> Vec<String> {
        self.inner.categories.clone()
    }

    #[getter]
    fn video_ids(&self) -> Vec<String> {
        self.inner.videos.iter().map(|v| v.id.clone()).collect()
    }

    #[getter]
    fn feature_dim(&self) -> Option<usize> {
        self.inner.feature_dim()
    }

    /// Frame features of one video as a list of rows.
    fn features(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        let v = self.video(index)?;
        Ok((0..v.frames()).map(|t| v.features.frame(t).to_vec()).collect())
    }

    fn label(&self, index: usize) -> PyResult<Option<usize>> {
        Ok(self.video(index)?.label)
    }

    /// Half-open `(start, end)` frame ranges.
    fn shots(&self, index: usize) -> PyResult<Vec<(usize, usize)>> {
        Ok(self.video(index)?.shots.iter().map(|s| (s.start, s.end)).collect())
    }

    fn human_summaries(&self, index: usize) -> PyResult<Vec<Vec<usize>>> {
        Ok(self.video(index)?.human_summaries.clone())
    }
}

/// Frozen sequence classifier that scores summaries.
#[pyclass(module = "rlsum")]
struct Classifier {
    inner: core::classifier::ClassifierModel,
}

#[pymethods]
impl Classifier {
    /// Trains on every labelled video in `dataset`; returns the model and
    /// per-epoch logs. Keyword arguments override `omega`,
    /// `learning_rate`, `epochs`, `embed_size`, `hidden_size` and `seed`.
    #[staticmethod]
    #[pyo3(signature = (dataset, **kwargs))]
    fn train(py: Python<'_>, dataset: &Dataset, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<(Self, Py<PyAny>)> {
        let config = config_from(core::classifier::ClassifierConfig::default(), kwargs)?;
        let (inner, log) = core::classifier::train_classifier(&dataset.inner, &config).map_err(to_py)?;
        Ok((Self { inner }, to_dict(py, &log)?))
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: core::classifier::ClassifierModel::load(&dir).map_err(to_py)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(to_py)
    }

    /// Class probabilities for video `index`, restricted to `kept` frames
    /// when given.
    #[pyo3(signature = (dataset, index, kept=None))]
    fn probabilities(&self, dataset: &Dataset, index: usize, kept: Option<Vec<usize>>) -> PyResult<Vec<f64>> {
        let v = dataset.video(index)?;
        match kept {
            Some(k) => self.inner.classify(&v.features, &k),
            None => self.inner.classify_all(&v.features),
        }
        .map_err(to_py)
    }

    #[pyo3(signature = (dataset, index, kept=None))]
    fn predict(&self, dataset: &Dataset, index: usize, kept: Option<Vec<usize>>) -> PyResult<usize> {
        let probs = self.probabilities(dataset, index, kept)?;
        Ok(core::classifier::argmax_label(&probs))
    }

    fn accuracy(&self, dataset: &Dataset) -> PyResult<f64> {
        core::classifier::accuracy(&self.inner, &dataset.inner).map_err(to_py)
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }
}

/// Dueling Q-network over keep/discard actions.
#[pyclass(module = "rlsum")]
struct QNetwork {
    inner: core::qnet::QNetwork,
}

#[pymethods]
impl QNetwork {
    #[new]
    #[pyo3(signature = (feature_dim, embed_size=256, hidden_size=256, seed=0))]
    fn new(feature_dim: usize, embed_size: usize, hidden_size: usize, seed: u64) -> PyResult<Self> {
        let config = core::qnet::QNetConfig {
            embed_size,
            hidden_size,
            seed,
        };
        Ok(Self {
            inner: core::qnet::QNetwork::new(feature_dim, &config).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: core::qnet::QNetwork::load(&dir).map_err(to_py)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(to_py)
    }

    /// Action values at `attention` given the `retained` frames (all
    /// frames when omitted).
    #[pyo3(signature = (dataset, index, attention, retained=None))]
    fn q_values(
        &self,
        py: Python<'_>,
        dataset: &Dataset,
        index: usize,
        attention: usize,
        retained: Option<Vec<usize>>,
    ) -> PyResult<Py<PyAny>> {
        let v = dataset.video(index)?;
        let set = match retained {
            Some(r) => FrameSet::from_indices(v.frames(), &r).map_err(to_py)?,
            None => FrameSet::full(v.frames()),
        };
        let q = self.inner.q_at(&set, attention, &v.features).map_err(to_py)?;
        values_dict(py, &q)
    }

    /// Per-frame keep scores from a greedy episode.
    #[pyo3(signature = (dataset, index, **kwargs))]
    fn frame_scores(&self, dataset: &Dataset, index: usize, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<f64>> {
        let config = config_from(core::summary::SummaryConfig::default(), kwargs)?;
        core::summary::score_frames(&self.inner, dataset.video(index)?, &config.env).map_err(to_py)
    }

    /// Keyshot summary of one video; keyword arguments override
    /// `budget_fraction`, `selection` and `env`.
    #[pyo3(signature = (dataset, index, **kwargs))]
    fn summarize(&self, py: Python<'_>, dataset: &Dataset, index: usize, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
        let config = config_from(core::summary::SummaryConfig::default(), kwargs)?;
        let s = core::summary::summarize(&self.inner, dataset.video(index)?, &config).map_err(to_py)?;
        to_dict(py, &s)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.meta().feature_dim
    }
}

/// Trains a summarisation agent; returns the network and the episode log.
#[pyfunction]
#[pyo3(signature = (dataset, classifier=None, **kwargs))]
fn train_dqsn(
    py: Python<'_>,
    dataset: &Dataset,
    classifier: Option<PyRef<'_, Classifier>>,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<(QNetwork, Py<PyAny>)> {
    let config = config_from(core::trainer::TrainerConfig::default(), kwargs)?;
    let clf = classifier.as_ref().map(|c| &c.inner);
    let out = core::trainer::train_dqsn(&dataset.inner, clf, &config, |_, _, _| Ok(())).map_err(to_py)?;
    Ok((QNetwork { inner: out.network }, to_dict(py, &out.log)?))
}

/// F-scores summaries (dicts as returned by `QNetwork.summarize`) per fold.
#[pyfunction]
fn evaluate_summaries(
    py: Python<'_>,
    dataset: &Dataset,
    summaries: &Bound<'_, PyAny>,
    folds: Vec<(Vec<usize>, Vec<usize>)>,
) -> PyResult<Py<PyAny>> {
    let summaries: Vec<core::summary::Summary> = from_dict(summaries)?;
    let folds: Vec<dataset::Fold> = folds.into_iter().map(|(train, test)| dataset::Fold { train, test }).collect();
    let report = core::summary::evaluate_summaries(&dataset.inner, &summaries, &folds).map_err(to_py)?;
    to_dict(py, &report)
}

/// `(q_discard, q_keep)` from a value and two advantages.
#[pyfunction]
fn dueling_combine(v: f64, a_discard: f64, a_keep: f64) -> (f64, f64) {
    core::qnet::dueling_combine(v, a_discard, a_keep)
}

/// Double-Q regression target from `(q_discard, q_keep)` pairs.
#[pyfunction]
fn double_q_target(reward: f64, done: bool, gamma: f64, online_next: (f64, f64), target_next: (f64, f64)) -> f64 {
    let av = |(d, k): (f64, f64)| ActionValues {
        q_discard: d,
        q_keep: k,
        v: 0.5 * (d + k),
        a_discard: 0.5 * (d - k),
        a_keep: 0.5 * (k - d),
    };
    core::trainer::double_q_target(reward, done, gamma, &av(online_next), &av(target_next))
}

#[pyfunction]
fn reward_global(predicted: usize, truth: usize) -> f64 {
    core::rewards::reward_global(predicted, truth, &core::rewards::RewardConfig::default())
}

#[pyfunction]
#[pyo3(signature = (action, rank_before, rank_after, eta=0.15))]
fn reward_local(action: usize, rank_before: usize, rank_after: usize, eta: f64) -> PyResult<f64> {
    let action = Action::from_index(action).map_err(to_py)?;
    Ok(core::rewards::reward_local(action, rank_before, rank_after, eta))
}

/// Diversity plus representativeness of `kept` rows of `features`.
#[pyfunction]
fn reward_dr(features: Vec<Vec<f64>>, kept: Vec<usize>) -> PyResult<f64> {
    let m = core::neural::Matrix::from_rows(&features).map_err(to_py)?;
    let seq = dataset::FeatureSequence::new(m).map_err(to_py)?;
    core::rewards::reward_dr(&seq, &kept).map_err(to_py)
}

/// Exact 0/1 knapsack over shots; returns selected shot indices.
#[pyfunction]
fn select_shots(scores: Vec<f64>, lengths: Vec<usize>, capacity: usize) -> PyResult<Vec<usize>> {
    core::summary::select_shots(&scores, &lengths, capacity).map_err(to_py)
}

#[pyfunction]
fn f_score(machine: Vec<usize>, human: Vec<usize>) -> f64 {
    core::summary::f_score(&machine, &human)
}

#[pymodule]
fn rlsum(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Classifier>()?;
    m.add_class::<QNetwork>()?;
    m.add_function(wrap_pyfunction!(train_dqsn, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_summaries, m)?)?;
    m.add_function(wrap_pyfunction!(dueling_combine, m)?)?;
    m.add_function(wrap_pyfunction!(double_q_target, m)?)?;
    m.add_function(wrap_pyfunction!(reward_global, m)?)?;
    m.add_function(wrap_pyfunction!(reward_local, m)?)?;
    m.add_function(wrap_pyfunction!(reward_dr, m)?)?;
    m.add_function(wrap_pyfunction!(select_shots, m)?)?;
    m.add_function(wrap_pyfunction!(f_score, m)?)?;
    Ok(())
}
