//! Companion sequence classifier: embedding + bidirectional GRU + temporal
//! average pooling + softmax over categories.
//!
//! Once trained it is frozen and used to classify partial summaries; the same
//! network classifies any ordered subset of a video's frames.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureSequence};
use crate::error::{Error, Result};
use crate::neural::{
    smoothed_cross_entropy, softmax, AdamConfig, AdamState, Dense, EncoderTrace, Matrix, ParameterSet,
    SequenceEncoder,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Label-smoothing weight.
    pub omega: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            omega: 0.1,
            learning_rate: 1e-4,
            epochs: 30,
            embed_size: 256,
            hidden_size: 256,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.omega) {
            return Err(Error::Config(format!("omega {} not in [0, 1)", self.omega)));
        }
        if self.learning_rate <= 0.0 || self.embed_size == 0 || self.hidden_size == 0 {
            return Err(Error::Config("classifier sizes and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Checkpoint sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    #[serde(rename = "C")]
    pub classes: usize,
    pub feature_dim: usize,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub omega: f64,
    pub seed: u64,
    pub category_names: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ClassifierModel {
    params: ParameterSet,
    encoder: SequenceEncoder,
    output: Dense,
    meta: ClassifierMeta,
    frozen: bool,
}

/// Checks that `subset` is non-empty, strictly ascending and within `frames`.
pub(crate) fn check_subset(subset: &[usize], frames: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::EmptyInput("frame subset is empty"));
    }
    if let Some(w) = subset.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::State(format!("frame subset not strictly ascending at {} -> {}", w[0], w[1])));
    }
    let last = *subset.last().unwrap();
    if last >= frames {
        return Err(Error::OutOfRange {
            context: "frame subset",
            index: last,
            bound: frames,
        });
    }
    Ok(())
}

/// 1 + number of categories ranked before `y`: strictly more probable, or
/// equally probable with a lower index.
pub fn rank_of_true(probs: &[f64], y: usize) -> Result<usize> {
    let py = *probs.get(y).ok_or(Error::OutOfRange {
        context: "true category",
        index: y,
        bound: probs.len(),
    })?;
    Ok(1 + probs
        .iter()
        .enumerate()
        .filter(|&(k, &p)| p > py || (p == py && k < y))
        .count())
}

/// Argmax with ties resolved toward the lowest index.
pub fn argmax_label(probs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = k;
        }
    }
    best
}

struct Forward {
    encoder: EncoderTrace,
    pooled: Matrix,
    probs: Vec<f64>,
}

impl ClassifierModel {
    /// Fresh model. The output layer starts at zero, so an untrained model
    /// predicts the uniform distribution.
    pub fn new(feature_dim: usize, category_names: Vec<String>, config: &ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let classes = category_names.len();
        if classes == 0 {
            return Err(Error::Config("classifier needs at least one category".into()));
        }
        let mut rng = crate::seed::component_rng(config.seed, "classifier.init");
        let mut params = ParameterSet::new();
        let encoder = SequenceEncoder::new(&mut params, feature_dim, config.embed_size, config.hidden_size, &mut rng)?;
        let output = Dense::zeroed(&mut params, "out", 2 * config.hidden_size, classes)?;
        Ok(Self {
            params,
            encoder,
            output,
            meta: ClassifierMeta {
                classes,
                feature_dim,
                embedding_size: config.embed_size,
                hidden_size: config.hidden_size,
                omega: config.omega,
                seed: config.seed,
                category_names,
            },
            frozen: false,
        })
    }

    pub fn from_parts(params: ParameterSet, meta: ClassifierMeta, frozen: bool) -> Result<Self> {
        let encoder = SequenceEncoder::bind(&params)?;
        let output = Dense::bind(&params, "out")?;
        if output.output_size(&params) != meta.classes
            || encoder.feature_dim(&params) != meta.feature_dim
            || encoder.hidden_size(&params) != meta.hidden_size
        {
            return Err(Error::dim(
                "classifier checkpoint",
                format!("C={} D={} H={}", meta.classes, meta.feature_dim, meta.hidden_size),
                format!(
                    "C={} D={} H={}",
                    output.output_size(&params),
                    encoder.feature_dim(&params),
                    encoder.hidden_size(&params)
                ),
            ));
        }
        Ok(Self {
            params,
            encoder,
            output,
            meta,
            frozen,
        })
    }

    pub fn classes(&self) -> usize {
        self.meta.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.meta.feature_dim
    }

    pub fn meta(&self) -> &ClassifierMeta {
        &self.meta
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Mutable parameter access; refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParameterSet> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.params)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn forward(&self, input: Matrix) -> Result<Forward> {
        if input.cols() != self.meta.feature_dim {
            return Err(Error::dim("classifier input", self.meta.feature_dim, input.cols()));
        }
        let encoder = self.encoder.forward(&self.params, input)?;
        let out = encoder.output();
        let mut pooled = Matrix::zeros(1, out.cols());
        for t in 0..out.rows() {
            crate::neural::matrix::axpy(1.0, out.row(t), pooled.as_mut_slice());
        }
        pooled.scale(1.0 / out.rows() as f64);
        let logits = self.output.forward(&self.params, &pooled)?;
        let probs = softmax(logits.as_slice());
        Ok(Forward {
            encoder,
            pooled,
            probs,
        })
    }

    /// Category probabilities for the retained frames `subset` (ascending) of `seq`.
    pub fn classify(&self, seq: &FeatureSequence, subset: &[usize]) -> Result<Vec<f64>> {
        check_subset(subset, seq.len())?;
        Ok(self.forward(seq.gather(subset))?.probs)
    }

    pub fn classify_all(&self, seq: &FeatureSequence) -> Result<Vec<f64>> {
        Ok(self.forward(seq.matrix().clone())?.probs)
    }

    pub fn predict_label(&self, seq: &FeatureSequence, subset: &[usize]) -> Result<usize> {
        Ok(argmax_label(&self.classify(seq, subset)?))
    }

    /// Forward, smoothed cross-entropy, and gradient accumulation for one
    /// sequence. Returns the loss and whether the prediction was correct.
    pub fn accumulate_gradients(&mut self, input: Matrix, label: usize, omega: f64) -> Result<(f64, bool)> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        let fwd = self.forward(input)?;
        let lg = smoothed_cross_entropy(&fwd.probs, label, omega)?;
        let d_logits = Matrix::row_vector(&lg.grad);
        let d_pooled = self.output.backward(&mut self.params, &fwd.pooled, &d_logits);
        let t_len = fwd.encoder.output().rows();
        let mut d_out = Matrix::zeros(t_len, d_pooled.cols());
        let scale = 1.0 / t_len as f64;
        for t in 0..t_len {
            for (d, g) in d_out.row_mut(t).iter_mut().zip(d_pooled.as_slice()) {
                *d = g * scale;
            }
        }
        self.encoder.backward(&mut self.params, &fwd.encoder, &d_out);
        Ok((lg.loss, argmax_label(&fwd.probs) == label))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.params.save(&dir.join("classifier.rlsn"))?;
        let sidecar = dir.join("classifier.json");
        let text = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
    }

    /// Loads a checkpoint written by [`ClassifierModel::save`]; the result is frozen.
    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar = dir.join("classifier.json");
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: ClassifierMeta = serde_json::from_str(&text)?;
        let params = ParameterSet::load(&dir.join("classifier.rlsn"))?;
        Self::from_parts(params, meta, true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Trains on every labelled video of `train` (one video per update, order
/// reshuffled every epoch) and returns the frozen model.
pub fn train_classifier(train: &Dataset, config: &ClassifierConfig) -> Result<(ClassifierModel, Vec<ClassifierEpoch>)> {
    config.validate()?;
    let classes = train.num_classes();
    let mut counts = vec![0usize; classes];
    for v in &train.videos {
        let y = v.require_label()?;
        if y >= classes {
            return Err(Error::OutOfRange {
                context: "training label",
                index: y,
                bound: classes,
            });
        }
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!(
            "category {c} ({}) has no training videos",
            train.categories[c]
        )));
    }
    let dim = train.feature_dim().ok_or(Error::EmptyInput("training split is empty"))?;
    let mut model = ClassifierModel::new(dim, train.categories.clone(), config)?;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = crate::seed::component_rng(config.seed, "classifier.shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut correct = 0;
        for &i in &order {
            let v = &train.videos[i];
            model.params.zero_grad();
            let (loss, ok) = model.accumulate_gradients(v.features.matrix().clone(), v.label.unwrap(), config.omega)?;
            adam.step(&mut model.params)?;
            total += loss;
            correct += usize::from(ok);
        }
        let entry = ClassifierEpoch {
            epoch,
            mean_loss: total / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
        };
        log::debug!("classifier epoch {epoch}: loss {:.4} acc {:.3}", entry.mean_loss, entry.train_accuracy);
        log.push(entry);
    }
    model.freeze();
    Ok((model, log))
}

/// Fraction of labelled videos whose full sequence is classified correctly.
pub fn accuracy(model: &ClassifierModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for v in &data.videos {
        let probs = model.classify_all(&v.features)?;
        correct += usize::from(argmax_label(&probs) == v.require_label()?);
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{uniform_shots, VideoRecord};

    fn tiny_config() -> ClassifierConfig {
        ClassifierConfig {
            embed_size: 4,
            hidden_size: 3,
            learning_rate: 1e-2,
            epochs: 40,
            seed: 3,
            ..ClassifierConfig::default()
        }
    }

    fn seq(rows: &[Vec<f64>]) -> FeatureSequence {
        FeatureSequence::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn rank_examples() {
        let p = [0.1, 0.7, 0.2];
        assert_eq!(rank_of_true(&p, 1).unwrap(), 1);
        assert_eq!(rank_of_true(&p, 0).unwrap(), 3);
        let u = [0.25; 4];
        for y in 0..4 {
            assert_eq!(rank_of_true(&u, y).unwrap(), y + 1);
        }
        assert!(rank_of_true(&p, 3).is_err());
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_label(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax_label(&[0.25; 4]), 0);
    }

    #[test]
    fn untrained_model_is_uniform() {
        let m = ClassifierModel::new(3, vec!["a".into(), "b".into(), "c".into(), "d".into()], &tiny_config()).unwrap();
        let s = seq(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        assert_eq!(m.classify(&s, &[0, 1]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn subset_rules() {
        let m = ClassifierModel::new(2, vec!["a".into(), "b".into()], &tiny_config()).unwrap();
        let s = seq(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert!(matches!(m.classify(&s, &[]), Err(Error::EmptyInput(_))));
        assert!(m.classify(&s, &[1, 0]).is_err());
        assert!(m.classify(&s, &[0, 3]).is_err());
        assert_eq!(m.classify(&s, &[0, 1, 2]).unwrap(), m.classify_all(&s).unwrap());
    }

    #[test]
    fn memorises_two_videos_and_freezes() {
        let mk = |id: &str, label, rows: &[Vec<f64>]| VideoRecord {
            id: id.into(),
            features: seq(rows),
            label: Some(label),
            shots: uniform_shots(rows.len(), 8),
            human_summaries: vec![],
        };
        let data = Dataset {
            categories: vec!["a".into(), "b".into()],
            videos: vec![
                mk("x", 0, &[vec![1.0, 0.0], vec![0.9, 0.1]]),
                mk("y", 1, &[vec![0.0, 1.0], vec![0.2, 0.8], vec![0.1, 0.9]]),
            ],
        };
        let (mut model, log) = train_classifier(&data, &tiny_config()).unwrap();
        assert_eq!(log.len(), 40);
        assert_eq!(log.last().unwrap().train_accuracy, 1.0);
        assert!(model.is_frozen());
        let input = data.videos[0].features.matrix().clone();
        assert!(matches!(model.accumulate_gradients(input, 0, 0.1), Err(Error::Frozen)));
        assert!(matches!(model.params_mut(), Err(Error::Frozen)));
    }

    #[test]
    fn empty_category_rejected() {
        let data = Dataset {
            categories: vec!["a".into(), "b".into()],
            videos: vec![VideoRecord {
                id: "x".into(),
                features: seq(&[vec![1.0, 0.0]]),
                label: Some(0),
                shots: uniform_shots(1, 8),
                human_summaries: vec![],
            }],
        };
        assert!(matches!(train_classifier(&data, &tiny_config()), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ClassifierModel::new(3, vec!["a".into(), "b".into()], &tiny_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("classifier.json")).unwrap()).unwrap();
        assert_eq!(sidecar["C"], 2);
        let back = ClassifierModel::load(dir.path()).unwrap();
        assert!(back.is_frozen());
        assert_eq!(back.params().to_bytes(), m.params().to_bytes());
    }
}
