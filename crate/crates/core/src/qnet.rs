//! Dueling Q-network over the retained subsequence.
//!
//! The retained frames are encoded in order by the shared-architecture
//! encoder; the row at the attended frame's position feeds a value stream
//! and an advantage stream, combined into Q values for discard (0) and keep (1).

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSequence;
use crate::env::{Action, EpisodeState, FrameSet};
use crate::error::{Error, Result};
use crate::neural::{Dense, EncoderTrace, Matrix, ParameterSet, Prelu, SequenceEncoder};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionValues {
    pub q_discard: f64,
    pub q_keep: f64,
    pub v: f64,
    pub a_discard: f64,
    pub a_keep: f64,
}

impl ActionValues {
    pub fn q(&self, action: Action) -> f64 {
        match action {
            Action::Discard => self.q_discard,
            Action::Keep => self.q_keep,
        }
    }

    /// Greedy action; ties go to keep.
    pub fn greedy(&self) -> Action {
        if self.q_keep >= self.q_discard {
            Action::Keep
        } else {
            Action::Discard
        }
    }

    pub fn max_q(&self) -> f64 {
        self.q_keep.max(self.q_discard)
    }

    /// Softmax-normalised keep score.
    pub fn keep_probability(&self) -> f64 {
        1.0 / (1.0 + (self.q_discard - self.q_keep).exp())
    }
}

/// `Q(s,a) = V + A(s,a) − mean_a A(s,a)`; returns `(q_discard, q_keep)`.
pub fn dueling_combine(v: f64, a_discard: f64, a_keep: f64) -> (f64, f64) {
    let mean = 0.5 * (a_discard + a_keep);
    (v + (a_discard - mean), v + (a_keep - mean))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetConfig {
    pub embed_size: usize,
    pub hidden_size: usize,
    pub seed: u64,
}

impl Default for QNetConfig {
    fn default() -> Self {
        Self {
            embed_size: 256,
            hidden_size: 256,
            seed: 0,
        }
    }
}

/// Checkpoint sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetMeta {
    pub feature_dim: usize,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
struct Stream {
    hidden: Dense,
    act: Prelu,
    out: Dense,
}

struct StreamTrace {
    pre: Matrix,
    hidden: Matrix,
    out: Matrix,
}

impl Stream {
    fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        width: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Dense::new(params, &format!("{prefix}.hidden"), input, width, rng)?,
            act: Prelu::new(params, &format!("{prefix}.act"), width)?,
            out: Dense::new(params, &format!("{prefix}.out"), width, outputs, rng)?,
        })
    }

    fn bind(params: &ParameterSet, prefix: &str) -> Result<Self> {
        Ok(Self {
            hidden: Dense::bind(params, &format!("{prefix}.hidden"))?,
            act: Prelu::bind(params, &format!("{prefix}.act"))?,
            out: Dense::bind(params, &format!("{prefix}.out"))?,
        })
    }

    fn forward(&self, params: &ParameterSet, rows: &Matrix) -> Result<StreamTrace> {
        let pre = self.hidden.forward(params, rows)?;
        let hidden = self.act.forward(params, &pre)?;
        let out = self.out.forward(params, &hidden)?;
        Ok(StreamTrace { pre, hidden, out })
    }

    fn backward(&self, params: &mut ParameterSet, rows: &Matrix, trace: &StreamTrace, d_out: &Matrix) -> Matrix {
        let d_hidden = self.out.backward(params, &trace.hidden, d_out);
        let d_pre = self.act.backward(params, &trace.pre, &d_hidden);
        self.hidden.backward(params, rows, &d_pre)
    }
}

/// Forward pass over one retained subsequence, kept for backpropagation.
pub struct QTrace {
    encoder: EncoderTrace,
    positions: Vec<usize>,
    rows: Matrix,
    value: StreamTrace,
    advantage: StreamTrace,
    pub values: Vec<ActionValues>,
}

impl QTrace {
    /// Positions (within the retained order) the heads were read at.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }
}

#[derive(Clone, Debug)]
pub struct QNetwork {
    params: ParameterSet,
    encoder: SequenceEncoder,
    value: Stream,
    advantage: Stream,
    meta: QNetMeta,
}

impl QNetwork {
    pub fn new(feature_dim: usize, config: &QNetConfig) -> Result<Self> {
        if feature_dim == 0 || config.embed_size == 0 || config.hidden_size == 0 {
            return Err(Error::Config("Q-network sizes must be positive".into()));
        }
        let mut rng = crate::seed::component_rng(config.seed, "qnet.init");
        let mut params = ParameterSet::new();
        let encoder = SequenceEncoder::new(&mut params, feature_dim, config.embed_size, config.hidden_size, &mut rng)?;
        let width = 2 * config.hidden_size;
        let value = Stream::new(&mut params, "value", width, config.hidden_size, 1, &mut rng)?;
        let advantage = Stream::new(&mut params, "advantage", width, config.hidden_size, 2, &mut rng)?;
        Ok(Self {
            params,
            encoder,
            value,
            advantage,
            meta: QNetMeta {
                feature_dim,
                embedding_size: config.embed_size,
                hidden_size: config.hidden_size,
                seed: config.seed,
            },
        })
    }

    pub fn from_parts(params: ParameterSet, meta: QNetMeta) -> Result<Self> {
        let encoder = SequenceEncoder::bind(&params)?;
        let value = Stream::bind(&params, "value")?;
        let advantage = Stream::bind(&params, "advantage")?;
        let widths = (value.out.output_size(&params), advantage.out.output_size(&params));
        if widths != (1, 2) {
            return Err(Error::dim("Q-network head widths", "(1, 2)", format!("{widths:?}")));
        }
        if encoder.feature_dim(&params) != meta.feature_dim || encoder.hidden_size(&params) != meta.hidden_size {
            return Err(Error::dim(
                "Q-network checkpoint",
                format!("D={} H={}", meta.feature_dim, meta.hidden_size),
                format!("D={} H={}", encoder.feature_dim(&params), encoder.hidden_size(&params)),
            ));
        }
        Ok(Self {
            params,
            encoder,
            value,
            advantage,
            meta,
        })
    }

    pub fn meta(&self) -> &QNetMeta {
        &self.meta
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Copies all weights from `other` (target-network sync).
    pub fn copy_weights_from(&mut self, other: &QNetwork) -> Result<()> {
        self.params.copy_values_from(&other.params)
    }

    /// Encodes `input` (the retained frames in order) and reads both streams
    /// at each of `positions`.
    pub fn forward_positions(&self, input: Matrix, positions: &[usize]) -> Result<QTrace> {
        if input.cols() != self.meta.feature_dim {
            return Err(Error::dim("Q-network input", self.meta.feature_dim, input.cols()));
        }
        let len = input.rows();
        if let Some(&bad) = positions.iter().find(|&&p| p >= len) {
            return Err(Error::OutOfRange {
                context: "Q readout position",
                index: bad,
                bound: len,
            });
        }
        let encoder = self.encoder.forward(&self.params, input)?;
        let rows = encoder.output().select_rows(positions);
        let value = self.value.forward(&self.params, &rows)?;
        let advantage = self.advantage.forward(&self.params, &rows)?;
        let values = (0..positions.len())
            .map(|i| {
                let v = value.out.row(i)[0];
                let (a_discard, a_keep) = (advantage.out.row(i)[0], advantage.out.row(i)[1]);
                let (q_discard, q_keep) = dueling_combine(v, a_discard, a_keep);
                ActionValues {
                    q_discard,
                    q_keep,
                    v,
                    a_discard,
                    a_keep,
                }
            })
            .collect();
        Ok(QTrace {
            encoder,
            positions: positions.to_vec(),
            rows,
            value,
            advantage,
            values,
        })
    }

    /// Accumulates gradients given `d_q[i] = (dL/dq_discard, dL/dq_keep)`
    /// for each readout of `trace`.
    pub fn backward(&mut self, trace: &QTrace, d_q: &[(f64, f64)]) -> Result<()> {
        if d_q.len() != trace.positions.len() {
            return Err(Error::dim("Q gradient rows", trace.positions.len(), d_q.len()));
        }
        let k = d_q.len();
        let mut d_v = Matrix::zeros(k, 1);
        let mut d_a = Matrix::zeros(k, 2);
        for (i, &(g0, g1)) in d_q.iter().enumerate() {
            d_v.row_mut(i)[0] = g0 + g1;
            d_a.row_mut(i)[0] = 0.5 * (g0 - g1);
            d_a.row_mut(i)[1] = 0.5 * (g1 - g0);
        }
        let mut d_rows = self.value.backward(&mut self.params, &trace.rows, &trace.value, &d_v);
        d_rows.add_assign(&self.advantage.backward(&mut self.params, &trace.rows, &trace.advantage, &d_a));
        let out = trace.encoder.output();
        let mut d_out = Matrix::zeros(out.rows(), out.cols());
        for (i, &p) in trace.positions.iter().enumerate() {
            crate::neural::matrix::axpy(1.0, d_rows.row(i), d_out.row_mut(p));
        }
        self.encoder.backward(&mut self.params, &trace.encoder, &d_out);
        Ok(())
    }

    /// Q values at the attended frame of `state`.
    pub fn q_forward(&self, state: &EpisodeState, features: &FeatureSequence) -> Result<ActionValues> {
        let pos = state.attention_position()?;
        self.q_at(&state.retained, pos, features)
    }

    /// Q values at readout position `pos` of the retained subsequence.
    pub fn q_at(&self, retained: &FrameSet, pos: usize, features: &FeatureSequence) -> Result<ActionValues> {
        let input = self.gather(retained, features)?;
        Ok(self.forward_positions(input, &[pos])?.values[0])
    }

    /// Q values at every retained frame, in retained order, from one encoder pass.
    pub fn q_forward_all(&self, retained: &FrameSet, features: &FeatureSequence) -> Result<Vec<ActionValues>> {
        let input = self.gather(retained, features)?;
        let positions: Vec<usize> = (0..input.rows()).collect();
        Ok(self.forward_positions(input, &positions)?.values)
    }

    fn gather(&self, retained: &FrameSet, features: &FeatureSequence) -> Result<Matrix> {
        if retained.universe() != features.len() {
            return Err(Error::dim("retained set universe", features.len(), retained.universe()));
        }
        if retained.is_empty() {
            return Err(Error::EmptyInput("retained set is empty"));
        }
        Ok(features.gather(&retained.indices()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.params.save(&dir.join("qnet.rlsn"))?;
        let sidecar = dir.join("qnet.json");
        let text = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar = dir.join("qnet.json");
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: QNetMeta = serde_json::from_str(&text)?;
        let params = ParameterSet::load(&dir.join("qnet.rlsn"))?;
        Self::from_parts(params, meta)
    }
}
