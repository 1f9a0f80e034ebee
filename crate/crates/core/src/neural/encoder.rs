use rand::Rng;

use super::gru::{BiGru, BiGruTrace};
use super::layers::{Dense, Prelu};
use super::matrix::Matrix;
use super::params::ParameterSet;
use crate::error::Result;

/// Shared bottom of both networks: per-frame FC embedding with PReLU,
/// followed by a bidirectional GRU.
#[derive(Clone, Copy, Debug)]
pub struct SequenceEncoder {
    pub embed: Dense,
    pub act: Prelu,
    pub rnn: BiGru,
}

#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub embedded: Matrix,
    pub rnn: BiGruTrace,
}

impl EncoderTrace {
    pub fn output(&self) -> &Matrix {
        &self.rnn.output
    }
}

impl SequenceEncoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        feature_dim: usize,
        embed_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            embed: Dense::new(params, "embed", feature_dim, embed_size, rng)?,
            act: Prelu::new(params, "embed_act", embed_size)?,
            rnn: BiGru::new(params, "rnn", embed_size, hidden_size, rng)?,
        })
    }

    pub fn bind(params: &ParameterSet) -> Result<Self> {
        Ok(Self {
            embed: Dense::bind(params, "embed")?,
            act: Prelu::bind(params, "embed_act")?,
            rnn: BiGru::bind(params, "rnn")?,
        })
    }

    pub fn feature_dim(&self, params: &ParameterSet) -> usize {
        params.value(self.embed.weight).rows()
    }

    pub fn embed_size(&self, params: &ParameterSet) -> usize {
        params.value(self.embed.weight).cols()
    }

    pub fn hidden_size(&self, params: &ParameterSet) -> usize {
        self.rnn.forward.hidden_size(params)
    }

    pub fn output_size(&self, params: &ParameterSet) -> usize {
        self.rnn.output_size(params)
    }

    pub fn forward(&self, params: &ParameterSet, input: Matrix) -> Result<EncoderTrace> {
        let pre_activation = self.embed.forward(params, &input)?;
        let embedded = self.act.forward(params, &pre_activation)?;
        let rnn = self.rnn.encode(params, &embedded)?;
        Ok(EncoderTrace {
            input,
            pre_activation,
            embedded,
            rnn,
        })
    }

    /// Accumulates gradients for `d_output` (`T × 2H`) into `params`.
    pub fn backward(&self, params: &mut ParameterSet, trace: &EncoderTrace, d_output: &Matrix) {
        let d_embedded = self.rnn.backward(params, &trace.embedded, &trace.rnn, d_output);
        let d_pre = self.act.backward(params, &trace.pre_activation, &d_embedded);
        self.embed.backward(params, &trace.input, &d_pre);
    }
}
