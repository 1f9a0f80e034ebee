//! Differentiable building blocks with hand-written backward passes.

pub mod encoder;
pub mod gru;
pub mod layers;
pub mod loss;
pub mod matrix;
pub mod optim;
pub mod params;

pub use encoder::{EncoderTrace, SequenceEncoder};
pub use gru::{bigru_encode, gru_cell, gru_cell_backward, BiGru, GruCell};
pub use layers::{dense_forward, prelu, Dense, Prelu};
pub use loss::{huber_loss, smoothed_cross_entropy, smoothed_targets, softmax, LossGrad};
pub use matrix::Matrix;
pub use optim::{clip_gradients, AdamConfig, AdamState};
pub use params::{ParamId, Parameter, ParameterSet};
