//! From-scratch numerical engine for the forecaster.

pub mod activation;
pub mod adam;
pub mod bilstm;
pub mod checkpoint;
pub mod dropout;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod matrix;
pub mod network;
pub mod rnn;

pub use activation::{sigmoid, tanh, Activation};
pub use adam::{AdamConfig, AdamState};
pub use bilstm::{bilstm_backward, bilstm_forward, BiLstmParams};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, CheckpointMeta};
pub use dropout::dropout_mask;
pub use gradcheck::{compare_gradients, gradient_check, GradCheckReport};
pub use loss::mse_loss;
pub use lstm::{lstm_cell_forward, lstm_sequence_forward, Gate, LstmCellParams, LstmState};
pub use matrix::Matrix;
pub use network::{Architecture, DenseParams, ForwardCache, Mode, NetworkParams};
pub use rnn::{simple_rnn_cell_forward, simple_rnn_readout, SimpleRnnParams};
