//! Elman RNN cell, kept as a baseline next to the LSTM.

use serde::{Deserialize, Serialize};

use super::activation::{tanh, Activation};
use super::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleRnnParams {
    /// `hidden × input`
    pub w_h: Matrix,
    /// `hidden × hidden`
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
    /// `outputs × hidden`
    pub w_y: Matrix,
    pub b_y: Vec<f64>,
}

impl SimpleRnnParams {
    pub fn zeros(input: usize, hidden: usize, outputs: usize) -> Self {
        SimpleRnnParams {
            w_h: Matrix::zeros(hidden, input),
            u_h: Matrix::zeros(hidden, hidden),
            b_h: vec![0.0; hidden],
            w_y: Matrix::zeros(outputs, hidden),
            b_y: vec![0.0; outputs],
        }
    }
}

/// `h_t = tanh(W_h x_t + U_h h_{t-1} + b_h)`
pub fn simple_rnn_cell_forward(p: &SimpleRnnParams, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let mut z = p.b_h.clone();
    p.w_h.mul_vec_acc(x, &mut z);
    p.u_h.mul_vec_acc(h_prev, &mut z);
    z.into_iter().map(tanh).collect()
}

/// `y_t = act(W_y h_t + b_y)`
pub fn simple_rnn_readout(p: &SimpleRnnParams, h: &[f64], act: Activation) -> Vec<f64> {
    let mut y = p.b_y.clone();
    p.w_y.mul_vec_acc(h, &mut y);
    y.into_iter().map(|v| act.apply(v)).collect()
}
