use serde::{Deserialize, Serialize};

use super::lstm::{lstm_sequence_backward, lstm_sequence_forward, LstmCellParams, LstmState, SequenceCache};
use super::matrix::Matrix;

/// A bidirectional layer: one cell reads the sequence forward, the other
/// reads it reversed. Output row `t` is `[h_fwd(t) ; h_bwd(t)]`, where
/// `h_bwd(t)` is the backward cell's state after it has consumed inputs
/// `T-1 ..= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
}

impl BiLstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        BiLstmParams {
            forward: LstmCellParams::zeros(input_size, hidden_size),
            backward: LstmCellParams::zeros(input_size, hidden_size),
        }
    }

    pub fn input_size(&self) -> usize {
        self.forward.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size
    }

    pub fn output_size(&self) -> usize {
        2 * self.forward.hidden_size
    }
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    forward: SequenceCache,
    backward: SequenceCache,
}

pub fn bilstm_forward(params: &BiLstmParams, inputs: &Matrix) -> (Matrix, BiLstmCache) {
    assert_eq!(
        params.forward.input_size, params.backward.input_size,
        "directions must share the input size"
    );
    let t_len = inputs.rows();
    let n = params.hidden_size();
    let (hf, cf) = lstm_sequence_forward(&params.forward, inputs, &LstmState::zeros(n));
    let (hb_rev, cb) = lstm_sequence_forward(&params.backward, &inputs.reversed_rows(), &LstmState::zeros(n));
    let mut out = Matrix::zeros(t_len, 2 * n);
    for t in 0..t_len {
        let row = out.row_mut(t);
        row[..n].copy_from_slice(hf.row(t));
        row[n..].copy_from_slice(hb_rev.row(t_len - 1 - t));
    }
    (
        out,
        BiLstmCache {
            forward: cf,
            backward: cb,
        },
    )
}

/// Backward through both directions; returns the input gradient.
pub fn bilstm_backward(
    params: &BiLstmParams,
    cache: &BiLstmCache,
    dout: &Matrix,
    grads: &mut BiLstmParams,
) -> Matrix {
    let t_len = dout.rows();
    let n = params.hidden_size();
    assert_eq!(dout.cols(), 2 * n, "upstream gradient width");
    let mut dhf = Matrix::zeros(t_len, n);
    let mut dhb_rev = Matrix::zeros(t_len, n);
    for t in 0..t_len {
        dhf.row_mut(t).copy_from_slice(&dout.row(t)[..n]);
        dhb_rev.row_mut(t_len - 1 - t).copy_from_slice(&dout.row(t)[n..]);
    }
    let mut dx = lstm_sequence_backward(&params.forward, &cache.forward, &dhf, &mut grads.forward);
    let dx_rev = lstm_sequence_backward(&params.backward, &cache.backward, &dhb_rev, &mut grads.backward);
    for t in 0..t_len {
        for (a, b) in dx.row_mut(t).iter_mut().zip(dx_rev.row(t_len - 1 - t)) {
            *a += b;
        }
    }
    dx
}
