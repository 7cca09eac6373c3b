//! LSTM cell and unidirectional sequence pass, with backpropagation through time.
//!
//! ```text
//! f_t = σ(W_f x_t + U_f h_{t-1} + b_f)
//! i_t = σ(W_i x_t + U_i h_{t-1} + b_i)
//! o_t = σ(W_o x_t + U_o h_{t-1} + b_o)
//! g_t = tanh(W_c x_t + U_c h_{t-1} + b_c)      candidate cell state
//! c_t = f_t ∘ c_{t-1} + i_t ∘ g_t
//! h_t = o_t ∘ tanh(c_t)
//! ```
//!
//! Gates use the logistic sigmoid; the candidate and the cell output use tanh.

use serde::{Deserialize, Serialize};

use super::activation::{sigmoid, tanh};
use super::matrix::Matrix;

/// Gate slots in [`LstmCellParams`], in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Candidate];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Candidate => "c",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Input weights per gate, `hidden × input`.
    pub w: [Matrix; 4],
    /// Recurrent weights per gate, `hidden × hidden`.
    pub u: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmCellParams {
            input_size,
            hidden_size,
            w: std::array::from_fn(|_| Matrix::zeros(hidden_size, input_size)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden_size, hidden_size)),
            b: std::array::from_fn(|_| vec![0.0; hidden_size]),
        }
    }

    pub fn gate_w(&self, g: Gate) -> &Matrix {
        &self.w[g as usize]
    }

    pub fn gate_u(&self, g: Gate) -> &Matrix {
        &self.u[g as usize]
    }

    pub fn gate_b(&self, g: Gate) -> &[f64] {
        &self.b[g as usize]
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden_size * (self.input_size + self.hidden_size + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden_size],
            c: vec![0.0; hidden_size],
        }
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub fn lstm_cell_forward(p: &LstmCellParams, x: &[f64], prev: &LstmState) -> (LstmState, CellCache) {
    assert_eq!(x.len(), p.input_size, "input width");
    assert_eq!(prev.h.len(), p.hidden_size, "hidden width");
    let n = p.hidden_size;
    let pre = |gate: Gate| {
        let k = gate as usize;
        let mut z = p.b[k].clone();
        p.w[k].mul_vec_acc(x, &mut z);
        p.u[k].mul_vec_acc(&prev.h, &mut z);
        z
    };
    let f: Vec<f64> = pre(Gate::Forget).into_iter().map(sigmoid).collect();
    let i: Vec<f64> = pre(Gate::Input).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = pre(Gate::Output).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = pre(Gate::Candidate).into_iter().map(tanh).collect();

    let c: Vec<f64> = (0..n).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| tanh(v)).collect();
    let h: Vec<f64> = (0..n).map(|k| o[k] * tanh_c[k]).collect();

    let cache = CellCache {
        x: x.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        f,
        i,
        o,
        g,
        tanh_c,
    };
    (LstmState { h, c }, cache)
}

/// Gradients flowing out of one cell step.
pub struct CellGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Backward through one step. `dh` and `dc` are the total gradients arriving
/// at `h_t` and `c_t`; parameter gradients are accumulated into `grads`.
pub fn lstm_cell_backward(
    p: &LstmCellParams,
    cache: &CellCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmCellParams,
) -> CellGrads {
    let n = p.hidden_size;
    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let (f, i, o, g, tc) = (cache.f[k], cache.i[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
        let d_o = dh[k] * tc;
        let d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
        let d_f = d_c * cache.c_prev[k];
        let d_i = d_c * g;
        let d_g = d_c * i;
        dc_prev[k] = d_c * f;
        dz[Gate::Forget as usize][k] = d_f * f * (1.0 - f);
        dz[Gate::Input as usize][k] = d_i * i * (1.0 - i);
        dz[Gate::Output as usize][k] = d_o * o * (1.0 - o);
        dz[Gate::Candidate as usize][k] = d_g * (1.0 - g * g);
    }
    let mut dx = vec![0.0; p.input_size];
    let mut dh_prev = vec![0.0; n];
    for gate in Gate::ALL {
        let k = gate as usize;
        grads.w[k].add_outer(&dz[k], &cache.x);
        grads.u[k].add_outer(&dz[k], &cache.h_prev);
        for (b, d) in grads.b[k].iter_mut().zip(&dz[k]) {
            *b += d;
        }
        p.w[k].mul_t_vec_acc(&dz[k], &mut dx);
        p.u[k].mul_t_vec_acc(&dz[k], &mut dh_prev);
    }
    CellGrads { dx, dh_prev, dc_prev }
}

#[derive(Debug, Clone)]
pub struct SequenceCache {
    steps: Vec<CellCache>,
}

/// Runs the cell left to right over the rows of `inputs` (`T × input`),
/// returning the hidden sequence (`T × hidden`).
pub fn lstm_sequence_forward(
    p: &LstmCellParams,
    inputs: &Matrix,
    init: &LstmState,
) -> (Matrix, SequenceCache) {
    let t_len = inputs.rows();
    let mut hs = Matrix::zeros(t_len, p.hidden_size);
    let mut steps = Vec::with_capacity(t_len);
    let mut state = init.clone();
    for t in 0..t_len {
        let (next, cache) = lstm_cell_forward(p, inputs.row(t), &state);
        hs.row_mut(t).copy_from_slice(&next.h);
        steps.push(cache);
        state = next;
    }
    (hs, SequenceCache { steps })
}

/// BPTT over a whole sequence. `dhs` holds the gradient arriving at each
/// `h_t` from above; returns the gradient with respect to the inputs.
pub fn lstm_sequence_backward(
    p: &LstmCellParams,
    cache: &SequenceCache,
    dhs: &Matrix,
    grads: &mut LstmCellParams,
) -> Matrix {
    let t_len = cache.steps.len();
    assert_eq!(dhs.shape(), (t_len, p.hidden_size), "upstream gradient shape");
    let mut dx = Matrix::zeros(t_len, p.input_size);
    let mut dh_next = vec![0.0; p.hidden_size];
    let mut dc_next = vec![0.0; p.hidden_size];
    for t in (0..t_len).rev() {
        let dh: Vec<f64> = dhs.row(t).iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let g = lstm_cell_backward(p, &cache.steps[t], &dh, &dc_next, grads);
        dx.row_mut(t).copy_from_slice(&g.dx);
        dh_next = g.dh_prev;
        dc_next = g.dc_prev;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cell(vals: [f64; 12]) -> LstmCellParams {
        // (w, u, b) for f, i, o, c
        let mut p = LstmCellParams::zeros(1, 1);
        for k in 0..4 {
            p.w[k] = Matrix::from_vec(1, 1, vec![vals[3 * k]]);
            p.u[k] = Matrix::from_vec(1, 1, vec![vals[3 * k + 1]]);
            p.b[k] = vec![vals[3 * k + 2]];
        }
        p
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let p = LstmCellParams::zeros(3, 2);
        let (s, cache) = lstm_cell_forward(&p, &[0.4, -1.0, 2.0], &LstmState::zeros(2));
        assert_eq!(s.h, vec![0.0, 0.0]);
        assert_eq!(s.c, vec![0.0, 0.0]);
        assert_eq!(cache.f, vec![0.5, 0.5]);
        assert_eq!(cache.g, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut vals = [0.0; 12];
        vals[2] = 10.0; // b_f
        vals[5] = -50.0; // b_i: input path closed
        let p = scalar_cell(vals);
        let prev = LstmState {
            h: vec![0.0],
            c: vec![1.0],
        };
        let (s, _) = lstm_cell_forward(&p, &[0.7], &prev);
        assert!((s.c[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn scalar_step_matches_hand_evaluation() {
        let v = [0.5, -0.3, 0.1, 0.2, 0.4, -0.2, -0.6, 0.9, 0.05, 0.8, -0.7, 0.3];
        let p = scalar_cell(v);
        let (x, h0, c0) = (0.3, 0.1, 0.2);
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let f = sig(v[0] * x + v[1] * h0 + v[2]);
        let i = sig(v[3] * x + v[4] * h0 + v[5]);
        let o = sig(v[6] * x + v[7] * h0 + v[8]);
        let g = (v[9] * x + v[10] * h0 + v[11]).tanh();
        let c = f * c0 + i * g;
        let h = o * c.tanh();
        let (s, _) = lstm_cell_forward(&p, &[x], &LstmState { h: vec![h0], c: vec![c0] });
        assert!((s.c[0] - c).abs() < 1e-12);
        assert!((s.h[0] - h).abs() < 1e-12);
    }

    #[test]
    fn single_step_sequence_equals_cell() {
        let v = [0.5, -0.3, 0.1, 0.2, 0.4, -0.2, -0.6, 0.9, 0.05, 0.8, -0.7, 0.3];
        let p = scalar_cell(v);
        let init = LstmState::zeros(1);
        let (hs, _) = lstm_sequence_forward(&p, &Matrix::from_vec(1, 1, vec![0.25]), &init);
        let (s, _) = lstm_cell_forward(&p, &[0.25], &init);
        assert_eq!(hs.row(0), s.h.as_slice());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let v = [0.5, -0.3, 0.1, 0.2, 0.4, -0.2, -0.6, 0.9, 0.05, 0.8, -0.7, 0.3];
        let p = scalar_cell(v);
        let inputs = Matrix::from_vec(3, 1, vec![0.1, -0.2, 0.3]);
        let (_, cache) = lstm_sequence_forward(&p, &inputs, &LstmState::zeros(1));
        let mut grads = LstmCellParams::zeros(1, 1);
        let dx = lstm_sequence_backward(&p, &cache, &Matrix::zeros(3, 1), &mut grads);
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert_eq!(grads, LstmCellParams::zeros(1, 1));
    }

    #[test]
    fn sequence_gradient_matches_finite_differences() {
        let v = [0.5, -0.3, 0.1, 0.2, 0.4, -0.2, -0.6, 0.9, 0.05, 0.8, -0.7, 0.3];
        let p = scalar_cell(v);
        let inputs = Matrix::from_vec(3, 1, vec![0.1, -0.2, 0.3]);
        // loss = sum_t h_t
        let loss = |p: &LstmCellParams, x: &Matrix| {
            let (hs, _) = lstm_sequence_forward(p, x, &LstmState::zeros(1));
            hs.data().iter().sum::<f64>()
        };
        let (_, cache) = lstm_sequence_forward(&p, &inputs, &LstmState::zeros(1));
        let mut grads = LstmCellParams::zeros(1, 1);
        let dx = lstm_sequence_backward(&p, &cache, &Matrix::from_vec(3, 1, vec![1.0; 3]), &mut grads);
        let h = 1e-6;
        for k in 0..4 {
            let mut plus = p.clone();
            plus.u[k].data_mut()[0] += h;
            let mut minus = p.clone();
            minus.u[k].data_mut()[0] -= h;
            let fd = (loss(&plus, &inputs) - loss(&minus, &inputs)) / (2.0 * h);
            assert!((fd - grads.u[k].data()[0]).abs() < 1e-8, "gate {k}");
        }
        for t in 0..3 {
            let mut plus = inputs.clone();
            plus.data_mut()[t] += h;
            let mut minus = inputs.clone();
            minus.data_mut()[t] -= h;
            let fd = (loss(&p, &plus) - loss(&p, &minus)) / (2.0 * h);
            assert!((fd - dx.data()[t]).abs() < 1e-8, "step {t}");
        }
    }
}
