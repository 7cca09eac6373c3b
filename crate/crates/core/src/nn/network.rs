//! Stacked bidirectional LSTM with a dense regression head.
//!
//! A window (`t1 × input`) passes through `layers` BiLSTM layers, with
//! inverted dropout on each inter-layer boundary in training mode. The head
//! reads the summary vector `[h_fwd(T-1) ; h_bwd(0)]` (each direction's
//! state after the whole window) and emits `outputs` values with identity
//! activation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bilstm::{bilstm_backward, bilstm_forward, BiLstmCache, BiLstmParams};
use super::dropout::dropout_mask;
use super::loss::mse_loss;
use super::lstm::{Gate, LstmCellParams};
use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    /// Hidden units per direction.
    pub hidden_size: usize,
    pub layers: usize,
    pub outputs: usize,
    /// Drop probability on each boundary between BiLSTM layers.
    pub dropout: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 || self.layers == 0 || self.outputs == 0 {
            return Err(Error::Shape(format!("all architecture sizes must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Domain(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn layer_input_size(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_size
        } else {
            2 * self.hidden_size
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `outputs × inputs`
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub layers: Vec<BiLstmParams>,
    pub head: DenseParams,
}

/// Dropout behaviour of a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    arch: Architecture,
    seq_len: usize,
    layers: Vec<BiLstmCache>,
    masks: Vec<Option<Matrix>>,
    summary: Vec<f64>,
}

impl ForwardCache {
    pub fn summary(&self) -> &[f64] {
        &self.summary
    }

    pub fn masks(&self) -> &[Option<Matrix>] {
        &self.masks
    }
}

fn cell_blocks<'a>(prefix: &str, p: &'a LstmCellParams, out: &mut Vec<(String, &'a [f64])>) {
    for g in Gate::ALL {
        out.push((format!("{prefix}.w_{}", g.suffix()), p.w[g as usize].data()));
    }
    for g in Gate::ALL {
        out.push((format!("{prefix}.u_{}", g.suffix()), p.u[g as usize].data()));
    }
    for g in Gate::ALL {
        out.push((format!("{prefix}.b_{}", g.suffix()), &p.b[g as usize]));
    }
}

fn cell_blocks_mut<'a>(p: &'a mut LstmCellParams, out: &mut Vec<&'a mut [f64]>) {
    out.extend(p.w.iter_mut().map(|m| m.data_mut()));
    out.extend(p.u.iter_mut().map(|m| m.data_mut()));
    out.extend(p.b.iter_mut().map(|b| b.as_mut_slice()));
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = (0..arch.layers)
            .map(|l| BiLstmParams::zeros(arch.layer_input_size(l), arch.hidden_size))
            .collect();
        NetworkParams {
            arch,
            layers,
            head: DenseParams {
                w: Matrix::zeros(arch.outputs, 2 * arch.hidden_size),
                b: vec![0.0; arch.outputs],
            },
        }
    }

    /// Glorot-uniform weights (`limit = sqrt(6 / (fan_in + fan_out))`),
    /// forget-gate biases 1, other biases 0. Deterministic in `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = NetworkParams::zeros(arch);
        let h = arch.hidden_size as f64;
        for layer in &mut net.layers {
            for cell in [&mut layer.forward, &mut layer.backward] {
                let w_limit = (6.0 / (cell.input_size as f64 + h)).sqrt();
                let u_limit = (6.0 / (2.0 * h)).sqrt();
                for m in &mut cell.w {
                    m.fill_uniform(&mut rng, w_limit);
                }
                for m in &mut cell.u {
                    m.fill_uniform(&mut rng, u_limit);
                }
                cell.b[Gate::Forget as usize].fill(1.0);
            }
        }
        let limit = (6.0 / (2.0 * h + arch.outputs as f64)).sqrt();
        net.head.w.fill_uniform(&mut rng, limit);
        Ok(net)
    }

    /// Parameter blocks in checkpoint order, with stable names.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            cell_blocks(&format!("layer{l}.fwd"), &layer.forward, &mut out);
            cell_blocks(&format!("layer{l}.bwd"), &layer.backward, &mut out);
        }
        out.push(("head.w".into(), self.head.w.data()));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    /// Mutable parameter blocks, same order as [`blocks`](Self::blocks).
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            cell_blocks_mut(&mut layer.forward, &mut out);
            cell_blocks_mut(&mut layer.backward, &mut out);
        }
        out.push(self.head.w.data_mut());
        out.push(self.head.b.as_mut_slice());
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `self += scale * other`, blockwise in a fixed order.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        let src = other.blocks();
        for (dst, (_, src)) in self.blocks_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    fn check_window(&self, window: &Matrix) -> Result<()> {
        if window.rows() == 0 || window.cols() != self.arch.input_size {
            return Err(Error::Shape(format!(
                "window is {}x{}, network expects T x {} with T >= 1",
                window.rows(),
                window.cols(),
                self.arch.input_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, window: &Matrix, mode: Mode<'_>) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_window(window)?;
        let masks = match mode {
            Mode::Eval => vec![None; self.arch.layers.saturating_sub(1)],
            Mode::Train(rng) => (1..self.arch.layers)
                .map(|_| {
                    let mask = dropout_mask(window.rows(), 2 * self.arch.hidden_size, self.arch.dropout, rng)?;
                    Ok(Some(mask))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(self.forward_with_masks(window, masks))
    }

    /// Forward pass with explicit dropout masks (`None` = no dropout) on
    /// the `layers - 1` boundaries.
    pub fn forward_with_masks(&self, window: &Matrix, masks: Vec<Option<Matrix>>) -> (Vec<f64>, ForwardCache) {
        assert_eq!(masks.len(), self.arch.layers - 1, "one mask slot per boundary");
        let t_len = window.rows();
        let n = self.arch.hidden_size;
        let mut caches = Vec::with_capacity(self.layers.len());
        let (mut seq, cache) = bilstm_forward(&self.layers[0], window);
        caches.push(cache);
        for (layer, mask) in self.layers[1..].iter().zip(&masks) {
            if let Some(mask) = mask {
                for (v, m) in seq.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
            }
            let (next, cache) = bilstm_forward(layer, &seq);
            caches.push(cache);
            seq = next;
        }
        let mut summary = Vec::with_capacity(2 * n);
        summary.extend_from_slice(&seq.row(t_len - 1)[..n]);
        summary.extend_from_slice(&seq.row(0)[n..]);

        let mut pred = self.head.b.clone();
        self.head.w.mul_vec_acc(&summary, &mut pred);
        (
            pred,
            ForwardCache {
                arch: self.arch,
                seq_len: t_len,
                layers: caches,
                masks,
                summary,
            },
        )
    }

    pub fn predict(&self, window: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(window, Mode::Eval)?.0)
    }

    /// Exact reverse-mode gradients of a scalar loss whose gradient with
    /// respect to the prediction is `dpred`.
    pub fn backward(&self, cache: &ForwardCache, dpred: &[f64]) -> Result<NetworkParams> {
        if cache.arch != self.arch || cache.layers.len() != self.layers.len() {
            return Err(Error::Shape("forward cache was produced by a different network".into()));
        }
        if dpred.len() != self.arch.outputs {
            return Err(Error::Shape(format!(
                "prediction gradient has {} entries, network emits {}",
                dpred.len(),
                self.arch.outputs
            )));
        }
        let n = self.arch.hidden_size;
        let t_len = cache.seq_len;
        let mut grads = NetworkParams::zeros(self.arch);

        grads.head.w.add_outer(dpred, &cache.summary);
        grads.head.b.copy_from_slice(dpred);
        let mut dsummary = vec![0.0; 2 * n];
        self.head.w.mul_t_vec_acc(dpred, &mut dsummary);

        let mut dout = Matrix::zeros(t_len, 2 * n);
        dout.row_mut(t_len - 1)[..n].copy_from_slice(&dsummary[..n]);
        for (d, s) in dout.row_mut(0)[n..].iter_mut().zip(&dsummary[n..]) {
            *d += s;
        }

        for l in (0..self.layers.len()).rev() {
            let mut dx = bilstm_backward(&self.layers[l], &cache.layers[l], &dout, &mut grads.layers[l]);
            if l == 0 {
                break;
            }
            if let Some(mask) = &cache.masks[l - 1] {
                for (d, m) in dx.data_mut().iter_mut().zip(mask.data()) {
                    *d *= m;
                }
            }
            dout = dx;
        }
        Ok(grads)
    }

    /// MSE loss and parameter gradients for one `(window, target)` sample.
    pub fn sample_gradient(&self, window: &Matrix, target: &[f64], mode: Mode<'_>) -> Result<(f64, NetworkParams)> {
        let (pred, cache) = self.forward(window, mode)?;
        let (loss, dpred) = mse_loss(&pred, target)?;
        Ok((loss, self.backward(&cache, &dpred)?))
    }

    /// Mean loss and mean gradient over a batch (eval mode), reduced in
    /// sample order.
    pub fn batch_gradient(&self, samples: &[(&Matrix, &[f64])]) -> Result<(f64, NetworkParams)> {
        if samples.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let scale = 1.0 / samples.len() as f64;
        let mut total = NetworkParams::zeros(self.arch);
        let mut loss = 0.0;
        for (x, y) in samples {
            let (l, g) = self.sample_gradient(x, y, Mode::Eval)?;
            loss += l * scale;
            total.add_scaled(&g, scale);
        }
        Ok((loss, total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(layers: usize) -> Architecture {
        Architecture {
            input_size: 3,
            hidden_size: 2,
            layers,
            outputs: 2,
            dropout: 0.0,
        }
    }

    fn window() -> Matrix {
        Matrix::from_rows(&[vec![0.1, -0.5, 0.3], vec![0.7, 0.2, -0.9], vec![-0.3, 0.4, 0.8]])
    }

    #[test]
    fn zero_network_predicts_head_bias() {
        let mut net = NetworkParams::zeros(arch(4));
        net.head.b = vec![42.0, -3.0];
        assert_eq!(net.predict(&window()).unwrap(), vec![42.0, -3.0]);
        assert_eq!(net.predict(&Matrix::zeros(1, 3)).unwrap(), vec![42.0, -3.0]);
    }

    #[test]
    fn init_is_deterministic_with_unit_forget_bias() {
        let a = NetworkParams::init(arch(2), 9).unwrap();
        let b = NetworkParams::init(arch(2), 9).unwrap();
        let c = NetworkParams::init(arch(2), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for layer in &a.layers {
            for cell in [&layer.forward, &layer.backward] {
                assert!(cell.gate_b(Gate::Forget).iter().all(|&v| v == 1.0));
                assert!(cell.gate_b(Gate::Input).iter().all(|&v| v == 0.0));
                assert!(cell.gate_b(Gate::Output).iter().all(|&v| v == 0.0));
                assert!(cell.gate_b(Gate::Candidate).iter().all(|&v| v == 0.0));
            }
        }
        assert!(a.head.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_weight_mean_is_near_zero() {
        let a = Architecture {
            input_size: 7,
            hidden_size: 100,
            layers: 1,
            outputs: 1,
            dropout: 0.0,
        };
        let net = NetworkParams::init(a, 123).unwrap();
        let block = net.layers[0].forward.gate_u(Gate::Input).data();
        assert_eq!(block.len(), 10_000);
        let limit = (6.0f64 / 200.0).sqrt();
        let sigma = limit / 3f64.sqrt();
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        assert!(mean.abs() < 3.0 * sigma / 100.0, "mean {mean}");
        assert!(block.iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn eval_is_deterministic_and_shape_checked() {
        let net = NetworkParams::init(arch(4), 1).unwrap();
        assert_eq!(net.predict(&window()).unwrap(), net.predict(&window()).unwrap());
        assert!(matches!(net.predict(&Matrix::zeros(3, 2)), Err(Error::Shape(_))));
        assert!(matches!(net.predict(&Matrix::zeros(0, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn block_names_and_counts_line_up() {
        let mut net = NetworkParams::init(arch(2), 1).unwrap();
        let names: Vec<String> = net.blocks().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 2 * 2 * 12 + 2);
        assert_eq!(names[0], "layer0.fwd.w_f");
        assert_eq!(names[12], "layer0.bwd.w_f");
        assert_eq!(names.last().unwrap(), "head.b");
        let lens: Vec<usize> = net.blocks().iter().map(|(_, b)| b.len()).collect();
        let lens_mut: Vec<usize> = net.blocks_mut().iter().map(|b| b.len()).collect();
        assert_eq!(lens, lens_mut);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let net = NetworkParams::init(arch(2), 5).unwrap();
        let (_, cache) = net.forward(&window(), Mode::Eval).unwrap();
        let grads = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert_eq!(grads, NetworkParams::zeros(net.arch));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let net = NetworkParams::init(arch(2), 5).unwrap();
        let other = NetworkParams::init(arch(1), 5).unwrap();
        let (_, cache) = other.forward(&window(), Mode::Eval).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let net = NetworkParams::init(arch(2), 11).unwrap();
        let x1 = window();
        let x2 = window().reversed_rows();
        let (y1, y2) = (vec![0.3, -0.2], vec![1.1, 0.4]);
        let (_, g1) = net.sample_gradient(&x1, &y1, Mode::Eval).unwrap();
        let (_, g2) = net.sample_gradient(&x2, &y2, Mode::Eval).unwrap();
        let (_, batch) = net.batch_gradient(&[(&x1, &y1), (&x2, &y2)]).unwrap();
        for (((_, b), (_, a)), (_, c)) in batch.blocks().iter().zip(g1.blocks()).zip(g2.blocks()) {
            for ((b, a), c) in b.iter().zip(a).zip(c) {
                assert!((b - (a + c) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn train_mode_uses_masks_eval_does_not() {
        let mut a = arch(3);
        a.dropout = 0.5;
        let net = NetworkParams::init(a, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = net.forward(&window(), Mode::Train(&mut rng)).unwrap();
        assert_eq!(cache.masks().len(), 2);
        assert!(cache.masks().iter().all(Option::is_some));
        let (_, cache) = net.forward(&window(), Mode::Eval).unwrap();
        assert!(cache.masks().iter().all(Option::is_none));
    }
}
