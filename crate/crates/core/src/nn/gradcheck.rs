//! Central finite-difference verification of [`NetworkParams::backward`].

use serde::Serialize;

use super::loss::mse_loss;
use super::matrix::Matrix;
use super::network::NetworkParams;
use crate::error::Result;

/// Denominator floor of the relative error, so that entries whose true
/// gradient is ~0 are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub len: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_relative_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &BlockCheck> {
        self.blocks.iter().filter(|b| !b.passed)
    }
}

fn eval_loss(net: &NetworkParams, window: &Matrix, target: &[f64]) -> Result<f64> {
    Ok(mse_loss(&net.predict(window)?, target)?.0)
}

/// Checks backprop gradients of the MSE loss on one sample (eval mode)
/// against central differences with the given step. A block passes when
/// its largest relative error is strictly below `tolerance`.
pub fn gradient_check(
    net: &NetworkParams,
    window: &Matrix,
    target: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = net.sample_gradient(window, target, super::network::Mode::Eval)?;
    compare_gradients(net, window, target, &analytic, step, tolerance)
}

/// As [`gradient_check`], with the analytic gradients supplied by the caller.
pub fn compare_gradients(
    net: &NetworkParams,
    window: &Matrix,
    target: &[f64],
    analytic: &NetworkParams,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut probe = net.clone();
    let analytic_blocks = analytic.blocks();
    let mut blocks = Vec::with_capacity(analytic_blocks.len());
    for (b, (name, grads)) in analytic_blocks.iter().enumerate() {
        let mut worst = (0.0f64, 0usize);
        for (k, &a) in grads.iter().enumerate() {
            let original = probe.blocks_mut()[b][k];
            probe.blocks_mut()[b][k] = original + step;
            let up = eval_loss(&probe, window, target)?;
            probe.blocks_mut()[b][k] = original - step;
            let down = eval_loss(&probe, window, target)?;
            probe.blocks_mut()[b][k] = original;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(a, numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, k);
            }
        }
        blocks.push(BlockCheck {
            name: name.clone(),
            len: grads.len(),
            max_relative_error: worst.0,
            worst_index: worst.1,
            passed: worst.0 < tolerance,
        });
    }
    Ok(GradCheckReport {
        step,
        tolerance,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::Architecture;

    fn tiny() -> (NetworkParams, Matrix, Vec<f64>) {
        let arch = Architecture {
            input_size: 3,
            hidden_size: 2,
            layers: 2,
            outputs: 2,
            dropout: 0.0,
        };
        let net = NetworkParams::init(arch, 17).unwrap();
        let x = Matrix::from_rows(&[vec![0.2, -0.1, 0.5], vec![-0.7, 0.3, 0.1], vec![0.4, 0.9, -0.6]]);
        (net, x, vec![0.5, -0.25])
    }

    #[test]
    fn fresh_tiny_net_passes() {
        let (net, x, y) = tiny();
        let report = gradient_check(&net, &x, &y, 1e-5, 1e-4).unwrap();
        assert!(report.all_passed(), "{:#?}", report.failing().collect::<Vec<_>>());
    }

    #[test]
    fn corrupted_head_bias_is_flagged() {
        let (net, x, y) = tiny();
        let (_, mut analytic) = net.sample_gradient(&x, &y, crate::nn::Mode::Eval).unwrap();
        analytic.head.b[0] += 1.0;
        let report = compare_gradients(&net, &x, &y, &analytic, 1e-5, 1e-4).unwrap();
        let failing: Vec<&str> = report.failing().map(|b| b.name.as_str()).collect();
        assert_eq!(failing, vec!["head.b"]);
    }

    #[test]
    fn zero_tolerance_flags_everything() {
        let (net, x, y) = tiny();
        let report = gradient_check(&net, &x, &y, 1e-5, 0.0).unwrap();
        assert!(report.blocks.iter().all(|b| !b.passed));
    }
}
