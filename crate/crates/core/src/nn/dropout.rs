use rand::{Rng, RngCore};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Inverted-dropout mask: each entry is 0 with probability `p_drop`, else
/// `1 / (1 - p_drop)`, so the expected activation is unchanged.
pub fn dropout_mask(rows: usize, cols: usize, p_drop: f64, rng: &mut dyn RngCore) -> Result<Matrix> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::Domain(format!("dropout probability {p_drop} not in [0, 1)")));
    }
    let mut mask = Matrix::zeros(rows, cols);
    let keep = 1.0 / (1.0 - p_drop);
    for v in mask.data_mut() {
        *v = if p_drop > 0.0 && rng.random::<f64>() < p_drop { 0.0 } else { keep };
    }
    Ok(mask)
}
