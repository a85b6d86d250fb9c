use serde::{Deserialize, Serialize};

use super::RiskError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// L2 penalty on the weights (not the bias).
    pub lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            lambda: 1e-3,
            learning_rate: 0.5,
            iterations: 500,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy plus `lambda / 2 * |w|^2`, with its gradient in
/// `(w, b)`.
pub fn loss_and_grad(w: &[f64], b: f64, x: &[Vec<f64>], y: &[u8], lambda: f64) -> (f64, Vec<f64>, f64) {
    let n = y.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let t = label as f64;
        // log(1 + e^z) - t z, computed stably.
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let r = sigmoid(z) - t;
        for (g, a) in gw.iter_mut().zip(row) {
            *g += r * a;
        }
        gb += r;
    }
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * lambda / 2.0;
    for (g, v) in gw.iter_mut().zip(w) {
        *g = *g / n + lambda * v;
    }
    (loss / n + reg, gw, gb / n)
}

/// Full-batch gradient descent from zero.
pub fn train_logistic(x: &[Vec<f64>], y: &[u8], p: &LogisticParams) -> Result<(Vec<f64>, f64), RiskError> {
    let d = x.first().map_or(0, Vec::len);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for it in 0..p.iterations {
        let (loss, gw, gb) = loss_and_grad(&w, b, x, y, p.lambda);
        if !loss.is_finite() {
            return Err(RiskError::NonFiniteLoss { iteration: it });
        }
        for (v, g) in w.iter_mut().zip(&gw) {
            *v -= p.learning_rate * g;
        }
        b -= p.learning_rate * gb;
    }
    Ok((w, b))
}
