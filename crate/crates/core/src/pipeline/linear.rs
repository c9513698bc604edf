//! Linear estimators: L2-regularized logistic regression by full-batch
//! gradient descent, and a Pegasos linear SVM.

use rand::seq::SliceRandom;

use super::{sigmoid, EstimatorKind, PipelineError, Result};
use crate::dataset::{seeded_rng, Matrix};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticParams {
    pub l2: f64,
    pub learning_rate: f64,
    pub max_iter: usize,
    pub tol: f64,
}

/// Regularized mean logistic loss and its gradient at `(weights, bias)`:
///
/// `L = mean(softplus(z) - y z) + l2/2 · |w|²`, `z = w·x + b`.
///
/// The bias is not penalized. Returns `(loss, grad_w, grad_b)`.
pub fn logistic_loss_grad(
    x: &Matrix,
    y: &[u8],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.nrows() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (row, &t) in x.rows().zip(y) {
        let z = dot(weights, row) + bias;
        let t = f64::from(t);
        loss += softplus(z) - t * z;
        let residual = sigmoid(z) - t;
        for (g, v) in grad_w.iter_mut().zip(row) {
            *g += residual * v;
        }
        grad_b += residual;
    }
    loss /= n;
    grad_b /= n;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * dot(weights, weights);
    (loss, grad_w, grad_b)
}

/// Gradient descent from the zero vector. Stops once the gradient's
/// ∞-norm is at most `tol` or after `max_iter` steps.
pub fn fit_logistic(x: &Matrix, y: &[u8], params: &LogisticParams) -> Result<(Vec<f64>, f64)> {
    let mut w = vec![0.0; x.ncols()];
    let mut b = 0.0;
    for _ in 0..params.max_iter {
        let (loss, gw, gb) = logistic_loss_grad(x, y, &w, b, params.l2);
        if !loss.is_finite() {
            return Err(PipelineError::NonFiniteLoss(
                EstimatorKind::LogisticRegression,
            ));
        }
        let norm = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if norm <= params.tol {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= params.learning_rate * gi;
        }
        b -= params.learning_rate * gb;
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(PipelineError::NonFiniteLoss(
            EstimatorKind::LogisticRegression,
        ));
    }
    Ok((w, b))
}

/// Pegasos stochastic sub-gradient descent on the hinge loss. The bias is
/// treated as the weight of a constant feature and regularized with it.
/// Each epoch visits every sample once in a seeded shuffled order.
pub fn fit_pegasos(
    x: &Matrix,
    y: &[u8],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let mut rng = seeded_rng(seed);
    let mut w = vec![0.0; x.ncols()];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut t = 0u64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let row = x.row(i);
            let sign = if y[i] == 1 { 1.0 } else { -1.0 };
            let margin = sign * (dot(&w, row) + b);
            let shrink = 1.0 - eta * lambda;
            for wi in w.iter_mut() {
                *wi *= shrink;
            }
            b *= shrink;
            if margin < 1.0 {
                for (wi, v) in w.iter_mut().zip(row) {
                    *wi += eta * sign * v;
                }
                b += eta * sign;
            }
        }
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(PipelineError::NonFiniteLoss(EstimatorKind::LinearSvm));
    }
    Ok((w, b))
}
