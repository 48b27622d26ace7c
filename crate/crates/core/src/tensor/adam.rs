//! Adam optimizer with bias correction.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Moment buffers and hyperparameters for one optimization run.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    /// One buffer per parameter, same shapes, zero-initialized.
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    /// Increments by exactly 1 per step.
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adam over a fixed set of leaf tensors. The parameter list is captured at
/// construction; gradients must be populated (by a backward pass) before each
/// [`Adam::step`].
pub struct Adam<T: Scalar> {
    params: Vec<Tensor<T>>,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, learning_rate: f64) -> Self {
        let first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        let second = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Adam {
            params,
            state: AdamState {
                first_moment: first,
                second_moment: second,
                step_count: 0,
                learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.state.learning_rate = lr;
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One Adam update with bias correction over all captured parameters.
    pub fn step(&mut self) -> Result<()> {
        let s = &mut self.state;
        s.step_count += 1;
        let t = s.step_count as i32;
        let beta1 = T::from_f64(s.beta1);
        let beta2 = T::from_f64(s.beta2);
        let one = T::one();
        let bias1 = T::from_f64(1.0 - s.beta1.powi(t));
        let bias2 = T::from_f64(1.0 - s.beta2.powi(t));
        let lr = T::from_f64(s.learning_rate);
        let eps = T::from_f64(s.epsilon);

        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad().ok_or_else(|| {
                Error::Optimizer(format!(
                    "parameter {} (shape {:?}) has no gradient; run backward() first",
                    i,
                    p.shape()
                ))
            })?;
            let m = &mut s.first_moment[i];
            let v = &mut s.second_moment[i];
            p.update_data(|data| {
                for j in 0..data.len() {
                    let g = grad[j];
                    m[j] = beta1 * m[j] + (one - beta1) * g;
                    v[j] = beta2 * v[j] + (one - beta2) * g * g;
                    let m_hat = m[j] / bias1;
                    let v_hat = v[j] / bias2;
                    data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}
