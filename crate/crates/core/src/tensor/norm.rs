//! Batch normalization over `[B, C, H, W]` with per-channel statistics.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Running statistics and hyperparameters of one batch-norm layer.
///
/// `running_var` stays strictly positive: it is initialized to 1 and updated
/// as a convex combination with a non-negative batch variance.
#[derive(Debug, Clone)]
pub struct BatchNormState<T: Scalar> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: BatchNormMode,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            epsilon: 1e-5,
            mode: BatchNormMode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Batch normalization. Train mode normalizes by batch statistics (biased
/// variance) and updates the running statistics with `momentum`; eval mode
/// normalizes by the running statistics.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("batchnorm2d: expected [B,C,H,W], got {:?}", s)));
    }
    let (batch, ch, h, w) = (s[0], s[1], s[2], s[3]);
    if state.channels() != ch || gamma.shape() != [ch] || beta.shape() != [ch] {
        return Err(Error::Dimension(format!(
            "batchnorm2d: channel mismatch (input {}, state {}, gamma {:?}, beta {:?})",
            ch,
            state.channels(),
            gamma.shape(),
            beta.shape()
        )));
    }
    let n = batch * h * w;
    let train = state.mode == BatchNormMode::Train;
    if train && n < 2 {
        return Err(Error::Data(format!(
            "batchnorm2d: degenerate batch, need B*H*W >= 2 in train mode, got {}",
            n
        )));
    }

    let eps = T::from_f64(state.epsilon);
    let inv_n = T::from_f64(1.0 / n as f64);

    // Per-channel mean and inverse std used for this pass.
    let mut mean = vec![T::zero(); ch];
    let mut inv_std = vec![T::zero(); ch];
    {
        let d = x.data();
        if train {
            let mut var = vec![T::zero(); ch];
            for c in 0..ch {
                let mut s1 = T::zero();
                for b in 0..batch {
                    let plane = &d[(b * ch + c) * h * w..][..h * w];
                    for &v in plane {
                        s1 += v;
                    }
                }
                let m = s1 * inv_n;
                let mut s2 = T::zero();
                for b in 0..batch {
                    let plane = &d[(b * ch + c) * h * w..][..h * w];
                    for &v in plane {
                        let dv = v - m;
                        s2 += dv * dv;
                    }
                }
                mean[c] = m;
                var[c] = s2 * inv_n;
                inv_std[c] = T::one() / (var[c] + eps).sqrt();
            }
            // Running statistics use the unbiased variance estimate.
            let mom = T::from_f64(state.momentum);
            let keep = T::one() - mom;
            let unbias = if n > 1 {
                T::from_f64(n as f64 / (n - 1) as f64)
            } else {
                T::one()
            };
            for c in 0..ch {
                state.running_mean[c] = keep * state.running_mean[c] + mom * mean[c];
                state.running_var[c] = keep * state.running_var[c] + mom * var[c] * unbias;
            }
        } else {
            for c in 0..ch {
                mean[c] = state.running_mean[c];
                inv_std[c] = T::one() / (state.running_var[c] + eps).sqrt();
            }
        }
    }

    // Normalized activations are saved for the backward pass.
    let mut xhat = vec![T::zero(); batch * ch * h * w];
    let mut out = vec![T::zero(); batch * ch * h * w];
    {
        let d = x.data();
        let g = gamma.data();
        let be = beta.data();
        for b in 0..batch {
            for c in 0..ch {
                let base = (b * ch + c) * h * w;
                let (m, is) = (mean[c], inv_std[c]);
                let (gc, bc) = (g[c], be[c]);
                for i in 0..h * w {
                    let xh = (d[base + i] - m) * is;
                    xhat[base + i] = xh;
                    out[base + i] = gc * xh + bc;
                }
            }
        }
    }

    Ok(Tensor::node(
        vec![batch, ch, h, w],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |grad, _out, parents| {
            let (x, gamma, beta) = (&parents[0], &parents[1], &parents[2]);
            let plane = h * w;

            // Channel sums of dy and dy*xhat, shared by all three gradients.
            let mut sum_dy = vec![T::zero(); ch];
            let mut sum_dy_xhat = vec![T::zero(); ch];
            for b in 0..batch {
                for c in 0..ch {
                    let base = (b * ch + c) * plane;
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for i in 0..plane {
                        s1 += grad[base + i];
                        s2 += grad[base + i] * xhat[base + i];
                    }
                    sum_dy[c] += s1;
                    sum_dy_xhat[c] += s2;
                }
            }

            if beta.requires_grad() {
                beta.accumulate_grad(&sum_dy);
            }
            if gamma.requires_grad() {
                gamma.accumulate_grad(&sum_dy_xhat);
            }
            if x.requires_grad() {
                let g = gamma.data();
                let mut gx = vec![T::zero(); batch * ch * plane];
                if train {
                    for b in 0..batch {
                        for c in 0..ch {
                            let base = (b * ch + c) * plane;
                            let coeff = g[c] * inv_std[c];
                            let mean_dy = sum_dy[c] * inv_n;
                            let mean_dy_xhat = sum_dy_xhat[c] * inv_n;
                            for i in 0..plane {
                                gx[base + i] = coeff
                                    * (grad[base + i]
                                        - mean_dy
                                        - xhat[base + i] * mean_dy_xhat);
                            }
                        }
                    }
                } else {
                    for b in 0..batch {
                        for c in 0..ch {
                            let base = (b * ch + c) * plane;
                            let coeff = g[c] * inv_std[c];
                            for i in 0..plane {
                                gx[base + i] = coeff * grad[base + i];
                            }
                        }
                    }
                }
                drop(g);
                x.accumulate_grad(&gx);
            }
        }),
    ))
}
