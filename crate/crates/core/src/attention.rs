//! The two attention mechanisms of the model.
//!
//! Frequency attention scores the per-sample frequency profile with an affine
//! map, normalizes the scores with a softmax, smooths the resulting weight
//! vector with a Gaussian kernel matrix to avoid over-concentration on single
//! bins, and applies the smoothed weights as a Hadamard mask over the
//! frequency axis.
//!
//! Channel attention pools each channel with parallel average and max
//! branches, pushes both through a shared bottleneck layer, and gates the
//! channels with a sigmoid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{adaptive_avg_pool2d, global_max_pool2d, init, ops, Scalar, Tensor};

/// Dense Gaussian kernel over index distance: entry `(m, j)` is
/// `exp(-(j-m)^2 / (2 omega^2)) / (omega sqrt(2 pi))`.
#[derive(Debug, Clone)]
pub struct GaussianSmoothingMatrix {
    /// `size x size`, row-major, symmetric.
    pub values: Vec<f64>,
    pub size: usize,
    pub omega: f64,
}

pub fn gaussian_smoothing_matrix(size: usize, omega: f64) -> Result<GaussianSmoothingMatrix> {
    if size == 0 {
        return Err(Error::Config("gaussian smoothing: size must be >= 1".into()));
    }
    if omega <= 0.0 {
        return Err(Error::Config(format!(
            "gaussian smoothing: omega must be positive, got {omega}"
        )));
    }
    let norm = 1.0 / (omega * (2.0 * std::f64::consts::PI).sqrt());
    let mut values = vec![0.0f64; size * size];
    for m in 0..size {
        for j in 0..size {
            let d = j as f64 - m as f64;
            values[m * size + j] = norm * (-d * d / (2.0 * omega * omega)).exp();
        }
    }
    Ok(GaussianSmoothingMatrix {
        values,
        size,
        omega,
    })
}

impl GaussianSmoothingMatrix {
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::from_f64(v)).collect();
        Tensor::from_vec(vec![self.size, self.size], data).expect("smoothing matrix")
    }
}

/// Learnable pieces of the frequency attention: an affine score map over the
/// f-length frequency profile, plus the fixed smoothing kernel.
#[derive(Debug, Clone)]
pub struct FrequencyAttentionParams<T: Scalar> {
    pub score_weight: Tensor<T>,
    pub score_bias: Tensor<T>,
    pub omega: f64,
    /// Constant `f x f` smoothing kernel derived from `omega`.
    pub smoothing: Tensor<T>,
}

impl<T: Scalar> FrequencyAttentionParams<T> {
    pub fn init(kernel_size: usize, omega: f64, rng: &mut impl Rng) -> Result<Self> {
        let g = gaussian_smoothing_matrix(kernel_size, omega)?;
        Ok(FrequencyAttentionParams {
            score_weight: init::he_uniform(vec![kernel_size, kernel_size], kernel_size, rng),
            score_bias: init::zeros_param(vec![kernel_size]),
            omega,
            smoothing: g.to_tensor(),
        })
    }

    /// All-zero score map: attention degenerates to a fixed per-frequency
    /// profile. Used by tests.
    pub fn zeros(kernel_size: usize, omega: f64) -> Result<Self> {
        let g = gaussian_smoothing_matrix(kernel_size, omega)?;
        Ok(FrequencyAttentionParams {
            score_weight: init::zeros_param(vec![kernel_size, kernel_size]),
            score_bias: init::zeros_param(vec![kernel_size]),
            omega,
            smoothing: g.to_tensor(),
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.score_bias.numel()
    }

    pub fn trainable(&self) -> Vec<Tensor<T>> {
        vec![self.score_weight.clone(), self.score_bias.clone()]
    }
}

/// Gaussian-smoothed soft frequency mask, fully differentiable.
///
/// Per sample: the frequency profile is the mean of `x` over channels and
/// time; scores are an affine map of the profile; the attention vector is
/// their softmax; the smoothed weights are the kernel matrix applied to the
/// attention vector; the output is `x` scaled per-frequency by the smoothed
/// weights.
pub fn frequency_attention<T: Scalar>(
    x: &Tensor<T>,
    params: &FrequencyAttentionParams<T>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!(
            "frequency_attention: expected [B,C,t,f], got {:?}",
            s
        )));
    }
    let f = s[3];
    if f != params.kernel_size() {
        return Err(Error::Dimension(format!(
            "frequency_attention: input has {} frequency bins, params expect {}",
            f,
            params.kernel_size()
        )));
    }
    let profile = ops::mean_axes(x, &[1, 2])?; // [B, f]
    let scores = ops::linear(&profile, &params.score_weight, Some(&params.score_bias))?;
    let beta = ops::softmax(&scores, 1)?;
    // The kernel is symmetric, so the row-vector product equals G * beta.
    let smoothed = ops::matmul(&beta, &params.smoothing)?; // [B, f]
    let batch = s[0];
    let mask = ops::reshape(&smoothed, vec![batch, 1, 1, f])?;
    ops::mul(x, &mask)
}

/// Bottleneck parameters of the channel attention. `channels` must be
/// divisible by `reduction`.
#[derive(Debug, Clone)]
pub struct ChannelAttentionParams<T: Scalar> {
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Tensor<T>,
    pub reduction: usize,
}

impl<T: Scalar> ChannelAttentionParams<T> {
    pub fn init(channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::check(channels, reduction)?;
        let hidden = channels / reduction;
        Ok(ChannelAttentionParams {
            fc1_weight: init::he_uniform(vec![hidden, channels], channels, rng),
            fc1_bias: init::zeros_param(vec![hidden]),
            fc2_weight: init::he_uniform(vec![channels, hidden], hidden, rng),
            fc2_bias: init::zeros_param(vec![channels]),
            reduction,
        })
    }

    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        Self::check(channels, reduction)?;
        let hidden = channels / reduction;
        Ok(ChannelAttentionParams {
            fc1_weight: init::zeros_param(vec![hidden, channels]),
            fc1_bias: init::zeros_param(vec![hidden]),
            fc2_weight: init::zeros_param(vec![channels, hidden]),
            fc2_bias: init::zeros_param(vec![channels]),
            reduction,
        })
    }

    fn check(channels: usize, reduction: usize) -> Result<()> {
        if reduction == 0 || channels == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "channel attention: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.fc2_bias.numel()
    }

    pub fn trainable(&self) -> Vec<Tensor<T>> {
        vec![
            self.fc1_weight.clone(),
            self.fc1_bias.clone(),
            self.fc2_weight.clone(),
            self.fc2_bias.clone(),
        ]
    }
}

/// Dual-branch channel gating:
/// `aw = sigmoid(fc2(relu(fc1(avg_pool(x)) + fc1(max_pool(x)))))`, applied as
/// a per-channel multiplier. The shared `fc1` sees both pooled statistics.
pub fn channel_attention<T: Scalar>(
    x: &Tensor<T>,
    params: &ChannelAttentionParams<T>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!(
            "channel_attention: expected [B,C,H,W], got {:?}",
            s
        )));
    }
    let (batch, ch) = (s[0], s[1]);
    if ch != params.channels() {
        return Err(Error::Dimension(format!(
            "channel_attention: input has {} channels, params expect {}",
            ch,
            params.channels()
        )));
    }
    let avg = ops::reshape(&adaptive_avg_pool2d(x, (1, 1))?, vec![batch, ch])?;
    let max = ops::reshape(&global_max_pool2d(x)?, vec![batch, ch])?;
    let a = ops::linear(&avg, &params.fc1_weight, Some(&params.fc1_bias))?;
    let m = ops::linear(&max, &params.fc1_weight, Some(&params.fc1_bias))?;
    let hidden = ops::relu(&ops::add(&a, &m)?);
    let weights = ops::sigmoid(&ops::linear(&hidden, &params.fc2_weight, Some(&params.fc2_bias))?);
    let mask = ops::reshape(&weights, vec![batch, ch, 1, 1])?;
    ops::mul(x, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_entry_matrix() {
        for omega in [0.5, 1.0, 3.0] {
            let g = gaussian_smoothing_matrix(1, omega).unwrap();
            let want = 1.0 / (omega * (2.0 * std::f64::consts::PI).sqrt());
            assert!((g.values[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_is_symmetric_with_dominant_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let s = rng.gen_range(3..12);
            let omega = rng.gen_range(0.3..4.0);
            let g = gaussian_smoothing_matrix(s, omega).unwrap();
            for m in 0..s {
                for j in 0..s {
                    assert_eq!(g.values[m * s + j], g.values[j * s + m]);
                    assert!(g.values[m * s + j] <= g.values[m * s + m]);
                }
                // strictly decaying with |j - m|
                for j in m + 1..s - 1 {
                    assert!(g.values[m * s + j] > g.values[m * s + j + 1]);
                }
            }
        }
    }

    #[test]
    fn off_diagonal_ratio_is_exp_minus_half() {
        let g = gaussian_smoothing_matrix(3, 1.0).unwrap();
        let ratio = g.values[1] / g.values[0];
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn invalid_omega_rejected() {
        assert!(gaussian_smoothing_matrix(4, 0.0).is_err());
        assert!(gaussian_smoothing_matrix(4, -1.0).is_err());
    }

    #[test]
    fn zero_scores_apply_fixed_profile() {
        // W = 0 -> beta uniform -> mask = G * (1/f) applied per frequency.
        let f = 6usize;
        let params = FrequencyAttentionParams::<f64>::zeros(f, 1.0).unwrap();
        let x = Tensor::from_vec(vec![1, 2, 3, f], vec![1.0; 2 * 3 * f]).unwrap();
        let y = frequency_attention(&x, &params).unwrap();

        let g = gaussian_smoothing_matrix(f, 1.0).unwrap();
        let expected: Vec<f64> = (0..f)
            .map(|j| (0..f).map(|m| g.values[j * f + m] / f as f64).sum())
            .collect();
        let d = y.data();
        for c in 0..2 {
            for t in 0..3 {
                for (j, &e) in expected.iter().enumerate() {
                    let got = d[((c * 3) + t) * f + j];
                    assert!((got - e).abs() < 1e-12, "c={c} t={t} j={j}");
                }
            }
        }
    }

    #[test]
    fn forced_one_hot_recovers_kernel_column() {
        // A huge bias on one score makes beta one-hot; the smoothed weights
        // then equal that column of the kernel.
        let f = 8usize;
        let hot = 3usize;
        let params = {
            let mut p = FrequencyAttentionParams::<f64>::zeros(f, 1.5).unwrap();
            let mut bias = vec![0.0; f];
            bias[hot] = 1e4;
            p.score_bias = Tensor::param(vec![f], bias).unwrap();
            p
        };
        let x = Tensor::from_vec(vec![1, 1, 1, f], vec![1.0; f]).unwrap();
        let y = frequency_attention(&x, &params).unwrap();
        let g = gaussian_smoothing_matrix(f, 1.5).unwrap();
        let d = y.data();
        for j in 0..f {
            assert!((d[j] - g.values[j * f + hot]).abs() < 1e-9, "j={j}");
        }
    }

    #[test]
    fn smoothing_is_linear_in_attention_vector() {
        let f = 10usize;
        let g = gaussian_smoothing_matrix(f, 0.8).unwrap();
        let matvec = |beta: &[f64]| -> Vec<f64> {
            (0..f)
                .map(|m| (0..f).map(|j| g.values[m * f + j] * beta[j]).sum())
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b1: Vec<f64> = (0..f).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b2: Vec<f64> = (0..f).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let combined: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + b * y).collect();
        let lhs = matvec(&combined);
        let (g1, g2) = (matvec(&b1), matvec(&b2));
        for m in 0..f {
            assert!((lhs[m] - (a * g1[m] + b * g2[m])).abs() < 1e-6);
        }
    }

    #[test]
    fn larger_omega_spreads_attention_mass() {
        // Over-concentration regime: beta has one dominant peak away from
        // the array edges (kernel truncation at the edges can reverse the
        // ordering for near-uniform beta). The peak's share of the smoothed
        // mass must strictly decrease as omega grows.
        let f = 64usize;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..25 {
            let peak = rng.gen_range(13..f - 13);
            let dominance = rng.gen_range(0.3..0.9);
            let mut beta: Vec<f64> = (0..f).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = beta.iter().sum();
            beta.iter_mut().for_each(|v| *v *= (1.0 - dominance) / s);
            beta[peak] += dominance;

            let mut last = f64::INFINITY;
            for omega in [0.5, 1.0, 2.0, 4.0] {
                let g = gaussian_smoothing_matrix(f, omega).unwrap();
                let gv: Vec<f64> = (0..f)
                    .map(|m| (0..f).map(|j| g.values[m * f + j] * beta[j]).sum())
                    .collect();
                let total: f64 = gv.iter().sum();
                let share = gv[peak] / total;
                assert!(share < last, "omega {omega}: share {share} !< {last}");
                last = share;
            }
        }
    }

    #[test]
    fn frequency_attention_matches_matvec_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = 12usize;
        let params = FrequencyAttentionParams::<f64>::init(f, 1.0, &mut rng).unwrap();
        let data: Vec<f64> = (0..2 * 3 * 4 * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(vec![2, 3, 4, f], data.clone()).unwrap();
        let y = frequency_attention(&x, &params).unwrap();

        // Independent dense transcription of the four steps.
        let w = params.score_weight.to_vec();
        let bias = params.score_bias.to_vec();
        let g = gaussian_smoothing_matrix(f, 1.0).unwrap();
        for b in 0..2 {
            let mut profile = vec![0.0f64; f];
            for c in 0..3 {
                for t in 0..4 {
                    for j in 0..f {
                        profile[j] += data[(((b * 3) + c) * 4 + t) * f + j] / 12.0;
                    }
                }
            }
            let scores: Vec<f64> = (0..f)
                .map(|o| bias[o] + (0..f).map(|i| w[o * f + i] * profile[i]).sum::<f64>())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|v| (v - m).exp()).sum();
            let beta: Vec<f64> = scores.iter().map(|v| (v - m).exp() / z).collect();
            assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(beta.iter().all(|&v| v > 0.0));
            let gv: Vec<f64> = (0..f)
                .map(|mm| (0..f).map(|j| g.values[mm * f + j] * beta[j]).sum())
                .collect();
            for c in 0..3 {
                for t in 0..4 {
                    for j in 0..f {
                        let idx = (((b * 3) + c) * 4 + t) * f + j;
                        let want = data[idx] * gv[j];
                        assert!(
                            (y.data()[idx] - want).abs() < 1e-6,
                            "b={b} c={c} t={t} j={j}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn wrong_frequency_count_rejected() {
        let params = FrequencyAttentionParams::<f64>::zeros(8, 1.0).unwrap();
        let x = Tensor::from_vec(vec![1, 1, 2, 6], vec![0.0; 12]).unwrap();
        assert!(frequency_attention(&x, &params).is_err());
    }

    #[test]
    fn zero_parameters_halve_the_input() {
        // fc outputs 0 -> sigmoid 0.5 per channel -> out = x / 2
        let params = ChannelAttentionParams::<f64>::zeros(4, 2).unwrap();
        let data: Vec<f64> = (0..4 * 2 * 3).map(|i| i as f64 - 10.0).collect();
        let x = Tensor::from_vec(vec![1, 4, 2, 3], data.clone()).unwrap();
        let y = channel_attention(&x, &params).unwrap();
        for (got, want) in y.data().iter().zip(&data) {
            assert!((got - want / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_shrinks_and_preserves_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ChannelAttentionParams::<f64>::init(8, 4, &mut rng).unwrap();
        let data: Vec<f64> = (0..2 * 8 * 5 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::from_vec(vec![2, 8, 5, 3], data.clone()).unwrap();
        let y = channel_attention(&x, &params).unwrap();
        for (got, want) in y.data().iter().zip(&data) {
            assert!(got.abs() <= want.abs() + 1e-15);
            assert!(got.signum() == want.signum() || *got == 0.0);
        }
    }

    #[test]
    fn matches_step_by_step_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (b, c, h, w, r) = (2usize, 4usize, 3usize, 2usize, 2usize);
        let params = ChannelAttentionParams::<f64>::init(c, r, &mut rng).unwrap();
        let data: Vec<f64> = (0..b * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(vec![b, c, h, w], data.clone()).unwrap();
        let y = channel_attention(&x, &params).unwrap();

        let fc1w = params.fc1_weight.to_vec();
        let fc1b = params.fc1_bias.to_vec();
        let fc2w = params.fc2_weight.to_vec();
        let fc2b = params.fc2_bias.to_vec();
        let hid = c / r;
        for bi in 0..b {
            // pooled statistics per channel
            let mut avg = vec![0.0; c];
            let mut mx = vec![f64::NEG_INFINITY; c];
            for ci in 0..c {
                for i in 0..h * w {
                    let v = data[(bi * c + ci) * h * w + i];
                    avg[ci] += v / (h * w) as f64;
                    mx[ci] = mx[ci].max(v);
                }
            }
            let dense = |inp: &[f64], w: &[f64], bias: &[f64], o: usize, i: usize| -> Vec<f64> {
                (0..o)
                    .map(|oo| bias[oo] + (0..i).map(|ii| w[oo * i + ii] * inp[ii]).sum::<f64>())
                    .collect()
            };
            let h1a = dense(&avg, &fc1w, &fc1b, hid, c);
            let h1m = dense(&mx, &fc1w, &fc1b, hid, c);
            let relu: Vec<f64> = h1a
                .iter()
                .zip(&h1m)
                .map(|(a, m)| (a + m).max(0.0))
                .collect();
            let logits = dense(&relu, &fc2w, &fc2b, c, hid);
            let aw: Vec<f64> = logits.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
            for ci in 0..c {
                assert!(aw[ci] > 0.0 && aw[ci] < 1.0);
                for i in 0..h * w {
                    let idx = (bi * c + ci) * h * w + i;
                    let want = data[idx] * aw[ci];
                    let got = y.data()[idx];
                    assert!((got - want).abs() < 1e-9, "b={bi} c={ci} i={i}");
                }
            }
        }
    }

    #[test]
    fn indivisible_reduction_rejected() {
        assert!(
            ChannelAttentionParams::<f32>::init(6, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err()
        );
    }

    #[test]
    fn attention_gradients_flow() {
        use crate::tensor::check_gradients;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let f = 5usize;
        let fa = FrequencyAttentionParams::<f64>::init(f, 1.0, &mut rng).unwrap();
        let ca = ChannelAttentionParams::<f64>::init(2, 2, &mut rng).unwrap();
        let data: Vec<f64> = (0..2 * 2 * 3 * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::param(vec![2, 2, 3, f], data).unwrap();

        let mut params = vec![x.clone()];
        params.extend(fa.trainable());
        params.extend(ca.trainable());
        let err = check_gradients(
            &params,
            || {
                let y = channel_attention(&x, &ca)?;
                let y = frequency_attention(&y, &fa)?;
                Ok(ops::mean(&ops::mul(&y, &y)?))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
