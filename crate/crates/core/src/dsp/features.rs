//! Model input construction from Mel spectrograms.

pub use super::mel::MelSpectrogram;
use crate::error::{Error, Result};

/// Standardized 2-channel model input: channel 0 is the log-Mel map, channel
/// 1 its first-order temporal difference. `values` is `[2, t, f]` row-major.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    pub values: Vec<f32>,
    pub time_steps: usize,
    pub mel_bins: usize,
    /// Statistics removed by the per-sample standardization.
    pub mean: f32,
    pub std: f32,
}

impl FeatureTensor {
    pub fn numel(&self) -> usize {
        2 * self.time_steps * self.mel_bins
    }
}

/// Stack the log-Mel map with its temporal delta (first row zero) and
/// standardize both channels jointly to zero mean and unit deviation.
pub fn make_input_tensor(mel: &MelSpectrogram) -> Result<FeatureTensor> {
    let (t, f) = (mel.time_steps, mel.n_mels);
    if t < 2 {
        return Err(Error::Data(format!(
            "make_input_tensor: need at least 2 time steps, got {t}"
        )));
    }
    let plane = t * f;
    let mut values = vec![0.0f32; 2 * plane];
    values[..plane].copy_from_slice(&mel.values);
    // delta[t] = mel[t] - mel[t-1], first row zero
    for ti in 1..t {
        for m in 0..f {
            values[plane + ti * f + m] = mel.values[ti * f + m] - mel.values[(ti - 1) * f + m];
        }
    }

    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    // Constant inputs have nothing to scale; centering alone applies.
    let std = if std < 1e-12 { 1.0 } else { std };

    let (m32, s32) = (mean as f32, std as f32);
    for v in values.iter_mut() {
        *v = (*v - m32) / s32;
    }

    Ok(FeatureTensor {
        values,
        time_steps: t,
        mel_bins: f,
        mean: m32,
        std: s32,
    })
}
