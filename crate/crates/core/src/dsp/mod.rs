//! Audio front-end: WAV ingestion, resampling, segmentation, denoising, and
//! log-Mel feature extraction.
//!
//! The full per-clip pipeline is: read -> resample -> clip-level noise
//! estimate -> time-domain segmentation -> per-segment power spectrogram ->
//! spectral subtraction -> log-Mel -> 2-channel feature tensor. All stages
//! are pure functions of their inputs, so identical bytes and configuration
//! produce bit-identical features.

mod features;
mod mel;
mod stft;
mod wav;

pub use features::{make_input_tensor, FeatureTensor, MelSpectrogram};
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelFilterBank};
pub use stft::{
    estimate_noise, spectral_subtract, stft_power, NoiseProfile, PowerSpectrogram,
};
pub use wav::{read_wav, write_wav_pcm16};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio in `[-1, 1]` with its sample rate and optional label.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: Option<String>,
    pub source_path: String,
}

impl AudioClip {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Every knob of the DSP pipeline. The cache fingerprint is derived from the
/// canonical rendering of this struct, so changing any field invalidates
/// previously built feature caches.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DspConfig {
    pub target_sample_rate: u32,
    /// Segment length in seconds.
    pub window_s: f64,
    /// Segment step in seconds.
    pub hop_s: f64,
    pub n_fft: usize,
    /// STFT hop in samples.
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Constants of the perceptual frequency mapping C1*log10(1 + f/C2).
    pub mel_c1: f64,
    pub mel_c2: f64,
    /// Fraction of lowest-energy frames used for the noise estimate.
    pub noise_fraction: f64,
    /// Oversubtraction factor alpha.
    pub oversubtraction: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            target_sample_rate: 16_000,
            window_s: 1.5,
            hop_s: 0.05,
            n_fft: 1024,
            hop: 256,
            n_mels: 64,
            fmin: 0.0,
            fmax: 8_000.0,
            mel_c1: 2595.0,
            mel_c2: 700.0,
            noise_fraction: 0.1,
            oversubtraction: 1.0,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_sample_rate == 0 {
            return Err(Error::Config("target_sample_rate must be positive".into()));
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(Error::Config(format!(
                "n_fft must be a power of two, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!(
                "hop must be in [1, n_fft], got {}",
                self.hop
            )));
        }
        if self.window_s <= 0.0 || self.hop_s <= 0.0 {
            return Err(Error::Config("window_s and hop_s must be positive".into()));
        }
        if self.n_mels < 2 {
            return Err(Error::Config(format!("n_mels must be >= 2, got {}", self.n_mels)));
        }
        if !(0.0 < self.noise_fraction && self.noise_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "noise_fraction must be in (0, 1], got {}",
                self.noise_fraction
            )));
        }
        if self.oversubtraction < 0.0 {
            return Err(Error::Config("oversubtraction must be >= 0".into()));
        }
        let nyquist = self.target_sample_rate as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "frequency range [{}, {}] invalid for Nyquist {}",
                self.fmin, self.fmax, nyquist
            )));
        }
        Ok(())
    }

    /// Segment length in samples at the target rate.
    pub fn window_samples(&self) -> usize {
        (self.window_s * self.target_sample_rate as f64).round() as usize
    }

    /// Segment step in samples at the target rate.
    pub fn hop_samples(&self) -> usize {
        ((self.hop_s * self.target_sample_rate as f64).round() as usize).max(1)
    }

    /// Time steps per segment feature map.
    pub fn frames_per_segment(&self) -> usize {
        let len = self.window_samples().max(self.n_fft);
        (len - self.n_fft) / self.hop + 1
    }

    /// Stable, order-fixed rendering used for cache fingerprints.
    pub fn canonical_string(&self) -> String {
        format!(
            "target_sample_rate={};window_s={};hop_s={};n_fft={};hop={};n_mels={};fmin={};fmax={};mel_c1={};mel_c2={};noise_fraction={};oversubtraction={}",
            self.target_sample_rate,
            self.window_s,
            self.hop_s,
            self.n_fft,
            self.hop,
            self.n_mels,
            self.fmin,
            self.fmax,
            self.mel_c1,
            self.mel_c2,
            self.noise_fraction,
            self.oversubtraction
        )
    }

    /// Hex SHA-256 of the canonical rendering.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_string().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Linear-interpolation resampling. Duration is preserved to within one
/// sample period; a clip already at `target_sr` is returned unchanged.
pub fn resample(clip: &AudioClip, target_sr: u32) -> Result<AudioClip> {
    if target_sr == 0 {
        return Err(Error::Config("resample: target rate must be positive".into()));
    }
    if clip.sample_rate == target_sr || clip.samples.is_empty() {
        let mut out = clip.clone();
        out.sample_rate = target_sr;
        return Ok(out);
    }
    let src_len = clip.samples.len();
    let ratio = target_sr as f64 / clip.sample_rate as f64;
    let out_len = ((src_len as f64 * ratio).round() as usize).max(1);
    let step = clip.sample_rate as f64 / target_sr as f64;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * step;
        let i0 = (pos.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        let frac = (pos - i0 as f64) as f32;
        out.push(clip.samples[i0] * (1.0 - frac) + clip.samples[i1] * frac);
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: target_sr,
        label: clip.label.clone(),
        source_path: clip.source_path.clone(),
    })
}

/// Sliding-window segmentation. Every segment has exactly
/// `round(window_s * F_s)` samples; a clip shorter than one window yields a
/// single zero-padded segment. For longer clips the count is
/// `floor((len - window) / hop) + 1`.
pub fn segment(clip: &AudioClip, window_s: f64, hop_s: f64) -> Result<Vec<AudioClip>> {
    if window_s <= 0.0 || hop_s <= 0.0 {
        return Err(Error::Config("segment: window_s and hop_s must be positive".into()));
    }
    let sr = clip.sample_rate;
    let window = ((window_s * sr as f64).round() as usize).max(1);
    let hop = ((hop_s * sr as f64).round() as usize).max(1);

    let make = |samples: Vec<f32>| AudioClip {
        samples,
        sample_rate: sr,
        label: clip.label.clone(),
        source_path: clip.source_path.clone(),
    };

    if clip.samples.len() < window {
        let mut padded = clip.samples.clone();
        padded.resize(window, 0.0);
        return Ok(vec![make(padded)]);
    }
    let count = (clip.samples.len() - window) / hop + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        out.push(make(clip.samples[k * hop..k * hop + window].to_vec()));
    }
    Ok(out)
}
