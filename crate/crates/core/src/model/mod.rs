//! The MT-BCA-CNN model: a shared encoder of four attention-augmented conv
//! blocks feeding a classification head and an optional reconstruction
//! decoder.
//!
//! Block layout (ablation flags can remove the attention stages):
//! channel attention -> 3x3 conv (stride 1, shape-preserving padding) ->
//! frequency attention -> ReLU -> BatchNorm, followed by a 2x2 average
//! downsample. After four blocks an adaptive average pool produces the shared
//! feature vector consumed by both heads.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    channel_attention, frequency_attention, ChannelAttentionParams, FrequencyAttentionParams,
};
use crate::error::{Error, Result};
use crate::tensor::{
    adaptive_avg_pool2d, avg_pool2d_2x2, batchnorm2d, conv2d, conv_transpose2d, init, ops,
    resize_bilinear, BatchNormMode, BatchNormState, Scalar, Tensor,
};

/// Structural description of the model. Every parameter shape is derivable
/// from this alone, which is what makes checkpoints self-validating.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub block_channels: Vec<usize>,
    pub kernel: usize,
    pub num_classes: usize,
    /// Input feature-map size `(t, f)`.
    pub input_hw: (usize, usize),
    pub enable_channel_attention: bool,
    pub enable_frequency_attention: bool,
    pub enable_reconstruction: bool,
    pub dropout_p: f64,
    /// Channel-attention bottleneck reduction. Blocks whose entry channel
    /// count is not divisible fall back to the largest divisor.
    pub reduction: usize,
    /// Gaussian smoothing standard deviation of the frequency attention.
    pub omega: f64,
    /// Transposed-conv kernel size of the decoder (stride 2, padding k/2 - 1,
    /// so every stage exactly doubles the spatial size).
    pub decoder_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 2,
            block_channels: vec![8, 16, 32, 64],
            kernel: 3,
            num_classes: 27,
            input_hw: (90, 64),
            enable_channel_attention: true,
            enable_frequency_attention: true,
            enable_reconstruction: true,
            dropout_p: 0.5,
            reduction: 4,
            omega: 1.0,
            decoder_kernel: 6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_channels.len() != 4 {
            return Err(Error::Config(format!(
                "block_channels must have length 4, got {}",
                self.block_channels.len()
            )));
        }
        if !self.block_channels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "block_channels must be strictly increasing, got {:?}",
                self.block_channels
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(Error::Config(format!(
                "conv kernel must be odd for shape-preserving padding, got {}",
                self.kernel
            )));
        }
        if self.input_hw.0 < 16 || self.input_hw.1 < 16 {
            return Err(Error::Config(format!(
                "input_hw {:?} too small: four 2x downsamples need t, f >= 16",
                self.input_hw
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.reduction == 0 {
            return Err(Error::Config("reduction must be >= 1".into()));
        }
        if self.omega <= 0.0 {
            return Err(Error::Config(format!("omega must be positive, got {}", self.omega)));
        }
        if self.decoder_kernel < 2 || !self.decoder_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "decoder_kernel must be even and >= 2 for exact 2x upsampling, got {}",
                self.decoder_kernel
            )));
        }
        Ok(())
    }

    /// Entry channel count of each block.
    pub fn block_in_channels(&self) -> [usize; 4] {
        [
            self.in_channels,
            self.block_channels[0],
            self.block_channels[1],
            self.block_channels[2],
        ]
    }

    /// Feature-map size at the entry of each block (downsampling halves both
    /// dimensions after every block, floor semantics).
    pub fn block_input_hw(&self) -> [(usize, usize); 4] {
        let mut dims = [(0, 0); 4];
        let (mut t, mut f) = self.input_hw;
        for d in dims.iter_mut() {
            *d = (t, f);
            t /= 2;
            f /= 2;
        }
        dims
    }

    /// Largest divisor of `channels` not exceeding the configured reduction.
    pub fn effective_reduction(&self, channels: usize) -> usize {
        (1..=self.reduction.min(channels))
            .rev()
            .find(|r| channels.is_multiple_of(*r))
            .unwrap_or(1)
    }

    /// Decoder channel progression, mirror of the encoder.
    pub fn decoder_channels(&self) -> [usize; 5] {
        [
            self.block_channels[3],
            self.block_channels[2],
            self.block_channels[1],
            self.block_channels[0],
            self.in_channels,
        ]
    }

    /// Width of the shared feature vector.
    pub fn feature_dim(&self) -> usize {
        self.block_channels[3]
    }
}

/// Exact count of scalar learnables implied by a configuration: conv kernels
/// and biases, attention maps, BN scale/shift, classifier, decoder, and the
/// two task-uncertainty scalars when reconstruction is on. BN running
/// statistics are not learnable and are excluded.
pub fn count_params(config: &ModelConfig) -> usize {
    let mut total = 0usize;
    let ins = config.block_in_channels();
    let dims = config.block_input_hw();
    for b in 0..4 {
        let cin = ins[b];
        let cout = config.block_channels[b];
        if config.enable_channel_attention {
            let hidden = cin / config.effective_reduction(cin);
            total += hidden * cin + hidden; // fc1
            total += cin * hidden + cin; // fc2
        }
        total += cout * cin * config.kernel * config.kernel + cout;
        if config.enable_frequency_attention {
            let f = dims[b].1;
            total += f * f + f;
        }
        total += 2 * cout; // BN gamma + shift
    }
    total += config.num_classes * config.feature_dim() + config.num_classes;
    if config.enable_reconstruction {
        let ch = config.decoder_channels();
        let k2 = config.decoder_kernel * config.decoder_kernel;
        for s in 0..4 {
            total += ch[s] * ch[s + 1] * k2 + ch[s + 1];
        }
        total += 2; // task uncertainty scalars
    }
    total
}

/// Learnables and normalization state of one conv block.
#[derive(Debug, Clone)]
pub struct BlockParams<T: Scalar> {
    pub channel_attention: Option<ChannelAttentionParams<T>>,
    pub conv_weight: Tensor<T>,
    pub conv_bias: Tensor<T>,
    pub frequency_attention: Option<FrequencyAttentionParams<T>>,
    pub bn_gamma: Tensor<T>,
    pub bn_beta: Tensor<T>,
    pub bn_state: BatchNormState<T>,
}

/// Decoder: four transposed-conv stages with ReLU between them.
#[derive(Debug, Clone)]
pub struct DecoderParams<T: Scalar> {
    pub stages: Vec<(Tensor<T>, Tensor<T>)>,
}

/// All learnable tensors of the model plus the BatchNorm running state.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Scalar> {
    pub config: ModelConfig,
    pub blocks: Vec<BlockParams<T>>,
    pub classifier_weight: Tensor<T>,
    pub classifier_bias: Tensor<T>,
    pub decoder: Option<DecoderParams<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: fan-in-scaled uniform for conv/affine weights,
    /// zeros for biases, gamma = 1 / shift = 0 for BatchNorm.
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let ins = config.block_in_channels();
        let dims = config.block_input_hw();
        let k = config.kernel;

        let mut blocks = Vec::with_capacity(4);
        for b in 0..4 {
            let cin = ins[b];
            let cout = config.block_channels[b];
            let ca = if config.enable_channel_attention {
                Some(ChannelAttentionParams::init(
                    cin,
                    config.effective_reduction(cin),
                    rng,
                )?)
            } else {
                None
            };
            let conv_weight = init::he_uniform(vec![cout, cin, k, k], cin * k * k, rng);
            let conv_bias = init::zeros_param(vec![cout]);
            let fa = if config.enable_frequency_attention {
                Some(FrequencyAttentionParams::init(dims[b].1, config.omega, rng)?)
            } else {
                None
            };
            blocks.push(BlockParams {
                channel_attention: ca,
                conv_weight,
                conv_bias,
                frequency_attention: fa,
                bn_gamma: init::ones_param(vec![cout]),
                bn_beta: init::zeros_param(vec![cout]),
                bn_state: BatchNormState::new(cout),
            });
        }

        let feat = config.feature_dim();
        let classifier_weight = init::he_uniform(vec![config.num_classes, feat], feat, rng);
        let classifier_bias = init::zeros_param(vec![config.num_classes]);

        let decoder = if config.enable_reconstruction {
            let ch = config.decoder_channels();
            let dk = config.decoder_kernel;
            let stages = (0..4)
                .map(|s| {
                    let w =
                        init::he_uniform(vec![ch[s], ch[s + 1], dk, dk], ch[s] * dk * dk, rng);
                    let bias = init::zeros_param(vec![ch[s + 1]]);
                    (w, bias)
                })
                .collect();
            Some(DecoderParams { stages })
        } else {
            None
        };

        Ok(ModelParams {
            config: config.clone(),
            blocks,
            classifier_weight,
            classifier_bias,
            decoder,
        })
    }

    pub fn set_mode(&mut self, mode: BatchNormMode) {
        for b in &mut self.blocks {
            b.bn_state.mode = mode;
        }
    }

    /// All learnable tensors in a stable order (matches checkpoint order).
    pub fn trainable(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            if let Some(ca) = &b.channel_attention {
                out.extend(ca.trainable());
            }
            out.push(b.conv_weight.clone());
            out.push(b.conv_bias.clone());
            if let Some(fa) = &b.frequency_attention {
                out.extend(fa.trainable());
            }
            out.push(b.bn_gamma.clone());
            out.push(b.bn_beta.clone());
        }
        out.push(self.classifier_weight.clone());
        out.push(self.classifier_bias.clone());
        if let Some(dec) = &self.decoder {
            for (w, b) in &dec.stages {
                out.push(w.clone());
                out.push(b.clone());
            }
        }
        out
    }

    /// One conv block: channel attention -> conv -> frequency attention ->
    /// ReLU -> BatchNorm, then the 2x2 average downsample.
    pub fn conv_block(&mut self, x: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
        let pad = self.config.kernel / 2;
        let block = &mut self.blocks[index];
        let mut y = x.clone();
        if let Some(ca) = &block.channel_attention {
            y = channel_attention(&y, ca)?;
        }
        y = conv2d(&y, &block.conv_weight, Some(&block.conv_bias), 1, pad)?;
        if let Some(fa) = &block.frequency_attention {
            y = frequency_attention(&y, fa)?;
        }
        y = ops::relu(&y);
        y = batchnorm2d(&y, &block.bn_gamma, &block.bn_beta, &mut block.bn_state)?;
        avg_pool2d_2x2(&y)
    }

    /// Shared feature extractor: four conv blocks, adaptive average pooling,
    /// flatten to `[B, feature_dim]`.
    pub fn encode(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape().to_vec();
        if s.len() != 4 || s[1] != self.config.in_channels || (s[2], s[3]) != self.config.input_hw
        {
            return Err(Error::Dimension(format!(
                "encode: expected [B, {}, {}, {}], got {:?}",
                self.config.in_channels, self.config.input_hw.0, self.config.input_hw.1, s
            )));
        }
        let mut y = x.clone();
        for b in 0..4 {
            y = self.conv_block(&y, b)?;
        }
        let pooled = adaptive_avg_pool2d(&y, (1, 1))?;
        ops::reshape(&pooled, vec![s[0], self.config.feature_dim()])
    }

    /// Classification head. Dropout fires only in train mode.
    pub fn classify(
        &self,
        features: &Tensor<T>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<T>> {
        let v = ops::dropout(features, self.config.dropout_p, train, rng)?;
        ops::linear(&v, &self.classifier_weight, Some(&self.classifier_bias))
    }

    /// Reconstruction head: reshape to `[B, feat, 1, 1]`, four stride-2
    /// transposed convolutions with ReLU between stages (none after the
    /// last), bilinear resize to the exact input size.
    pub fn reconstruct(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let decoder = self.decoder.as_ref().ok_or_else(|| {
            Error::Usage("reconstruct() called with reconstruction disabled".into())
        })?;
        let batch = features.shape()[0];
        let feat = self.config.feature_dim();
        let mut y = ops::reshape(features, vec![batch, feat, 1, 1])?;
        let pad = self.config.decoder_kernel / 2 - 1;
        for (i, (w, b)) in decoder.stages.iter().enumerate() {
            y = conv_transpose2d(&y, w, Some(b), 2, pad)?;
            if i + 1 < decoder.stages.len() {
                y = ops::relu(&y);
            }
        }
        resize_bilinear(&y, self.config.input_hw)
    }

    /// Full forward pass: logits, plus the reconstruction when enabled.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        self.set_mode(if train {
            BatchNormMode::Train
        } else {
            BatchNormMode::Eval
        });
        let v = self.encode(x)?;
        let logits = self.classify(&v, train, rng)?;
        let recon = if self.config.enable_reconstruction {
            Some(self.reconstruct(&v)?)
        } else {
            None
        };
        Ok((logits, recon))
    }

    /// Eval-mode forward without dropout randomness.
    pub fn forward_eval(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(x, false, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            input_hw: (16, 16),
            block_channels: vec![3, 4, 5, 6],
            ..ModelConfig::default()
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn first_block_output_shape() {
        // (B, 2, t, f) -> (B, 8, t/2, f/2) through block 1
        let config = ModelConfig {
            input_hw: (20, 16),
            ..ModelConfig::default()
        };
        let mut params = ModelParams::<f32>::init(&config, &mut rng(1)).unwrap();
        let x = Tensor::zeros(vec![16, 2, 20, 16]);
        let y = params.conv_block(&x, 0).unwrap();
        assert_eq!(y.shape(), &[16, 8, 10, 8]);
    }

    #[test]
    fn block_without_attention_is_bn_relu_conv() {
        let config = ModelConfig {
            enable_channel_attention: false,
            enable_frequency_attention: false,
            input_hw: (16, 16),
            num_classes: 2,
            ..ModelConfig::default()
        };
        let mut params = ModelParams::<f64>::init(&config, &mut rng(3)).unwrap();
        let data: Vec<f64> = (0..2 * 2 * 16 * 16)
            .map(|i| (i % 13) as f64 / 13.0 - 0.4)
            .collect();
        let x = Tensor::from_vec(vec![2, 2, 16, 16], data).unwrap();
        let got = params.conv_block(&x, 0).unwrap();

        // Independent composition of the same primitive ops.
        let block = &params.blocks[0];
        let c = conv2d(&x, &block.conv_weight, Some(&block.conv_bias), 1, 1).unwrap();
        let r = ops::relu(&c);
        let mut state = BatchNormState::new(8);
        let n = batchnorm2d(&r, &block.bn_gamma, &block.bn_beta, &mut state).unwrap();
        let want = avg_pool2d_2x2(&n).unwrap();
        assert_eq!(got.to_vec(), want.to_vec());
    }

    #[test]
    fn encode_produces_feature_vector() {
        let config = tiny_config();
        let mut params = ModelParams::<f32>::init(&config, &mut rng(5)).unwrap();
        let x = Tensor::zeros(vec![3, 2, 16, 16]);
        let v = params.encode(&x).unwrap();
        assert_eq!(v.shape(), &[3, 6]);
    }

    #[test]
    fn encode_rejects_wrong_size() {
        let mut params = ModelParams::<f32>::init(&tiny_config(), &mut rng(5)).unwrap();
        let x = Tensor::zeros(vec![3, 2, 16, 8]);
        assert!(matches!(params.encode(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_input_zero_bias_encodes_to_zero() {
        // With BN in eval mode and identity running stats, zeros stay zeros.
        let config = ModelConfig {
            enable_channel_attention: false,
            enable_frequency_attention: false,
            ..tiny_config()
        };
        let mut params = ModelParams::<f64>::init(&config, &mut rng(7)).unwrap();
        params.set_mode(BatchNormMode::Eval);
        let x = Tensor::zeros(vec![2, 2, 16, 16]);
        let v = params.encode(&x).unwrap();
        assert!(v.data().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn batch_permutation_permutes_rows() {
        let config = tiny_config();
        let mut params = ModelParams::<f64>::init(&config, &mut rng(11)).unwrap();
        params.set_mode(BatchNormMode::Eval);
        let mut r = rng(100);
        let a: Vec<f64> = (0..2 * 16 * 16).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..2 * 16 * 16).map(|_| r.gen_range(-1.0..1.0)).collect();

        let mut ab = a.clone();
        ab.extend_from_slice(&b);
        let mut ba = b.clone();
        ba.extend_from_slice(&a);
        let v_ab = params
            .encode(&Tensor::from_vec(vec![2, 2, 16, 16], ab).unwrap())
            .unwrap();
        let v_ba = params
            .encode(&Tensor::from_vec(vec![2, 2, 16, 16], ba).unwrap())
            .unwrap();
        let feat = config.feature_dim();
        assert_eq!(v_ab.to_vec()[..feat], v_ba.to_vec()[feat..]);
        assert_eq!(v_ab.to_vec()[feat..], v_ba.to_vec()[..feat]);
    }

    #[test]
    fn zero_classifier_gives_uniform_softmax() {
        let config = tiny_config();
        let mut params = ModelParams::<f64>::init(&config, &mut rng(13)).unwrap();
        params.classifier_weight = init::zeros_param(vec![3, 6]);
        params.classifier_bias = init::zeros_param(vec![3]);
        let v = Tensor::from_vec(vec![2, 6], vec![0.3; 12]).unwrap();
        let logits = params.classify(&v, false, &mut rng(0)).unwrap();
        let sm = ops::softmax(&logits, 1).unwrap();
        for &p in sm.data().iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_shift_invariance() {
        let logits = Tensor::<f64>::from_vec(vec![1, 4], vec![0.2, -1.0, 3.0, 0.0]).unwrap();
        let shifted = ops::add_scalar(&logits, 17.5);
        let a = ops::softmax(&logits, 1).unwrap();
        let b = ops::softmax(&shifted, 1).unwrap();
        let argmax = |t: &Tensor<f64>| {
            t.data()
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&logits), argmax(&shifted));
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn default_classifier_width_matches_class_count() {
        let config = ModelConfig::default();
        let params = ModelParams::<f32>::init(&config, &mut rng(17)).unwrap();
        assert_eq!(params.classifier_weight.shape(), &[27, 64]);
    }

    #[test]
    fn reconstruction_shape_round_trip() {
        let config = tiny_config();
        let mut params = ModelParams::<f32>::init(&config, &mut rng(19)).unwrap();
        let x = Tensor::zeros(vec![2, 2, 16, 16]);
        let v = params.encode(&x).unwrap();
        let recon = params.reconstruct(&v).unwrap();
        assert_eq!(recon.shape(), x.shape());
    }

    #[test]
    fn zero_features_zero_biases_reconstruct_to_zero() {
        let config = tiny_config();
        let params = ModelParams::<f64>::init(&config, &mut rng(23)).unwrap();
        let v = Tensor::zeros(vec![1, 6]);
        let recon = params.reconstruct(&v).unwrap();
        assert!(recon.data().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn reconstruct_disabled_is_usage_error() {
        let config = ModelConfig {
            enable_reconstruction: false,
            ..tiny_config()
        };
        let params = ModelParams::<f64>::init(&config, &mut rng(29)).unwrap();
        let v = Tensor::zeros(vec![1, 6]);
        assert!(matches!(params.reconstruct(&v), Err(Error::Usage(_))));
    }

    #[test]
    fn forward_returns_both_heads() {
        let config = tiny_config();
        let mut params = ModelParams::<f32>::init(&config, &mut rng(31)).unwrap();
        let x = Tensor::zeros(vec![2, 2, 16, 16]);
        let (logits, recon) = params.forward(&x, true, &mut rng(0)).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
        assert_eq!(recon.unwrap().shape(), &[2, 2, 16, 16]);
    }

    #[test]
    fn classification_only_forward_omits_reconstruction() {
        let config = ModelConfig {
            enable_reconstruction: false,
            enable_channel_attention: false,
            enable_frequency_attention: false,
            ..tiny_config()
        };
        let mut params = ModelParams::<f32>::init(&config, &mut rng(37)).unwrap();
        let x = Tensor::zeros(vec![2, 2, 16, 16]);
        let (logits, recon) = params.forward(&x, true, &mut rng(0)).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
        assert!(recon.is_none());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let config = tiny_config();
        let mut params = ModelParams::<f64>::init(&config, &mut rng(41)).unwrap();
        let mut r = rng(200);
        let data: Vec<f64> = (0..2 * 2 * 16 * 16).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(vec![2, 2, 16, 16], data).unwrap();
        let (l1, r1) = params.forward_eval(&x).unwrap();
        let (l2, r2) = params.forward_eval(&x).unwrap();
        assert_eq!(l1.to_vec(), l2.to_vec());
        assert_eq!(r1.unwrap().to_vec(), r2.unwrap().to_vec());
    }

    #[test]
    fn count_params_single_affine_oracle() {
        // 64 -> 27 affine with bias: 64*27 + 27 = 1755. Changing only the
        // class count isolates exactly one affine row + one bias element.
        assert_eq!(64 * 27 + 27, 1755);
        let base = ModelConfig {
            enable_channel_attention: false,
            enable_frequency_attention: false,
            enable_reconstruction: false,
            ..ModelConfig::default()
        };
        let one_less = ModelConfig {
            num_classes: 26,
            ..base.clone()
        };
        assert_eq!(count_params(&base) - count_params(&one_less), 64 + 1);
    }

    #[test]
    fn count_params_matches_actual_tensors() {
        for (ca, fa, recon) in [
            (true, true, true),
            (false, false, false),
            (true, false, true),
            (false, true, false),
            (false, false, true),
        ] {
            let config = ModelConfig {
                enable_channel_attention: ca,
                enable_frequency_attention: fa,
                enable_reconstruction: recon,
                ..ModelConfig::default()
            };
            let params = ModelParams::<f32>::init(&config, &mut rng(43)).unwrap();
            let actual: usize = params.trainable().iter().map(|t| t.numel()).sum();
            let uncertainty = if recon { 2 } else { 0 };
            assert_eq!(
                count_params(&config),
                actual + uncertainty,
                "flags ca={ca} fa={fa} recon={recon}"
            );
        }
    }

    #[test]
    fn default_count_in_expected_range() {
        let n = count_params(&ModelConfig::default());
        assert!(
            (80_000..=150_000).contains(&n),
            "default parameter count {n} outside [0.08M, 0.15M]"
        );
    }

    #[test]
    fn disabling_reconstruction_strictly_decreases_count() {
        let full = count_params(&ModelConfig::default());
        let no_recon = count_params(&ModelConfig {
            enable_reconstruction: false,
            ..ModelConfig::default()
        });
        assert!(no_recon < full);
    }

    #[test]
    fn ablation_flags_remove_exact_submodule_sizes() {
        let base = ModelConfig::default();
        let full = count_params(&base);
        // Channel attention: per block fc1 + fc2 with the fallback reduction.
        let mut ca_size = 0;
        for &cin in &base.block_in_channels() {
            let hidden = cin / base.effective_reduction(cin);
            ca_size += hidden * cin + hidden + cin * hidden + cin;
        }
        let no_ca = count_params(&ModelConfig {
            enable_channel_attention: false,
            ..base.clone()
        });
        assert_eq!(full - no_ca, ca_size);

        // Frequency attention: f_b^2 + f_b per block.
        let fa_size: usize = base.block_input_hw().iter().map(|&(_, f)| f * f + f).sum();
        let no_fa = count_params(&ModelConfig {
            enable_frequency_attention: false,
            ..base.clone()
        });
        assert_eq!(full - no_fa, fa_size);

        // Decoder + uncertainty scalars.
        let ch = base.decoder_channels();
        let k2 = base.decoder_kernel * base.decoder_kernel;
        let dec_size: usize =
            (0..4).map(|s| ch[s] * ch[s + 1] * k2 + ch[s + 1]).sum::<usize>() + 2;
        let no_recon = count_params(&ModelConfig {
            enable_reconstruction: false,
            ..base.clone()
        });
        assert_eq!(full - no_recon, dec_size);
    }

    #[test]
    fn shape_contract_over_random_sizes() {
        let mut r = rng(47);
        for _ in 0..5 {
            let t = r.gen_range(16..48);
            let f = r.gen_range(16..48);
            let classes = r.gen_range(2..9);
            let config = ModelConfig {
                num_classes: classes,
                input_hw: (t, f),
                ..ModelConfig::default()
            };
            let mut params = ModelParams::<f32>::init(&config, &mut rng(48)).unwrap();
            let x = Tensor::zeros(vec![2, 2, t, f]);
            let (logits, recon) = params.forward(&x, true, &mut rng(0)).unwrap();
            assert_eq!(logits.shape(), &[2, classes]);
            assert_eq!(recon.unwrap().shape(), &[2, 2, t, f]);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_blocks = ModelConfig {
            block_channels: vec![8, 8, 32, 64],
            ..ModelConfig::default()
        };
        assert!(bad_blocks.validate().is_err());
        let bad_classes = ModelConfig {
            num_classes: 1,
            ..ModelConfig::default()
        };
        assert!(bad_classes.validate().is_err());
        let bad_input = ModelConfig {
            input_hw: (8, 64),
            ..ModelConfig::default()
        };
        assert!(bad_input.validate().is_err());
    }
}
