//! Losses, uncertainty-based task weighting, and the training loop.
//!
//! The joint objective weights the classification and reconstruction losses
//! by learned noise parameters: with `s = log rho^2`,
//!
//! ```text
//! L_total = exp(-s_cls)/2 * L1 + exp(-s_recon)/2 * L2 + (s_cls + s_recon)/2
//! ```
//!
//! which is the weighted sum `lambda_i = 1/(2 rho_i^2)` plus the
//! `log(rho_cls * rho_recon)` regularizer, in a parameterization that keeps
//! `rho^2 = exp(s)` positive by construction. The stationary point in `s` is
//! `exp(s_i) = L_i`. A fixed-lambda variant is available as a config switch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig, ModelParams};
use crate::tensor::{ops, Adam, BatchNormMode, Scalar, Tensor};

/// Learned task-noise parameters, stored as `s = log rho^2`.
#[derive(Debug, Clone)]
pub struct UncertaintyWeights<T: Scalar> {
    pub s_cls: Tensor<T>,
    pub s_recon: Tensor<T>,
}

impl<T: Scalar> UncertaintyWeights<T> {
    /// Both noise parameters start at rho = 1 (s = 0).
    pub fn new() -> Self {
        Self::from_values(T::zero(), T::zero())
    }

    pub fn from_values(s_cls: T, s_recon: T) -> Self {
        UncertaintyWeights {
            s_cls: Tensor::param(vec![1], vec![s_cls]).expect("scalar"),
            s_recon: Tensor::param(vec![1], vec![s_recon]).expect("scalar"),
        }
    }

    pub fn trainable(&self) -> Vec<Tensor<T>> {
        vec![self.s_cls.clone(), self.s_recon.clone()]
    }

    /// `rho_i = exp(s_i / 2)`.
    pub fn rho_cls(&self) -> f64 {
        (self.s_cls.item().to_f64() / 2.0).exp()
    }

    pub fn rho_recon(&self) -> f64 {
        (self.s_recon.item().to_f64() / 2.0).exp()
    }

    /// `lambda_i = 1 / (2 rho_i^2) = exp(-s_i) / 2`.
    pub fn lambda_cls(&self) -> f64 {
        (-self.s_cls.item().to_f64()).exp() / 2.0
    }

    pub fn lambda_recon(&self) -> f64 {
        (-self.s_recon.item().to_f64()).exp() / 2.0
    }
}

impl<T: Scalar> Default for UncertaintyWeights<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Task weighting strategy for the joint loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Weighting {
    /// Learned noise parameters (the default).
    Dynamic,
    /// Fixed task weights `lambda_0 * L1 + lambda_1 * L2`.
    Static { lambda_cls: f64, lambda_recon: f64 },
}

/// Mean cross-entropy of the true class under softmax(logits).
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    ops::cross_entropy_logits(logits, labels)
}

/// Mean squared reconstruction error.
pub fn mse_recon<T: Scalar>(recon: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    ops::mse(recon, target)
}

/// Joint objective. With `l2 = None` (reconstruction disabled) this is just
/// `L1`: a fixed unit classification weight and no regularizer.
pub fn total_loss<T: Scalar>(
    l1: &Tensor<T>,
    l2: Option<&Tensor<T>>,
    uw: &UncertaintyWeights<T>,
    weighting: Weighting,
) -> Result<Tensor<T>> {
    let Some(l2) = l2 else {
        return Ok(l1.clone());
    };
    match weighting {
        Weighting::Static {
            lambda_cls,
            lambda_recon,
        } => {
            let a = ops::scale(l1, lambda_cls);
            let b = ops::scale(l2, lambda_recon);
            ops::add(&a, &b)
        }
        Weighting::Dynamic => {
            let w_cls = ops::exp(&ops::neg(&uw.s_cls));
            let w_recon = ops::exp(&ops::neg(&uw.s_recon));
            let term_cls = ops::scale(&ops::mul(&w_cls, l1)?, 0.5);
            let term_recon = ops::scale(&ops::mul(&w_recon, l2)?, 0.5);
            let regularizer = ops::scale(&ops::add(&uw.s_cls, &uw.s_recon)?, 0.5);
            ops::add(&ops::add(&term_cls, &term_recon)?, &regularizer)
        }
    }
}

/// Training-run hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_after_epoch30: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub dynamic_weighting: bool,
    /// Static-path weights, used when `dynamic_weighting` is off.
    pub lambda_cls: f64,
    pub lambda_recon: f64,
    /// Stop when train loss has not improved for `patience` epochs.
    pub early_stop: bool,
    pub patience: usize,
    /// Stop once train accuracy reaches this value (e.g. overfit gates).
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 100,
            lr_initial: 1e-3,
            lr_after_epoch30: 1e-4,
            seed: 42,
            shuffle: true,
            dynamic_weighting: true,
            lambda_cls: 1.0,
            lambda_recon: 1.0,
            early_stop: false,
            patience: 15,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 (batch statistics), got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.lr_initial <= 0.0 || self.lr_after_epoch30 <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn weighting(&self) -> Weighting {
        if self.dynamic_weighting {
            Weighting::Dynamic
        } else {
            Weighting::Static {
                lambda_cls: self.lambda_cls,
                lambda_recon: self.lambda_recon,
            }
        }
    }
}

/// Step schedule: `lr_initial` before epoch 30, `lr_after_epoch30` from then
/// on.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    if epoch < 30 {
        config.lr_initial
    } else {
        config.lr_after_epoch30
    }
}

/// One preprocessed training example: a flattened `[2, t, f]` feature map and
/// its class index.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub values: Vec<f32>,
    pub label: usize,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub l_total: f64,
    pub acc: f64,
    pub rho_cls: f64,
    pub rho_recon: f64,
    pub lr: f64,
}

/// One record per completed epoch.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l1,l2,l_total,acc,rho_cls,rho_recon,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, r.l1, r.l2, r.l_total, r.acc, r.rho_cls, r.rho_recon, r.lr
            ));
        }
        out
    }

    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map(|r| r.acc).unwrap_or(0.0)
    }

    pub fn best_accuracy(&self) -> f64 {
        self.records.iter().map(|r| r.acc).fold(0.0, f64::max)
    }
}

/// Row-wise argmax of `[B, C]` logits.
pub fn predict_classes<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let s = logits.shape();
    let (batch, classes) = (s[0], s[1]);
    let d = logits.data();
    (0..batch)
        .map(|b| {
            let row = &d[b * classes..(b + 1) * classes];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}

fn assemble_batch(
    samples: &[TrainSample],
    indices: &[usize],
    config: &ModelConfig,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let (t, f) = config.input_hw;
    let plane = 2 * t * f;
    let mut data = Vec::with_capacity(indices.len() * plane);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(&samples[i].values);
        labels.push(samples[i].label);
    }
    let x = Tensor::from_vec(vec![indices.len(), 2, t, f], data)?;
    Ok((x, labels))
}

/// Seeded training loop over preprocessed samples.
///
/// Per batch: forward, classification loss, reconstruction loss against the
/// input when enabled, joint loss, backward, one Adam step over the model
/// parameters and (dynamic weighting) the uncertainty scalars. BatchNorm runs
/// in train mode; the learning rate follows [`lr_schedule`]. A non-finite
/// loss aborts with the epoch, batch, and learning rate in the message.
pub fn train(
    model_config: &ModelConfig,
    samples: &[TrainSample],
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    model_config.validate()?;
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("train: empty training set".into()));
    }
    let (t, f) = model_config.input_hw;
    let plane = 2 * t * f;
    for (i, s) in samples.iter().enumerate() {
        if s.values.len() != plane {
            return Err(Error::Dimension(format!(
                "train: sample {} has {} values, model expects 2*{}*{} = {}",
                i,
                s.values.len(),
                t,
                f,
                plane
            )));
        }
        if s.label >= model_config.num_classes {
            return Err(Error::Data(format!(
                "train: sample {} label {} out of range [0, {})",
                i, s.label, model_config.num_classes
            )));
        }
    }

    // Independent deterministic streams: init, shuffle, dropout.
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);

    let mut params = ModelParams::<f32>::init(model_config, &mut init_rng)?;
    let uw = UncertaintyWeights::<f32>::new();
    let recon_enabled = model_config.enable_reconstruction;

    let mut opt_params = params.trainable();
    if recon_enabled && config.dynamic_weighting {
        opt_params.extend(uw.trainable());
    }
    let mut optimizer = Adam::new(opt_params, config.lr_initial);

    let mut history = TrainHistory::default();
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        optimizer.set_learning_rate(lr_schedule(epoch, config));
        if config.shuffle {
            // Fisher-Yates with the dedicated stream.
            for i in (1..indices.len()).rev() {
                let j = shuffle_rng.gen_range(0..=i);
                indices.swap(i, j);
            }
        }

        let mut sum_l1 = 0.0f64;
        let mut sum_l2 = 0.0f64;
        let mut sum_total = 0.0f64;
        let mut correct = 0usize;
        let mut batches = 0usize;

        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let (x, labels) = assemble_batch(samples, chunk, model_config)?;
            let (logits, recon) = params.forward(&x, true, &mut dropout_rng)?;

            let l1 = cross_entropy(&logits, &labels)?;
            let l2 = match &recon {
                Some(r) => Some(mse_recon(r, &x)?),
                None => None,
            };
            let loss = total_loss(&l1, l2.as_ref(), &uw, config.weighting())?;

            let loss_val = loss.item() as f64;
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "train: non-finite loss {loss_val} at epoch {epoch}, batch {batch_idx}, lr {}",
                    lr_schedule(epoch, config)
                )));
            }

            optimizer.zero_grad();
            loss.backward()?;
            optimizer.step()?;

            let preds = predict_classes(&logits);
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            sum_l1 += l1.item() as f64;
            sum_l2 += l2.map(|t| t.item() as f64).unwrap_or(0.0);
            sum_total += loss_val;
            batches += 1;
        }

        let n_batches = batches.max(1) as f64;
        let record = EpochRecord {
            epoch,
            l1: sum_l1 / n_batches,
            l2: sum_l2 / n_batches,
            l_total: sum_total / n_batches,
            acc: correct as f64 / samples.len() as f64,
            rho_cls: uw.rho_cls(),
            rho_recon: uw.rho_recon(),
            lr: lr_schedule(epoch, config),
        };
        let epoch_loss = record.l_total;
        let epoch_acc = record.acc;
        history.records.push(record);

        if let Some(target) = config.stop_at_train_accuracy {
            if epoch_acc >= target {
                break;
            }
        }
        if config.early_stop {
            if epoch_loss < best_loss {
                best_loss = epoch_loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience.max(1) {
                    break;
                }
            }
        }
    }

    params.set_mode(BatchNormMode::Eval);
    let checkpoint = Checkpoint {
        params,
        s_cls: uw.s_cls.item(),
        s_recon: uw.s_recon.item(),
        class_names: Vec::new(),
    };
    Ok((checkpoint, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradients;

    #[test]
    fn lr_schedule_step_function() {
        let config = TrainConfig::default();
        assert_eq!(lr_schedule(0, &config), 0.001);
        assert_eq!(lr_schedule(29, &config), 0.001);
        assert_eq!(lr_schedule(30, &config), 0.0001);
        assert_eq!(lr_schedule(99, &config), 0.0001);
        for epoch in 0..=100 {
            let want = if epoch < 30 { 0.001 } else { 0.0001 };
            assert_eq!(lr_schedule(epoch, &config), want);
        }
    }

    #[test]
    fn total_loss_at_unit_rho() {
        // s = 0 (rho = 1): L_total = L1/2 + L2/2
        let uw = UncertaintyWeights::<f64>::new();
        let l1 = Tensor::scalar(3.0);
        let l2 = Tensor::scalar(1.0);
        let total = total_loss(&l1, Some(&l2), &uw, Weighting::Dynamic).unwrap();
        assert!((total.item() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_without_reconstruction_is_l1() {
        let uw = UncertaintyWeights::<f64>::from_values(0.7, -0.3);
        let l1 = Tensor::scalar(1.25);
        let total = total_loss(&l1, None, &uw, Weighting::Dynamic).unwrap();
        assert_eq!(total.item(), 1.25);
    }

    #[test]
    fn static_weighting_path() {
        let uw = UncertaintyWeights::<f64>::new();
        let l1 = Tensor::scalar(2.0);
        let l2 = Tensor::scalar(4.0);
        let total = total_loss(
            &l1,
            Some(&l2),
            &uw,
            Weighting::Static {
                lambda_cls: 1.0,
                lambda_recon: 0.25,
            },
        )
        .unwrap();
        assert!((total.item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_matches_definition() {
        // lambda = 1/(2 exp(s)) for a spread of s values
        for s in [-1.5, -0.2, 0.0, 0.4, 2.0] {
            let uw = UncertaintyWeights::<f64>::from_values(s, -s);
            assert!((uw.lambda_cls() - 1.0 / (2.0 * s.exp())).abs() < 1e-12);
            assert!((uw.lambda_recon() - 1.0 / (2.0 * (-s).exp())).abs() < 1e-12);
            assert!(uw.rho_cls() > 0.0);
        }
    }

    #[test]
    fn total_loss_gradient_wrt_s() {
        // dL/ds_cls = (1 - exp(-s_cls) * L1) / 2, checked against finite
        // differences and the closed form.
        let uw = UncertaintyWeights::<f64>::from_values(0.3, -0.6);
        let l1 = Tensor::scalar(2.0);
        let l2 = Tensor::scalar(0.5);

        let err = check_gradients(
            &[uw.s_cls.clone(), uw.s_recon.clone()],
            || total_loss(&l1, Some(&l2), &uw, Weighting::Dynamic),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "finite-difference disagreement {err}");

        uw.s_cls.zero_grad();
        uw.s_recon.zero_grad();
        let total = total_loss(&l1, Some(&l2), &uw, Weighting::Dynamic).unwrap();
        total.backward().unwrap();
        let g = uw.s_cls.grad().unwrap()[0];
        let want = 0.5 * (1.0 - (-0.3f64).exp() * 2.0);
        assert!((g - want).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_stationary_point() {
        // With L1 = 2.0 and L2 = 0.5 fixed, optimizing only the s terms
        // drives exp(s_cls) -> 2.0 and exp(s_recon) -> 0.5.
        let uw = UncertaintyWeights::<f64>::new();
        let l1 = Tensor::scalar(2.0);
        let l2 = Tensor::scalar(0.5);
        let mut opt = Adam::new(uw.trainable(), 0.02);
        for _ in 0..2000 {
            opt.zero_grad();
            let loss = total_loss(&l1, Some(&l2), &uw, Weighting::Dynamic).unwrap();
            loss.backward().unwrap();
            opt.step().unwrap();
        }
        let rho2_cls = uw.s_cls.item().exp();
        let rho2_recon = uw.s_recon.item().exp();
        assert!((rho2_cls - 2.0).abs() < 1e-3, "exp(s_cls) = {rho2_cls}");
        assert!((rho2_recon - 0.5).abs() < 1e-3, "exp(s_recon) = {rho2_recon}");
    }

    fn toy_samples(classes: usize, per_class: usize, t: usize, f: usize) -> Vec<TrainSample> {
        // Linearly separable toy data: each class lights up a distinct
        // frequency band.
        let mut out = Vec::new();
        for c in 0..classes {
            for k in 0..per_class {
                let mut values = vec![0.0f32; 2 * t * f];
                let band = (c * f / classes + k % 2) % f;
                for ti in 0..t {
                    values[ti * f + band] = 1.0;
                }
                out.push(TrainSample { values, label: c });
            }
        }
        out
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            num_classes: 2,
            input_hw: (16, 16),
            block_channels: vec![3, 4, 5, 6],
            dropout_p: 0.1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let model = tiny_model();
        let samples = toy_samples(2, 4, 16, 16);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let (_, h1) = train(&model, &samples, &config).unwrap();
        let (_, h2) = train(&model, &samples, &config).unwrap();
        let t1: Vec<f64> = h1.records.iter().map(|r| r.l_total).collect();
        let t2: Vec<f64> = h2.records.iter().map(|r| r.l_total).collect();
        assert_eq!(t1, t2, "loss trajectories must be bit-identical");
        assert_eq!(h1.to_csv(), h2.to_csv());
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        let model = tiny_model();
        let samples = toy_samples(2, 8, 16, 16);
        let config = TrainConfig {
            epochs: 12,
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let (ckpt, history) = train(&model, &samples, &config).unwrap();
        let first = history.records.first().unwrap().l1;
        let last = history.records.last().unwrap().l1;
        assert!(last < first, "l1 {first} -> {last} did not decrease");
        assert_eq!(history.records.len(), 12);
        assert_eq!(ckpt.params.config, model);
    }

    #[test]
    fn empty_training_set_rejected() {
        let model = tiny_model();
        let config = TrainConfig::default();
        assert!(matches!(train(&model, &[], &config), Err(Error::Data(_))));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let model = tiny_model();
        let samples = vec![TrainSample {
            values: vec![0.0; 2 * 16 * 16],
            label: 5,
        }];
        assert!(matches!(
            train(&model, &samples, &TrainConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn csv_header_and_row_count() {
        let model = tiny_model();
        let samples = toy_samples(2, 3, 16, 16);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 3,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_, history) = train(&model, &samples, &config).unwrap();
        let csv = history.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,l1,l2,l_total,acc,rho_cls,rho_recon,lr");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn stop_at_accuracy_halts_early() {
        let model = tiny_model();
        let samples = toy_samples(2, 8, 16, 16);
        let config = TrainConfig {
            epochs: 100,
            batch_size: 4,
            seed: 3,
            stop_at_train_accuracy: Some(0.9),
            ..TrainConfig::default()
        };
        let (_, history) = train(&model, &samples, &config).unwrap();
        assert!(history.records.len() < 100);
        assert!(history.final_accuracy() >= 0.9);
    }
}
