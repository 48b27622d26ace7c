//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic "MTBCACP1"
//! bytes 8..12   header length H (u32)
//! bytes 12..12+H JSON header: version, ModelConfig, entry table
//!               (name, shape, offset, len, trainable), payload element
//!               count, hex SHA-256 of the payload bytes
//! rest          payload: f32 little-endian values, entries concatenated
//!               at their stated offsets (in elements)
//! ```
//!
//! The entry table covers every learnable tensor, the BatchNorm running
//! statistics, and the two task-uncertainty scalars. Shapes in the table
//! must match what the embedded `ModelConfig` implies; loading verifies
//! this, the payload length, and the checksum, and names the offending
//! field on mismatch.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BlockParams, DecoderParams, ModelConfig, ModelParams};
use crate::attention::{ChannelAttentionParams, FrequencyAttentionParams};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, BatchNormState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MTBCACP1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume or serve a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// Task-uncertainty parameters (log rho^2); zero when reconstruction is
    /// disabled.
    pub s_cls: f32,
    pub s_recon: f32,
    /// Class labels in index order; lets inference print names instead of
    /// bare indices. May be empty.
    pub class_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    offset: usize,
    len: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    #[serde(default)]
    class_names: Vec<String>,
    entries: Vec<HeaderEntry>,
    payload_elems: usize,
    payload_sha256: String,
}

type NamedArray = (String, Vec<usize>, Vec<f32>, bool);

fn push_tensor(out: &mut Vec<NamedArray>, name: String, t: &Tensor<f32>) {
    out.push((name, t.shape().to_vec(), t.to_vec(), true));
}

/// Named arrays in canonical checkpoint order.
fn named_arrays(ckpt: &Checkpoint) -> Vec<NamedArray> {
    let mut out: Vec<NamedArray> = Vec::new();
    for (i, b) in ckpt.params.blocks.iter().enumerate() {
        let p = format!("block{i}");
        if let Some(ca) = &b.channel_attention {
            push_tensor(&mut out, format!("{p}.channel_attention.fc1.weight"), &ca.fc1_weight);
            push_tensor(&mut out, format!("{p}.channel_attention.fc1.bias"), &ca.fc1_bias);
            push_tensor(&mut out, format!("{p}.channel_attention.fc2.weight"), &ca.fc2_weight);
            push_tensor(&mut out, format!("{p}.channel_attention.fc2.bias"), &ca.fc2_bias);
        }
        push_tensor(&mut out, format!("{p}.conv.weight"), &b.conv_weight);
        push_tensor(&mut out, format!("{p}.conv.bias"), &b.conv_bias);
        if let Some(fa) = &b.frequency_attention {
            push_tensor(&mut out, format!("{p}.frequency_attention.score.weight"), &fa.score_weight);
            push_tensor(&mut out, format!("{p}.frequency_attention.score.bias"), &fa.score_bias);
        }
        push_tensor(&mut out, format!("{p}.bn.gamma"), &b.bn_gamma);
        push_tensor(&mut out, format!("{p}.bn.beta"), &b.bn_beta);
        let ch = b.bn_state.channels();
        out.push((
            format!("{p}.bn.running_mean"),
            vec![ch],
            b.bn_state.running_mean.clone(),
            false,
        ));
        out.push((
            format!("{p}.bn.running_var"),
            vec![ch],
            b.bn_state.running_var.clone(),
            false,
        ));
    }
    push_tensor(&mut out, "classifier.weight".into(), &ckpt.params.classifier_weight);
    push_tensor(&mut out, "classifier.bias".into(), &ckpt.params.classifier_bias);
    if let Some(dec) = &ckpt.params.decoder {
        for (s, (w, b)) in dec.stages.iter().enumerate() {
            push_tensor(&mut out, format!("decoder.stage{s}.weight"), w);
            push_tensor(&mut out, format!("decoder.stage{s}.bias"), b);
        }
    }
    let trainable_unc = ckpt.params.config.enable_reconstruction;
    out.push(("uncertainty.s_cls".into(), vec![1], vec![ckpt.s_cls], trainable_unc));
    out.push(("uncertainty.s_recon".into(), vec![1], vec![ckpt.s_recon], trainable_unc));
    out
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.params.config.validate()?;
    let arrays = named_arrays(ckpt);

    let mut entries = Vec::with_capacity(arrays.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, shape, data, trainable) in &arrays {
        entries.push(HeaderEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len(),
            trainable: *trainable,
        });
        offset += data.len();
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut hasher = Sha256::new();
    hasher.update(&payload);
    let sha: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();

    let header = Header {
        version: CHECKPOINT_VERSION,
        config: ckpt.params.config.clone(),
        class_names: ckpt.class_names.clone(),
        entries,
        payload_elems: offset,
        payload_sha256: sha,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization failed: {e}")))?;

    let mut bytes = Vec::with_capacity(12 + header_json.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if 12 + header_len > bytes.len() {
        return Err(Error::Checkpoint(format!(
            "truncated header: need {} bytes, file has {}",
            12 + header_len,
            bytes.len()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::Checkpoint(format!("corrupt header JSON: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file is v{}, this build reads v{}",
            header.version, CHECKPOINT_VERSION
        )));
    }
    header.config.validate()?;

    let payload_bytes = &bytes[12 + header_len..];
    if payload_bytes.len() != header.payload_elems * 4 {
        return Err(Error::Checkpoint(format!(
            "corrupt payload: expected {} bytes ({} f32 values), found {}",
            header.payload_elems * 4,
            header.payload_elems,
            payload_bytes.len()
        )));
    }
    let mut hasher = Sha256::new();
    hasher.update(payload_bytes);
    let sha: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    if sha != header.payload_sha256 {
        return Err(Error::Checkpoint("corrupt payload: checksum mismatch".into()));
    }

    let mut map: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for e in &header.entries {
        let numel: usize = e.shape.iter().product();
        if numel != e.len || e.offset + e.len > header.payload_elems {
            return Err(Error::Checkpoint(format!(
                "corrupt entry table at field '{}': shape {:?}, len {}, offset {}",
                e.name, e.shape, e.len, e.offset
            )));
        }
        let data: Vec<f32> = payload_bytes[e.offset * 4..(e.offset + e.len) * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if map.insert(e.name.clone(), (e.shape.clone(), data)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate field '{}'", e.name)));
        }
    }

    let header_class_names = header.class_names;
    let config = header.config;
    let mut take = |name: String, shape: Vec<usize>| -> Result<Vec<f32>> {
        let (got_shape, data) = map
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing field '{name}'")))?;
        if got_shape != shape {
            return Err(Error::Checkpoint(format!(
                "field '{name}' has shape {got_shape:?}, config implies {shape:?}"
            )));
        }
        Ok(data)
    };
    let param = |shape: Vec<usize>, data: Vec<f32>| Tensor::param(shape, data);

    let ins = config.block_in_channels();
    let dims = config.block_input_hw();
    let k = config.kernel;
    let mut blocks = Vec::with_capacity(4);
    for i in 0..4 {
        let p = format!("block{i}");
        let cin = ins[i];
        let cout = config.block_channels[i];
        let channel_attention = if config.enable_channel_attention {
            let r = config.effective_reduction(cin);
            let hidden = cin / r;
            Some(ChannelAttentionParams {
                fc1_weight: param(
                    vec![hidden, cin],
                    take(format!("{p}.channel_attention.fc1.weight"), vec![hidden, cin])?,
                )?,
                fc1_bias: param(
                    vec![hidden],
                    take(format!("{p}.channel_attention.fc1.bias"), vec![hidden])?,
                )?,
                fc2_weight: param(
                    vec![cin, hidden],
                    take(format!("{p}.channel_attention.fc2.weight"), vec![cin, hidden])?,
                )?,
                fc2_bias: param(
                    vec![cin],
                    take(format!("{p}.channel_attention.fc2.bias"), vec![cin])?,
                )?,
                reduction: r,
            })
        } else {
            None
        };
        let conv_weight = param(
            vec![cout, cin, k, k],
            take(format!("{p}.conv.weight"), vec![cout, cin, k, k])?,
        )?;
        let conv_bias = param(vec![cout], take(format!("{p}.conv.bias"), vec![cout])?)?;
        let frequency_attention = if config.enable_frequency_attention {
            let f = dims[i].1;
            let g = crate::attention::gaussian_smoothing_matrix(f, config.omega)?;
            Some(FrequencyAttentionParams {
                score_weight: param(
                    vec![f, f],
                    take(format!("{p}.frequency_attention.score.weight"), vec![f, f])?,
                )?,
                score_bias: param(
                    vec![f],
                    take(format!("{p}.frequency_attention.score.bias"), vec![f])?,
                )?,
                omega: config.omega,
                smoothing: g.to_tensor(),
            })
        } else {
            None
        };
        let bn_gamma = param(vec![cout], take(format!("{p}.bn.gamma"), vec![cout])?)?;
        let bn_beta = param(vec![cout], take(format!("{p}.bn.beta"), vec![cout])?)?;
        let running_mean = take(format!("{p}.bn.running_mean"), vec![cout])?;
        let running_var = take(format!("{p}.bn.running_var"), vec![cout])?;
        if running_var.iter().any(|&v| v <= 0.0) {
            return Err(Error::Checkpoint(format!(
                "field '{p}.bn.running_var' must be strictly positive"
            )));
        }
        let mut bn_state = BatchNormState::new(cout);
        bn_state.running_mean = running_mean;
        bn_state.running_var = running_var;
        bn_state.mode = BatchNormMode::Eval;
        blocks.push(BlockParams {
            channel_attention,
            conv_weight,
            conv_bias,
            frequency_attention,
            bn_gamma,
            bn_beta,
            bn_state,
        });
    }

    let feat = config.feature_dim();
    let classes = config.num_classes;
    let classifier_weight = param(
        vec![classes, feat],
        take("classifier.weight".into(), vec![classes, feat])?,
    )?;
    let classifier_bias = param(vec![classes], take("classifier.bias".into(), vec![classes])?)?;

    let decoder = if config.enable_reconstruction {
        let ch = config.decoder_channels();
        let dk = config.decoder_kernel;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let w = param(
                vec![ch[s], ch[s + 1], dk, dk],
                take(format!("decoder.stage{s}.weight"), vec![ch[s], ch[s + 1], dk, dk])?,
            )?;
            let b = param(
                vec![ch[s + 1]],
                take(format!("decoder.stage{s}.bias"), vec![ch[s + 1]])?,
            )?;
            stages.push((w, b));
        }
        Some(DecoderParams { stages })
    } else {
        None
    };

    let s_cls = take("uncertainty.s_cls".into(), vec![1])?[0];
    let s_recon = take("uncertainty.s_recon".into(), vec![1])?[0];

    if let Some((name, _)) = map.into_iter().next() {
        return Err(Error::Checkpoint(format!(
            "unexpected field '{name}' not implied by the stored config"
        )));
    }

    Ok(Checkpoint {
        params: ModelParams {
            config,
            blocks,
            classifier_weight,
            classifier_bias,
            decoder,
        },
        s_cls,
        s_recon,
        class_names: header_class_names,
    })
}
