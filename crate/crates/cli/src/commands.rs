//! Implementations of the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use mtbca_core::data::{
    build_cache, load_cache, load_manifest, save_cache, save_manifest, scan_dataset, split,
    FeatureCache, Split,
};
use mtbca_core::dsp::{self, DspConfig};
use mtbca_core::metrics::{confusion, metrics, ConfusionMatrix, MetricsReport};
use mtbca_core::model::{
    count_params, load_checkpoint, save_checkpoint, Checkpoint, ModelConfig,
};
use mtbca_core::synth::{generate_dataset, SynthSpec};
use mtbca_core::tensor::Tensor;
use mtbca_core::train::{predict_classes, train};

use crate::config::{echo_effective, FileConfig};

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct IngestParams {
    pub root: PathBuf,
    pub out_manifest: PathBuf,
    pub ratio: f64,
    pub seed: u64,
}

pub fn cmd_ingest(p: IngestParams) -> Result<()> {
    echo_effective("ingest", &p, None, None)?;
    if !p.root.exists() {
        bail!("dataset root {} does not exist", p.root.display());
    }
    let (mut manifest, skip) = scan_dataset(&p.root)?;
    split(&mut manifest, p.ratio, p.seed)?;
    save_manifest(&manifest, &p.out_manifest)?;

    let (train_n, test_n) = manifest.split_counts();
    println!(
        "wrote {}: {} classes, {} clips ({} train / {} test)",
        p.out_manifest.display(),
        manifest.class_count(),
        manifest.entries.len(),
        train_n,
        test_n
    );
    for (path, reason) in &skip.skipped {
        println!("skipped {}: {}", path.display(), reason);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct PreprocessParams {
    pub manifest: PathBuf,
    pub out_cache: PathBuf,
    pub force: bool,
}

pub fn cmd_preprocess(p: PreprocessParams, config: &FileConfig) -> Result<()> {
    echo_effective("preprocess", &p, Some(config), None)?;
    let manifest = load_manifest(&p.manifest)?;

    if p.out_cache.exists() {
        match load_cache(&p.out_cache) {
            Ok(existing) if existing.matches_config(&config.dsp) && !p.force => {
                println!(
                    "cache {} is up to date (fingerprint {}); skipping rebuild",
                    p.out_cache.display(),
                    &existing.fingerprint[..12]
                );
                return Ok(());
            }
            Ok(_) => println!("stale cache detected (DSP config changed); rebuilding"),
            Err(_) => println!("existing cache unreadable; rebuilding"),
        }
    }

    let (cache, report) = build_cache(&manifest, &config.dsp)?;
    cache.verify_no_leakage().map_err(anyhow::Error::from)?;
    save_cache(&cache, &p.out_cache)?;
    println!(
        "wrote {}: {} segments from {} clips, feature shape (2, {}, {})",
        p.out_cache.display(),
        report.segments,
        report.clips_ok,
        cache.time_steps,
        cache.mel_bins
    );
    for (path, reason) in &report.failures {
        println!("clip failed {path}: {reason}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct TrainParams {
    pub cache: PathBuf,
    pub out: PathBuf,
}

/// Resolve the model geometry and class count from the cache, leaving every
/// other model setting to the config file and flags.
fn resolve_model_config(base: &ModelConfig, cache: &FeatureCache) -> ModelConfig {
    ModelConfig {
        num_classes: cache.class_names.len(),
        input_hw: (cache.time_steps, cache.mel_bins),
        ..base.clone()
    }
}

pub fn cmd_train(p: TrainParams, config: &FileConfig) -> Result<()> {
    let cache = load_cache(&p.cache)?;
    if !cache.matches_config(&config.dsp) {
        println!(
            "note: cache fingerprint {} differs from the current [dsp] config; training on the cache as stored",
            &cache.fingerprint[..12]
        );
    }
    let model_config = resolve_model_config(&config.model, &cache);
    let resolved = FileConfig {
        dsp: config.dsp.clone(),
        model: model_config.clone(),
        train: config.train.clone(),
    };
    echo_effective("train", &p, Some(&resolved), Some(&p.out))?;

    let samples = cache.samples(Split::Train);
    if samples.is_empty() {
        bail!("cache {} has no train-split records", p.cache.display());
    }
    println!(
        "training on {} segments, {} classes, {} parameters",
        samples.len(),
        model_config.num_classes,
        count_params(&model_config)
    );

    let (mut checkpoint, history) = train(&model_config, &samples, &config.train)?;
    checkpoint.class_names = cache.class_names.clone();

    fs::create_dir_all(&p.out)?;
    let ckpt_path = p.out.join("checkpoint.ckpt");
    save_checkpoint(&checkpoint, &ckpt_path)?;
    fs::write(p.out.join("history.csv"), history.to_csv())?;

    let last = history.records.last().context("empty history")?;
    println!(
        "wrote {} and history.csv: {} epochs, final train accuracy {:.4}, L_total {:.6}",
        ckpt_path.display(),
        history.records.len(),
        last.acc,
        last.l_total
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct EvalParams {
    pub checkpoint: PathBuf,
    pub cache: PathBuf,
    pub out: PathBuf,
}

/// Batched eval-mode predictions over one split.
fn predict_split(
    checkpoint: &mut Checkpoint,
    cache: &FeatureCache,
    which: Split,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let samples = cache.samples(which);
    if samples.is_empty() {
        bail!("cache has no {which} records");
    }
    let (t, f) = (cache.time_steps, cache.mel_bins);
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let mut data = Vec::with_capacity(chunk.len() * 2 * t * f);
        for s in chunk {
            data.extend_from_slice(&s.values);
        }
        let x = Tensor::from_vec(vec![chunk.len(), 2, t, f], data)
            .map_err(anyhow::Error::from)?;
        let (logits, _) = checkpoint.params.forward_eval(&x)?;
        preds.extend(predict_classes(&logits));
        labels.extend(chunk.iter().map(|s| s.label));
    }
    Ok((preds, labels))
}

fn check_compat(model: &ModelConfig, cache: &FeatureCache) -> Result<()> {
    if model.input_hw != (cache.time_steps, cache.mel_bins) {
        bail!(
            "config mismatch on input_hw: checkpoint expects {:?}, cache provides ({}, {})",
            model.input_hw,
            cache.time_steps,
            cache.mel_bins
        );
    }
    if model.num_classes != cache.class_names.len() {
        bail!(
            "config mismatch on num_classes: checkpoint expects {}, cache provides {}",
            model.num_classes,
            cache.class_names.len()
        );
    }
    Ok(())
}

fn write_eval_outputs(
    out: &Path,
    cm: &ConfusionMatrix,
    report: &MetricsReport,
    class_names: &[String],
) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("confusion.csv"), cm.to_csv(class_names))?;
    let payload = json!({
        "class_names": class_names,
        "counts": cm.counts,
        "metrics": report,
    });
    fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&payload)?,
    )?;
    Ok(())
}

pub fn cmd_eval(p: EvalParams, config: &FileConfig) -> Result<()> {
    echo_effective("eval", &p, Some(config), Some(&p.out))?;
    let mut checkpoint = load_checkpoint(&p.checkpoint)?;
    let cache = load_cache(&p.cache)?;
    check_compat(&checkpoint.params.config, &cache)?;

    let classes = cache.class_names.len();
    let (preds, labels) = predict_split(&mut checkpoint, &cache, Split::Test)?;
    let cm = confusion(&preds, &labels, classes)?;
    let report = metrics(&cm)?;
    write_eval_outputs(&p.out, &cm, &report, &cache.class_names)?;

    println!(
        "evaluated {} test segments: overall accuracy {:.4}, macro F1 {:.4}",
        report.total_samples, report.overall_accuracy, report.macro_f1
    );
    println!("wrote {}/metrics.json and confusion.csv", p.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct InferParams {
    pub checkpoint: PathBuf,
    pub wav: PathBuf,
    pub top_k: usize,
}

/// Full DSP on a single clip, producing one `[1, 2, t, f]` tensor per
/// segment.
fn clip_features(path: &Path, config: &DspConfig) -> Result<Vec<Vec<f32>>> {
    let fb = dsp::mel_filterbank(
        config.n_mels,
        config.n_fft,
        config.target_sample_rate,
        config.fmin,
        config.fmax,
        config.mel_c1,
        config.mel_c2,
    )?;
    let clip = dsp::read_wav(path)?;
    let clip = dsp::resample(&clip, config.target_sample_rate)?;
    let full_spec = dsp::stft_power(&clip, config.n_fft, config.hop)?;
    let noise = dsp::estimate_noise(&full_spec, config.noise_fraction)?;
    let segments = dsp::segment(&clip, config.window_s, config.hop_s)?;
    let mut out = Vec::with_capacity(segments.len());
    for seg in &segments {
        let spec = dsp::stft_power(seg, config.n_fft, config.hop)?;
        let clean = dsp::spectral_subtract(&spec, &noise, config.oversubtraction)?;
        let mel = dsp::log_mel(&clean, &fb)?;
        let feat = dsp::make_input_tensor(&mel)?;
        out.push(feat.values);
    }
    Ok(out)
}

fn softmax_row(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| ((v as f64) - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

pub fn cmd_infer(p: InferParams, config: &FileConfig) -> Result<()> {
    echo_effective("infer", &p, Some(config), None)?;
    if p.top_k == 0 {
        bail!("--top-k must be at least 1");
    }
    let mut checkpoint = load_checkpoint(&p.checkpoint)?;
    let model = &checkpoint.params.config;
    let (t, f) = model.input_hw;
    let classes = model.num_classes;

    let segments = clip_features(&p.wav, &config.dsp)?;
    if segments.is_empty() {
        bail!("no segments produced from {}", p.wav.display());
    }
    if segments[0].len() != 2 * t * f {
        bail!(
            "config mismatch on input_hw: checkpoint expects (2, {t}, {f}) features, DSP produced {} values per segment; \
             use the effective-config.toml saved next to the checkpoint",
            segments[0].len()
        );
    }

    // Segment-level class distributions, averaged into a clip-level one.
    let mut clip_probs = vec![0.0f64; classes];
    for values in &segments {
        let x = Tensor::from_vec(vec![1, 2, t, f], values.clone())
            .map_err(anyhow::Error::from)?;
        let (logits, _) = checkpoint.params.forward_eval(&x)?;
        let probs = softmax_row(&logits.to_vec());
        for (acc, p) in clip_probs.iter_mut().zip(&probs) {
            *acc += p;
        }
    }
    for p in clip_probs.iter_mut() {
        *p /= segments.len() as f64;
    }

    let mut ranked: Vec<(usize, f64)> = clip_probs.iter().cloned().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let name_of = |i: usize| -> String {
        checkpoint
            .class_names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("class_{i}"))
    };

    let top: Vec<_> = ranked
        .iter()
        .take(p.top_k)
        .map(|&(i, prob)| json!({"class_index": i, "label": name_of(i), "probability": prob}))
        .collect();
    let payload = json!({
        "clip": p.wav.display().to_string(),
        "segments": segments.len(),
        "top": top,
    });
    println!("{}", serde_json::to_string_pretty(&payload)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct AblateParams {
    pub cache: PathBuf,
    pub out: PathBuf,
}

pub struct Variant {
    pub name: &'static str,
    pub channel_attention: bool,
    pub frequency_attention: bool,
    pub reconstruction: bool,
}

/// The four model variants compared by the ablation run. "Only-Classify"
/// keeps the frequency attention (only the channel attention and the decoder
/// are removed), which is what separates it from the bare CNN.
pub const VARIANTS: [Variant; 4] = [
    Variant {
        name: "CNN",
        channel_attention: false,
        frequency_attention: false,
        reconstruction: false,
    },
    Variant {
        name: "MT-CNN",
        channel_attention: false,
        frequency_attention: false,
        reconstruction: true,
    },
    Variant {
        name: "Only-Classify",
        channel_attention: false,
        frequency_attention: true,
        reconstruction: false,
    },
    Variant {
        name: "MT-BCA-CNN",
        channel_attention: true,
        frequency_attention: true,
        reconstruction: true,
    },
];

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub ca: bool,
    pub classify: bool,
    pub recon: bool,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub params: usize,
    pub error: Option<String>,
}

pub fn ablation_table(cache: &FeatureCache, config: &FileConfig) -> Vec<AblationRow> {
    let train_samples = cache.samples(Split::Train);
    let mut rows = Vec::new();
    for v in &VARIANTS {
        let model_config = ModelConfig {
            enable_channel_attention: v.channel_attention,
            enable_frequency_attention: v.frequency_attention,
            enable_reconstruction: v.reconstruction,
            ..resolve_model_config(&config.model, cache)
        };
        let params = count_params(&model_config);
        let outcome = (|| -> Result<(f64, f64)> {
            let (mut checkpoint, _) = train(&model_config, &train_samples, &config.train)?;
            let (preds, labels) = predict_split(&mut checkpoint, cache, Split::Test)?;
            let report = metrics(&confusion(&preds, &labels, model_config.num_classes)?)?;
            Ok((report.overall_accuracy, report.macro_f1))
        })();
        let row = match outcome {
            Ok((accuracy, macro_f1)) => AblationRow {
                variant: v.name.to_string(),
                ca: v.channel_attention,
                classify: true,
                recon: v.reconstruction,
                accuracy: Some(accuracy),
                macro_f1: Some(macro_f1),
                params,
                error: None,
            },
            Err(e) => AblationRow {
                variant: v.name.to_string(),
                ca: v.channel_attention,
                classify: true,
                recon: v.reconstruction,
                accuracy: None,
                macro_f1: None,
                params,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    rows
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,ca,classify,recon,accuracy,macro_f1,params\n");
    let yn = |b: bool| if b { "Y" } else { "N" };
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.variant,
            yn(r.ca),
            yn(r.classify),
            yn(r.recon),
            r.accuracy.map(|v| format!("{v:.4}")).unwrap_or_else(|| "error".into()),
            r.macro_f1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "error".into()),
            r.params
        ));
    }
    out
}

pub fn cmd_ablate(p: AblateParams, config: &FileConfig) -> Result<()> {
    let cache = load_cache(&p.cache)?;
    let resolved = FileConfig {
        dsp: config.dsp.clone(),
        model: resolve_model_config(&config.model, &cache),
        train: config.train.clone(),
    };
    echo_effective("ablate", &p, Some(&resolved), Some(&p.out))?;

    let rows = ablation_table(&cache, config);
    let csv = ablation_csv(&rows);
    fs::create_dir_all(&p.out)?;
    fs::write(p.out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    for r in &rows {
        if let Some(e) = &r.error {
            println!("variant {} failed: {e}", r.variant);
        }
    }

    // Flag accuracy-ordering gaps against the expected ranking of the full
    // model without failing the run.
    let acc = |name: &str| {
        rows.iter()
            .find(|r| r.variant == name)
            .and_then(|r| r.accuracy)
    };
    if let (Some(full), Some(mt), Some(oc)) =
        (acc("MT-BCA-CNN"), acc("MT-CNN"), acc("Only-Classify"))
    {
        if full < mt {
            println!("note: MT-CNN outperformed MT-BCA-CNN on this run ({mt:.4} vs {full:.4})");
        }
        if full < oc {
            println!(
                "note: Only-Classify outperformed MT-BCA-CNN on this run ({oc:.4} vs {full:.4})"
            );
        }
    }
    println!("wrote {}/ablation.csv", p.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct SynthParams {
    pub out: PathBuf,
    pub classes: usize,
    pub clips_per_class: usize,
    pub seed: u64,
}

pub fn cmd_synth(p: SynthParams) -> Result<()> {
    echo_effective("synth", &p, None, None)?;
    let spec = SynthSpec {
        classes: p.classes,
        clips_per_class: p.clips_per_class,
        seed: p.seed,
        ..SynthSpec::default()
    };
    generate_dataset(&p.out, &spec)?;
    println!(
        "wrote {} tone classes x {} clips under {}",
        p.classes,
        p.clips_per_class,
        p.out.display()
    );
    Ok(())
}

// Small helper shared by train/eval-style commands.
pub fn ensure_parent_dir(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}
