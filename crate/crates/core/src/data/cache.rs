//! Preprocessed-feature cache.
//!
//! One container file holds every segment-level feature tensor of a dataset,
//! preceded by a text header carrying the DSP config fingerprint (stale-cache
//! detection), the feature geometry, and the class table. Records follow as
//! fixed-size little-endian binary: entry id, segment index, class index,
//! split flag, then `2*t*f` f32 values.

use std::fs;
use std::path::Path;

use super::{DatasetManifest, Split};
use crate::dsp::{self, DspConfig};
use crate::error::{Error, Result};
use crate::train::TrainSample;

#[derive(Debug, Clone)]
pub struct CacheRecord {
    /// Index of the source clip in the manifest.
    pub entry_id: u32,
    pub segment_index: u32,
    pub class_index: u32,
    pub split: Split,
    /// Flattened `[2, t, f]` feature tensor.
    pub values: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub fingerprint: String,
    pub time_steps: usize,
    pub mel_bins: usize,
    pub class_names: Vec<String>,
    pub records: Vec<CacheRecord>,
}

/// Per-clip preprocessing outcomes.
#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub clips_ok: usize,
    pub segments: usize,
    pub failures: Vec<(String, String)>,
}

impl FeatureCache {
    pub fn matches_config(&self, config: &DspConfig) -> bool {
        self.fingerprint == config.fingerprint()
    }

    pub fn samples(&self, split: Split) -> Vec<TrainSample> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| TrainSample {
                values: r.values.clone(),
                label: r.class_index as usize,
            })
            .collect()
    }

    /// Every clip contributes to exactly one split.
    pub fn verify_no_leakage(&self) -> Result<()> {
        use std::collections::HashMap;
        let mut seen: HashMap<u32, Split> = HashMap::new();
        for r in &self.records {
            if let Some(prev) = seen.insert(r.entry_id, r.split) {
                if prev != r.split {
                    return Err(Error::Cache(format!(
                        "clip {} has segments in both splits",
                        r.entry_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Run the full per-clip DSP pipeline over a manifest.
///
/// Per clip: read, resample to the target rate, estimate the noise profile
/// from the whole clip's spectrogram, segment the time-domain signal, then
/// per segment: power spectrogram, spectral subtraction with the clip-level
/// profile, log-Mel, 2-channel feature tensor. Clip-level failures are
/// recorded and skipped; an empty result is an error.
pub fn build_cache(manifest: &DatasetManifest, config: &DspConfig) -> Result<(FeatureCache, BuildReport)> {
    config.validate()?;
    let fb = dsp::mel_filterbank(
        config.n_mels,
        config.n_fft,
        config.target_sample_rate,
        config.fmin,
        config.fmax,
        config.mel_c1,
        config.mel_c2,
    )?;

    let mut report = BuildReport::default();
    let mut records: Vec<CacheRecord> = Vec::new();
    let mut geometry: Option<(usize, usize)> = None;

    for (entry_id, entry) in manifest.entries.iter().enumerate() {
        let clip_result = (|| -> Result<Vec<CacheRecord>> {
            let clip = dsp::read_wav(&entry.path)?;
            let clip = dsp::resample(&clip, config.target_sample_rate)?;
            let full_spec = dsp::stft_power(&clip, config.n_fft, config.hop)?;
            let noise = dsp::estimate_noise(&full_spec, config.noise_fraction)?;
            let segments = dsp::segment(&clip, config.window_s, config.hop_s)?;
            let mut out = Vec::with_capacity(segments.len());
            for (seg_idx, seg) in segments.iter().enumerate() {
                let spec = dsp::stft_power(seg, config.n_fft, config.hop)?;
                let clean = dsp::spectral_subtract(&spec, &noise, config.oversubtraction)?;
                let mel = dsp::log_mel(&clean, &fb)?;
                let feat = dsp::make_input_tensor(&mel)?;
                out.push(CacheRecord {
                    entry_id: entry_id as u32,
                    segment_index: seg_idx as u32,
                    class_index: entry.class_index as u32,
                    split: entry.split,
                    values: feat.values,
                });
            }
            Ok(out)
        })();

        match clip_result {
            Ok(mut clip_records) => {
                for r in &clip_records {
                    let t = r.values.len() / 2 / config.n_mels;
                    let g = (t, config.n_mels);
                    match geometry {
                        None => geometry = Some(g),
                        Some(existing) if existing != g => {
                            return Err(Error::Cache(format!(
                                "inconsistent feature geometry: {existing:?} vs {g:?} at clip {}",
                                entry.path.display()
                            )));
                        }
                        _ => {}
                    }
                }
                report.clips_ok += 1;
                report.segments += clip_records.len();
                records.append(&mut clip_records);
            }
            Err(e) => report
                .failures
                .push((entry.path.display().to_string(), e.to_string())),
        }
    }

    if records.is_empty() {
        return Err(Error::Cache(format!(
            "no feature records produced ({} clip failures)",
            report.failures.len()
        )));
    }
    let (time_steps, mel_bins) = geometry.unwrap();

    Ok((
        FeatureCache {
            fingerprint: config.fingerprint(),
            time_steps,
            mel_bins,
            class_names: manifest.class_names.clone(),
            records,
        },
        report,
    ))
}

pub fn save_cache(cache: &FeatureCache, path: impl AsRef<Path>) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(b"MTBCA-FEATURE-CACHE v1\n");
    out.extend_from_slice(format!("fingerprint {}\n", cache.fingerprint).as_bytes());
    out.extend_from_slice(format!("time_steps {}\n", cache.time_steps).as_bytes());
    out.extend_from_slice(format!("mel_bins {}\n", cache.mel_bins).as_bytes());
    out.extend_from_slice(format!("class_count {}\n", cache.class_names.len()).as_bytes());
    for (i, name) in cache.class_names.iter().enumerate() {
        out.extend_from_slice(format!("class {i} {name}\n").as_bytes());
    }
    out.extend_from_slice(format!("record_count {}\n", cache.records.len()).as_bytes());
    out.extend_from_slice(b"end_header\n");
    for r in &cache.records {
        out.extend_from_slice(&r.entry_id.to_le_bytes());
        out.extend_from_slice(&r.segment_index.to_le_bytes());
        out.extend_from_slice(&r.class_index.to_le_bytes());
        out.push(match r.split {
            Split::Train => 0,
            Split::Test => 1,
        });
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<FeatureCache> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| Error::Cache(format!("{}: missing header terminator", path.display())))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Cache(format!("{}: header is not UTF-8", path.display())))?;

    let mut lines = header.lines();
    if lines.next() != Some("MTBCA-FEATURE-CACHE v1") {
        return Err(Error::Cache(format!("{} is not a feature cache", path.display())));
    }
    let mut fingerprint = String::new();
    let mut time_steps = 0usize;
    let mut mel_bins = 0usize;
    let mut record_count = 0usize;
    let mut class_names: Vec<String> = Vec::new();
    for line in lines {
        let mut parts = line.splitn(2, ' ');
        let key = parts.next().unwrap_or_default();
        let value = parts.next().unwrap_or_default();
        match key {
            "fingerprint" => fingerprint = value.to_string(),
            "time_steps" => time_steps = parse_header(path, "time_steps", value)?,
            "mel_bins" => mel_bins = parse_header(path, "mel_bins", value)?,
            "record_count" => record_count = parse_header(path, "record_count", value)?,
            "class_count" => {}
            "class" => {
                let mut p = value.splitn(2, ' ');
                let idx: usize = p
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Cache(format!("{}: bad class line '{line}'", path.display())))?;
                if idx != class_names.len() {
                    return Err(Error::Cache(format!(
                        "{}: class indices out of order",
                        path.display()
                    )));
                }
                class_names.push(p.next().unwrap_or_default().to_string());
            }
            other => {
                return Err(Error::Cache(format!(
                    "{}: unknown header key '{other}'",
                    path.display()
                )))
            }
        }
    }
    if time_steps == 0 || mel_bins == 0 {
        return Err(Error::Cache(format!("{}: missing feature geometry", path.display())));
    }

    let plane = 2 * time_steps * mel_bins;
    let record_bytes = 4 + 4 + 4 + 1 + plane * 4;
    let payload = &bytes[header_end + 11..];
    if payload.len() != record_count * record_bytes {
        return Err(Error::Cache(format!(
            "{}: corrupt payload: expected {} bytes for {} records, found {}",
            path.display(),
            record_count * record_bytes,
            record_count,
            payload.len()
        )));
    }

    let mut records = Vec::with_capacity(record_count);
    for k in 0..record_count {
        let r = &payload[k * record_bytes..(k + 1) * record_bytes];
        let entry_id = u32::from_le_bytes(r[0..4].try_into().unwrap());
        let segment_index = u32::from_le_bytes(r[4..8].try_into().unwrap());
        let class_index = u32::from_le_bytes(r[8..12].try_into().unwrap());
        let split = match r[12] {
            0 => Split::Train,
            1 => Split::Test,
            other => {
                return Err(Error::Cache(format!(
                    "{}: record {k} has invalid split flag {other}",
                    path.display()
                )))
            }
        };
        if (class_index as usize) >= class_names.len() {
            return Err(Error::Cache(format!(
                "{}: record {k} references class {class_index} of {}",
                path.display(),
                class_names.len()
            )));
        }
        let values: Vec<f32> = r[13..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(CacheRecord {
            entry_id,
            segment_index,
            class_index,
            split,
            values,
        });
    }

    Ok(FeatureCache {
        fingerprint,
        time_steps,
        mel_bins,
        class_names,
        records,
    })
}

fn parse_header(path: &Path, key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Cache(format!("{}: cannot parse {key} from '{value}'", path.display())))
}
