//! Minimal RIFF/WAVE reader and writer.
//!
//! Supported source formats: PCM 8/16/24/32-bit integer and 32-bit IEEE
//! float, 1 or 2 channels. Stereo is downmixed by channel mean; integer
//! samples are scaled to `[-1, 1]` by the type's maximum magnitude. Parse
//! failures report the byte offset where the problem was found.

use std::fs;
use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::WavParse {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!(
                "unexpected end of file (need {} bytes, {} left)",
                n,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    codec: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Read a WAV file into a mono clip in `[-1, 1]`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let clip = parse_wav(&bytes)?;
    Ok(AudioClip {
        source_path: path.display().to_string(),
        ..clip
    })
}

/// Parse WAV bytes; `source_path` is left empty.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != b"RIFF" {
        c.pos = 0;
        return Err(c.err("missing RIFF magic"));
    }
    let _riff_size = c.u32()?;
    if c.take(4)? != b"WAVE" {
        c.pos -= 4;
        return Err(c.err("missing WAVE form type"));
    }

    let mut format: Option<Format> = None;
    let mut data: Option<(usize, usize)> = None; // (offset, len)

    while c.pos + 8 <= bytes.len() {
        let id: [u8; 4] = c.take(4)?.try_into().unwrap();
        let size = c.u32()? as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(c.err(format!("fmt chunk too small ({size} bytes)")));
                }
                let chunk_start = c.pos;
                let mut codec = c.u16()?;
                let channels = c.u16()?;
                let sample_rate = c.u32()?;
                let _byte_rate = c.u32()?;
                let _block_align = c.u16()?;
                let bits = c.u16()?;
                // WAVE_FORMAT_EXTENSIBLE: the real codec is the first two
                // bytes of the subformat GUID.
                if codec == 0xFFFE {
                    if size < 40 {
                        return Err(c.err("extensible fmt chunk too small"));
                    }
                    let _cb_size = c.u16()?;
                    let _valid_bits = c.u16()?;
                    let _channel_mask = c.u32()?;
                    codec = c.u16()?;
                }
                format = Some(Format {
                    codec,
                    channels,
                    sample_rate,
                    bits,
                });
                c.pos = chunk_start + size;
            }
            b"data" => {
                if c.pos + size > bytes.len() {
                    return Err(c.err(format!(
                        "data chunk claims {} bytes but only {} remain",
                        size,
                        bytes.len() - c.pos
                    )));
                }
                data = Some((c.pos, size));
                c.pos += size;
            }
            _ => {
                // Skip unknown chunks (LIST, fact, ...).
                if c.pos + size > bytes.len() {
                    return Err(c.err(format!("chunk {:?} overruns file", String::from_utf8_lossy(&id))));
                }
                c.pos += size;
            }
        }
        // RIFF chunks are word-aligned.
        if size % 2 == 1 && c.pos < bytes.len() {
            c.pos += 1;
        }
    }

    let fmt = format.ok_or(Error::WavParse {
        offset: bytes.len() as u64,
        reason: "no fmt chunk found".into(),
    })?;
    let (data_off, data_len) = data.ok_or(Error::WavParse {
        offset: bytes.len() as u64,
        reason: "no data chunk found".into(),
    })?;

    if fmt.sample_rate == 0 {
        Err(Error::WavParse {
            offset: data_off as u64,
            reason: "sample rate is zero".into(),
        })?;
    }
    if !(1..=2).contains(&fmt.channels) {
        return Err(Error::WavParse {
            offset: data_off as u64,
            reason: format!("unsupported channel count {}", fmt.channels),
        });
    }

    let raw = &bytes[data_off..data_off + data_len];
    let ch = fmt.channels as usize;
    let decode_err = |reason: String| Error::WavParse {
        offset: data_off as u64,
        reason,
    };

    // Decode interleaved frames to a mono stream.
    let samples: Vec<f32> = match (fmt.codec, fmt.bits) {
        (1, 8) => mono(raw.iter().map(|&b| (b as f32 - 128.0) / 128.0), ch),
        (1, 16) => mono(
            raw.chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0),
            ch,
        ),
        (1, 24) => mono(
            raw.chunks_exact(3).map(|b| {
                let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
                v as f32 / 8_388_608.0
            }),
            ch,
        ),
        (1, 32) => mono(
            raw.chunks_exact(4)
                .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f32 / 2_147_483_648.0),
            ch,
        ),
        (3, 32) => mono(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]).clamp(-1.0, 1.0)),
            ch,
        ),
        (codec, bits) => {
            return Err(decode_err(format!(
                "unsupported codec {codec} with {bits} bits per sample"
            )))
        }
    };

    Ok(AudioClip {
        samples,
        sample_rate: fmt.sample_rate,
        label: None,
        source_path: String::new(),
    })
}

fn mono(iter: impl Iterator<Item = f32>, channels: usize) -> Vec<f32> {
    if channels == 1 {
        return iter.collect();
    }
    let interleaved: Vec<f32> = iter.collect();
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect()
}

/// Write mono samples as 16-bit PCM. Values are scaled by 32768 and clamped
/// to the i16 range, so a read-back deviates by at most half a quantization
/// step for inputs strictly inside `(-1, 1)`.
pub fn write_wav_pcm16(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_bytes(samples: &[i16], channels: u16, sample_rate: u32) -> Vec<u8> {
        let data_len = samples.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&sample_rate.to_le_bytes());
        out.extend_from_slice(&(sample_rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for &s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    #[test]
    fn pcm16_scaling() {
        let bytes = pcm16_bytes(&[0, 16384, -32768], 1, 16_000);
        let clip = parse_wav(&bytes).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate, 16_000);
    }

    #[test]
    fn stereo_downmix_is_channel_mean() {
        // L = 0.2, R = 0.4 constant -> mono 0.3
        let l = (0.2f64 * 32768.0) as i16;
        let r = (0.4f64 * 32768.0) as i16;
        let bytes = pcm16_bytes(&[l, r, l, r, l, r], 2, 8_000);
        let clip = parse_wav(&bytes).unwrap();
        assert_eq!(clip.samples.len(), 3);
        for &s in &clip.samples {
            assert!((s - 0.3).abs() < 1e-4, "got {s}");
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = pcm16_bytes(&[0, 0, 0], 1, 8_000);
        let err = parse_wav(&bytes[..20]).unwrap_err();
        match err {
            Error::WavParse { offset, .. } => assert!(offset <= 20),
            other => panic!("expected WavParse, got {other:?}"),
        }
    }

    #[test]
    fn garbage_rejected() {
        assert!(matches!(
            parse_wav(b"not a wav file at all......."),
            Err(Error::WavParse { offset: 0, .. })
        ));
    }

    #[test]
    fn unsupported_codec_rejected() {
        let mut bytes = pcm16_bytes(&[0], 1, 8_000);
        bytes[20] = 7; // mu-law
        assert!(matches!(parse_wav(&bytes), Err(Error::WavParse { .. })));
    }

    #[test]
    fn write_read_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let sine: Vec<f32> = (0..4_000)
            .map(|i| 0.9 * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16_000.0).sin())
            .collect();
        write_wav_pcm16(&path, &sine, 16_000).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples.len(), sine.len());
        assert_eq!(back.sample_rate, 16_000);
        let max_dev = sine
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_dev < 1.0 / 32768.0, "max deviation {max_dev}");
    }

    #[test]
    fn float32_wav_parses() {
        let samples = [0.25f32, -0.75, 1.5]; // 1.5 clamps to 1.0
        let mut out = Vec::new();
        let data_len = samples.len() * 4;
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&44_100u32.to_le_bytes());
        out.extend_from_slice(&(44_100u32 * 4).to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&32u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        let clip = parse_wav(&out).unwrap();
        assert_eq!(clip.samples, vec![0.25, -0.75, 1.0]);
    }
}
