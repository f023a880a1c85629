//! Minimal RIFF/WAVE handling for voice queries and placeholder media.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AudioError {
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("WAV header truncated at byte {0}")]
    Truncated(usize),
    #[error("WAV has no {0} chunk")]
    MissingChunk(&'static str),
    #[error("unsupported WAV encoding (format tag {0}); expected PCM")]
    Unsupported(u16),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WavInfo {
    pub channels: u16,
    pub sample_rate: u32,
    pub bits_per_sample: u16,
    /// Byte range of the sample data inside the file.
    pub data: std::ops::Range<usize>,
}

impl WavInfo {
    pub fn duration_secs(&self) -> f64 {
        let frame = usize::from(self.channels) * usize::from(self.bits_per_sample / 8);
        if frame == 0 || self.sample_rate == 0 {
            return 0.0;
        }
        (self.data.len() / frame) as f64 / f64::from(self.sample_rate)
    }
}

fn u16_at(b: &[u8], at: usize) -> Result<u16, AudioError> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or(AudioError::Truncated(b.len()))
}

fn u32_at(b: &[u8], at: usize) -> Result<u32, AudioError> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or(AudioError::Truncated(b.len()))
}

/// Parses the RIFF header and locates the `fmt ` and `data` chunks.
pub fn decode_wav(bytes: &[u8]) -> Result<WavInfo, AudioError> {
    if bytes.len() < 12 {
        return if bytes.starts_with(&b"RIFF"[..bytes.len().min(4)]) && !bytes.is_empty() {
            Err(AudioError::Truncated(bytes.len()))
        } else {
            Err(AudioError::NotWave)
        };
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWave);
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos < bytes.len() {
        let id = bytes.get(pos..pos + 4).ok_or(AudioError::Truncated(bytes.len()))?;
        let size = u32_at(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(AudioError::Truncated(bytes.len()));
                }
                let tag = u16_at(bytes, body)?;
                // 1 = PCM, 0xFFFE = WAVE_FORMAT_EXTENSIBLE (PCM sub-format assumed)
                if tag != 1 && tag != 0xFFFE {
                    return Err(AudioError::Unsupported(tag));
                }
                fmt = Some((tag, u16_at(bytes, body + 2)?, u32_at(bytes, body + 4)?, u16_at(bytes, body + 14)?));
            }
            b"data" => {
                let (_, channels, sample_rate, bits_per_sample) = fmt.ok_or(AudioError::MissingChunk("fmt"))?;
                // Streaming encoders sometimes leave the size unset; clamp to what is there.
                let end = body.saturating_add(size).min(bytes.len());
                return Ok(WavInfo {
                    channels,
                    sample_rate,
                    bits_per_sample,
                    data: body.min(bytes.len())..end,
                });
            }
            _ => {}
        }
        pos = body.saturating_add(size + (size & 1));
    }
    Err(AudioError::MissingChunk(if fmt.is_some() { "data" } else { "fmt" }))
}

/// Encodes mono 16-bit PCM samples as a WAV file.
pub fn encode_wav_pcm16(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Silent 16 kHz mono WAV of the given length.
pub fn silent_wav(seconds: f64) -> Vec<u8> {
    let n = (seconds.max(0.0) * 16_000.0).round() as usize;
    encode_wav_pcm16(&vec![0; n], 16_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_then_decode() {
        let wav = encode_wav_pcm16(&[0, 1, -1, 300], 16_000);
        let info = decode_wav(&wav).unwrap();
        assert_eq!(info.channels, 1);
        assert_eq!(info.sample_rate, 16_000);
        assert_eq!(info.bits_per_sample, 16);
        assert_eq!(info.data.len(), 8);
        assert!((decode_wav(&silent_wav(0.5)).unwrap().duration_secs() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn malformed_inputs() {
        let wav = silent_wav(0.1);
        assert_eq!(decode_wav(&wav[..20]), Err(AudioError::Truncated(20)));
        assert_eq!(decode_wav(&wav[..6]), Err(AudioError::Truncated(6)));
        assert_eq!(decode_wav(b"garbage bytes here"), Err(AudioError::NotWave));
        assert_eq!(decode_wav(b""), Err(AudioError::NotWave));
        let mut float = wav.clone();
        float[20] = 3;
        assert_eq!(decode_wav(&float), Err(AudioError::Unsupported(3)));
        assert_eq!(decode_wav(&wav[..36]), Err(AudioError::MissingChunk("data")));
    }
}
