use std::path::Path;

use super::AudioError;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AudioError::Io(path.display().to_string(), e))?;
    parse_wav(&bytes).map_err(|e| match e {
        AudioError::Wav(m) => AudioError::Wav(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes RIFF/WAVE, PCM 16-bit, mono, 16 kHz; samples scaled by 1/32768.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    let err = |m: &str| AudioError::Wav(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut format = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(err("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(err("fmt chunk too short"));
                }
                let tag = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if tag != 1 {
                    return Err(AudioError::Wav(format!("PCM required, format tag {tag}")));
                }
                if channels != 1 {
                    return Err(AudioError::Wav(format!("mono required, got {channels} channels")));
                }
                if bits != 16 {
                    return Err(AudioError::Wav(format!("16-bit samples required, got {bits}")));
                }
                if rate != SAMPLE_RATE {
                    return Err(AudioError::Wav(format!("{SAMPLE_RATE} Hz required, got {rate} Hz")));
                }
                format = Some(rate);
            }
            b"data" => {
                let Some(sample_rate) = format else {
                    return Err(err("data chunk before fmt chunk"));
                };
                let samples: Vec<f32> = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                if samples.is_empty() {
                    return Err(err("no samples"));
                }
                return Ok(Waveform { samples, sample_rate });
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(err("missing data chunk"))
}

/// PCM16 mono WAV encoding; samples are clamped to [-1, 1).
pub fn wav_bytes(samples: &[f32], sample_rate: u32, channels: u16) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2 * channels as u32).to_le_bytes());
    out.extend_from_slice(&(2 * channels).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<(), AudioError> {
    let path = path.as_ref();
    std::fs::write(path, wav_bytes(&w.samples, w.sample_rate, 1)).map_err(|e| AudioError::Io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence() {
        let w = parse_wav(&wav_bytes(&vec![0.0; 16000], 16000, 1)).unwrap();
        assert_eq!(w.samples.len(), 16000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn square_wave_from_raw_bytes() {
        // Hand-built header + alternating 0x7fff / 0x8001.
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36u32 + 8).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&[16, 0, 0, 0, 1, 0, 1, 0]);
        b.extend_from_slice(&[0x80, 0x3e, 0, 0, 0, 0x7d, 0, 0, 2, 0, 16, 0]);
        b.extend_from_slice(b"data");
        b.extend_from_slice(&[8, 0, 0, 0]);
        for _ in 0..2 {
            b.extend_from_slice(&[0xff, 0x7f, 0x01, 0x80]);
        }
        let w = parse_wav(&b).unwrap();
        let hi = 32767.0 / 32768.0;
        assert_eq!(w.samples, vec![hi, -hi, hi, -hi]);
    }

    #[test]
    fn rejects_wrong_formats() {
        let stereo = wav_bytes(&[0.0; 8], 16000, 2);
        assert!(parse_wav(&stereo).unwrap_err().to_string().contains("mono required"));
        let rate = wav_bytes(&[0.0; 8], 8000, 1);
        assert!(parse_wav(&rate).unwrap_err().to_string().contains("16000 Hz"));
        assert!(parse_wav(b"not a wav").is_err());
    }
}
