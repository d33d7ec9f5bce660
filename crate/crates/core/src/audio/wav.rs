//! RIFF/WAVE reading and writing.

use super::{AudioError, Waveform};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Sample encodings accepted by [`decode_wav`] and produced by [`encode_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Pcm24,
    Pcm32,
    Float32,
}

impl SampleFormat {
    fn bytes(self) -> usize {
        match self {
            Self::Pcm16 => 2,
            Self::Pcm24 => 3,
            Self::Pcm32 | Self::Float32 => 4,
        }
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn decode_err(chunk: &str, reason: impl Into<String>) -> AudioError {
    AudioError::Decode {
        chunk: chunk.to_string(),
        reason: reason.into(),
    }
}

struct Format {
    sample: SampleFormat,
    channels: usize,
    sample_rate: u32,
}

fn parse_fmt(body: &[u8]) -> Result<Format, AudioError> {
    if body.len() < 16 {
        return Err(decode_err("fmt ", format!("chunk is {} bytes, need 16", body.len())));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2) as usize;
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(decode_err("fmt ", "extensible format without sub-format"));
        }
        tag = u16_at(body, 24);
    }
    let sample = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_PCM, 24) => SampleFormat::Pcm24,
        (FORMAT_PCM, 32) => SampleFormat::Pcm32,
        (FORMAT_FLOAT, 32) => SampleFormat::Float32,
        _ => {
            return Err(decode_err(
                "fmt ",
                format!("unsupported codec: format tag {tag}, {bits} bits per sample"),
            ))
        }
    };
    if !(1..=2).contains(&channels) {
        return Err(decode_err("fmt ", format!("{channels} channels; only mono or stereo")));
    }
    if sample_rate == 0 {
        return Err(decode_err("fmt ", "zero sample rate"));
    }
    Ok(Format {
        sample,
        channels,
        sample_rate,
    })
}

fn read_sample(b: &[u8], format: SampleFormat) -> f32 {
    match format {
        SampleFormat::Pcm16 => i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0,
        SampleFormat::Pcm24 => {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f32 / 8_388_608.0
        }
        SampleFormat::Pcm32 => (i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2_147_483_648.0) as f32,
        SampleFormat::Float32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]).clamp(-1.0, 1.0),
    }
}

/// Decodes a WAV file to mono samples in `[−1, 1]`.
///
/// Integer PCM is divided by its full-scale value (32768 for 16-bit);
/// stereo frames are averaged.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    if bytes.len() < 12 {
        return Err(decode_err("RIFF", format!("header truncated at {} bytes", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(decode_err("RIFF", "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(decode_err("RIFF", "missing WAVE form type"));
    }
    let mut pos = 12;
    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        let body_end = body_start.saturating_add(size);
        match id {
            b"fmt " => {
                if body_end > bytes.len() {
                    return Err(decode_err("fmt ", "chunk truncated"));
                }
                format = Some(parse_fmt(&bytes[body_start..body_end])?);
            }
            b"data" => {
                let end = if body_end > bytes.len() {
                    log::warn!(
                        "data chunk declares {size} bytes but only {} remain",
                        bytes.len() - body_start
                    );
                    bytes.len()
                } else {
                    body_end
                };
                data = Some(&bytes[body_start..end]);
            }
            _ if body_end > bytes.len() => {
                return Err(decode_err(&name, "chunk truncated"));
            }
            _ => {}
        }
        pos = body_end.saturating_add(size & 1);
        if data.is_some() && format.is_some() {
            break;
        }
    }
    let format = format.ok_or_else(|| decode_err("fmt ", "missing format chunk"))?;
    let data = data.ok_or_else(|| decode_err("data", "missing data chunk"))?;
    let frame_bytes = format.sample.bytes() * format.channels;
    let frames = data.len() / frame_bytes;
    if frames == 0 {
        return Err(decode_err("data", "no complete sample frames"));
    }
    let width = format.sample.bytes();
    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f32 = frame
                .chunks_exact(width)
                .map(|b| read_sample(b, format.sample))
                .sum();
            sum / format.channels as f32
        })
        .collect();
    Waveform::new(samples, format.sample_rate)
}

/// Encodes one or more equal-length channels as a WAV file.
pub fn encode_wav(channels: &[&[f32]], sample_rate: u32, format: SampleFormat) -> Vec<u8> {
    assert!(!channels.is_empty(), "at least one channel");
    let frames = channels[0].len();
    assert!(channels.iter().all(|c| c.len() == frames), "channels must have equal length");
    let width = format.bytes();
    let block_align = width * channels.len();
    let data_len = frames * block_align;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    let tag = if format == SampleFormat::Float32 { FORMAT_FLOAT } else { FORMAT_PCM };
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(channels.len() as u16).to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..frames {
        for ch in channels {
            let v = ch[i].clamp(-1.0, 1.0);
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleFormat::Pcm24 => {
                    let q = (v as f64 * 8_388_608.0).round().clamp(-8_388_608.0, 8_388_607.0) as i32;
                    out.extend_from_slice(&q.to_le_bytes()[..3]);
                }
                SampleFormat::Pcm32 => {
                    let q = (v as f64 * 2_147_483_648.0).round().clamp(-2_147_483_648.0, 2_147_483_647.0) as i32;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_file(samples: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let data_len = samples.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    #[test]
    fn int16_full_scale() {
        let w = decode_wav(&pcm16_file(&[32767, -32768, 0], 1, 4000)).unwrap();
        assert_eq!(w.samples()[0], 32767.0 / 32768.0);
        assert_eq!(w.samples()[1], -1.0);
        assert_eq!(w.sample_rate(), 4000);
    }

    #[test]
    fn stereo_is_mean_downmixed() {
        let w = decode_wav(&pcm16_file(&[16384, -16384, 8192, 8192], 2, 4000)).unwrap();
        assert_eq!(w.samples(), &[0.0, 0.25]);
    }

    #[test]
    fn truncated_header_is_an_error() {
        let file = pcm16_file(&[1, 2, 3], 1, 4000);
        let err = decode_wav(&file[..10]).unwrap_err();
        assert!(err.to_string().contains("RIFF"), "{err}");
        assert!(decode_wav(&file[..30]).is_err());
    }

    #[test]
    fn unsupported_codec_names_fmt_chunk() {
        let mut file = pcm16_file(&[1, 2], 1, 4000);
        file[20] = 2; // ADPCM
        let err = decode_wav(&file).unwrap_err();
        assert!(matches!(err, AudioError::Decode { ref chunk, .. } if chunk == "fmt "), "{err}");
    }

    #[test]
    fn encode_decode_formats() {
        let samples = [0.5f32, -0.25, 0.0, 0.999];
        for format in [SampleFormat::Pcm16, SampleFormat::Pcm24, SampleFormat::Pcm32, SampleFormat::Float32] {
            let w = decode_wav(&encode_wav(&[&samples], 44100, format)).unwrap();
            assert_eq!(w.sample_rate(), 44100);
            for (a, b) in w.samples().iter().zip(&samples) {
                assert!((a - b).abs() < 1e-4, "{format:?}");
            }
        }
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = pcm16_file(&[100, 200], 1, 8000);
        let mut file = plain[..12].to_vec();
        file.extend_from_slice(b"LIST");
        file.extend_from_slice(&3u32.to_le_bytes());
        file.extend_from_slice(&[1, 2, 3, 0]);
        file.extend_from_slice(&plain[12..]);
        let w = decode_wav(&file).unwrap();
        assert_eq!(w.len(), 2);
    }
}
