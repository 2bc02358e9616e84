//! Audio ingest: RIFF/WAVE PCM16 decoding, stereo mixdown and polyphase
//! resampling to the 16 kHz working rate.

use std::f64::consts::PI;

use thiserror::Error;

/// Sample rate every clip is brought to before feature extraction.
pub const TARGET_RATE_HZ: u32 = 16_000;
/// Lowest input rate the resampler accepts.
pub const MIN_RATE_HZ: u32 = 8_000;
/// Highest input rate the resampler accepts.
pub const MAX_RATE_HZ: u32 = 48_000;

/// Sinc zero crossings covered on each side of the interpolation point,
/// measured at the lower of the two rates. Sixteen taps per phase in total.
const ZERO_CROSSINGS_PER_SIDE: f64 = 8.0;
const KAISER_BETA: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AudioError {
    #[error("malformed WAV: {field}: {detail}")]
    Malformed { field: &'static str, detail: String },
    #[error("unsupported WAV encoding: {field}: {detail}")]
    Unsupported { field: &'static str, detail: String },
    #[error("MP3 input is not supported; convert to WAV (16-bit PCM) and retry")]
    Mp3NotSupported,
    #[error("unsupported channel layout: {channels} channels (expected 1 or 2)")]
    UnsupportedLayout { channels: u16 },
    #[error("unsupported sample rate {rate} Hz (expected {MIN_RATE_HZ}..={MAX_RATE_HZ})")]
    UnsupportedRate { rate: u32 },
}

fn malformed(field: &'static str, detail: impl Into<String>) -> AudioError {
    AudioError::Malformed {
        field,
        detail: detail.into(),
    }
}

/// Decoded PCM audio. Samples are interleaved when `channels > 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub channels: u16,
    pub sample_rate_hz: u32,
    pub source_name: String,
}

impl AudioClip {
    pub fn mono(samples: Vec<f64>, sample_rate_hz: u32, source_name: impl Into<String>) -> Self {
        Self {
            samples,
            channels: 1,
            sample_rate_hz,
            source_name: source_name.into(),
        }
    }

    /// Number of sample frames (one sample per channel).
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate_hz as f64
    }
}

/// Returns true when the bytes look like an MP3 stream (ID3 tag or MPEG frame sync).
pub fn looks_like_mp3(bytes: &[u8]) -> bool {
    bytes.starts_with(b"ID3") || (bytes.len() >= 2 && bytes[0] == 0xFF && bytes[1] & 0xE0 == 0xE0)
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(malformed("fmt chunk", format!("{} bytes, need at least 16", body.len())));
    }
    let mut format_tag = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let block_align = read_u16(body, 12);
    let bits = read_u16(body, 14);

    if format_tag == 0xFFFE {
        // WAVE_FORMAT_EXTENSIBLE: the real codec lives in the sub-format GUID.
        if body.len() < 40 {
            return Err(malformed("fmt extension", "extensible format without sub-format GUID"));
        }
        format_tag = read_u16(body, 24);
    }
    match format_tag {
        1 => {}
        3 => {
            return Err(AudioError::Unsupported {
                field: "audio format",
                detail: "IEEE float samples; only 16-bit PCM is accepted".into(),
            })
        }
        other => {
            return Err(AudioError::Unsupported {
                field: "audio format",
                detail: format!("codec tag {other:#06x}; only PCM (1) is accepted"),
            })
        }
    }
    if bits != 16 {
        return Err(AudioError::Unsupported {
            field: "bits per sample",
            detail: format!("{bits}; only 16 is accepted"),
        });
    }
    if channels == 0 {
        return Err(malformed("channels", "0"));
    }
    if sample_rate == 0 {
        return Err(malformed("sample rate", "0"));
    }
    if block_align as u32 != channels as u32 * 2 {
        return Err(malformed(
            "block align",
            format!("{block_align}, expected {} for {channels} channel(s)", channels as u32 * 2),
        ));
    }
    Ok(FmtChunk {
        channels,
        sample_rate,
        block_align,
    })
}

/// Decodes a RIFF/WAVE file holding 16-bit signed PCM. The sample rate is
/// preserved; see [`resample_16k`].
pub fn decode_wav(bytes: &[u8], source_name: &str) -> Result<AudioClip, AudioError> {
    if looks_like_mp3(bytes) {
        return Err(AudioError::Mp3NotSupported);
    }
    if bytes.len() < 12 {
        return Err(malformed("RIFF header", format!("only {} bytes", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("RIFF magic", format!("{:?}", &bytes[0..4])));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("WAVE form type", format!("{:?}", &bytes[8..12])));
    }

    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        if id == b"data" {
            // Streaming writers leave the size as 0 or u32::MAX; take what is there.
            let len = if size == 0 || size > available { available } else { size };
            data = Some(&bytes[body_start..body_start + len]);
            if fmt.is_some() {
                break;
            }
        } else {
            if size > available {
                return Err(malformed(
                    "chunk size",
                    format!("chunk {:?} declares {size} bytes, {available} remain", String::from_utf8_lossy(id)),
                ));
            }
            if id == b"fmt " {
                fmt = Some(parse_fmt(&bytes[body_start..body_start + size])?);
            }
        }
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }

    let fmt = fmt.ok_or_else(|| malformed("fmt chunk", "missing"))?;
    let data = data.ok_or_else(|| malformed("data chunk", "missing"))?;
    let usable = data.len() - data.len() % fmt.block_align as usize;
    if usable == 0 {
        return Err(malformed("data chunk length", "no complete sample frames"));
    }

    let samples = data[..usable]
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip {
        samples,
        channels: fmt.channels,
        sample_rate_hz: fmt.sample_rate,
        source_name: source_name.to_string(),
    })
}

/// Encodes mono or interleaved samples as 16-bit PCM WAV. Samples are clipped
/// to [-1, 1] and quantized by 32768.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    let block_align = clip.channels * 2;
    out.extend_from_slice(&(clip.sample_rate_hz * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Mixes a stereo clip down to mono by averaging channels. Mono passes through.
pub fn to_mono(clip: AudioClip) -> Result<AudioClip, AudioError> {
    match clip.channels {
        1 => Ok(clip),
        2 => {
            let samples = clip
                .samples
                .chunks_exact(2)
                .map(|lr| 0.5 * (lr[0] + lr[1]))
                .collect();
            Ok(AudioClip {
                samples,
                channels: 1,
                ..clip
            })
        }
        channels => Err(AudioError::UnsupportedLayout { channels }),
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Polyphase windowed-sinc resampler from an arbitrary rate to 16 kHz.
///
/// The conversion ratio is reduced to `up / down`. Output sample `n` sits at
/// input position `n * down / up`, whose fractional part selects one of `up`
/// precomputed filter phases. Each phase is a Kaiser-windowed sinc with its
/// cutoff at the lower Nyquist frequency, normalized to unit DC gain.
#[derive(Debug, Clone)]
pub struct Resampler {
    rate_in: u32,
    up: u64,
    down: u64,
    taps_per_phase: usize,
    /// Index offset of tap 0 relative to the integer input position.
    first_offset: i64,
    /// `up` rows of `taps_per_phase` coefficients.
    table: Vec<f64>,
}

impl Resampler {
    pub fn new(rate_in: u32) -> Result<Self, AudioError> {
        if !(MIN_RATE_HZ..=MAX_RATE_HZ).contains(&rate_in) {
            return Err(AudioError::UnsupportedRate { rate: rate_in });
        }
        let g = gcd(rate_in as u64, TARGET_RATE_HZ as u64);
        let up = TARGET_RATE_HZ as u64 / g;
        let down = rate_in as u64 / g;

        let ratio = TARGET_RATE_HZ as f64 / rate_in as f64;
        // Cutoff in cycles per input sample.
        let cutoff = 0.5 * ratio.min(1.0);
        let half_width = ZERO_CROSSINGS_PER_SIDE / (2.0 * cutoff);
        let reach = half_width.ceil() as i64;
        let first_offset = -reach + 1;
        let taps_per_phase = (2 * reach) as usize;
        let i0_beta = bessel_i0(KAISER_BETA);

        let mut table = vec![0.0; up as usize * taps_per_phase];
        for phase in 0..up as usize {
            let frac = phase as f64 / up as f64;
            let row = &mut table[phase * taps_per_phase..(phase + 1) * taps_per_phase];
            for (j, tap) in row.iter_mut().enumerate() {
                let d = (first_offset + j as i64) as f64 - frac;
                let r = d / half_width;
                if r.abs() < 1.0 {
                    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                    *tap = 2.0 * cutoff * sinc(2.0 * cutoff * d) * window;
                }
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|t| *t /= sum);
        }

        Ok(Self {
            rate_in,
            up,
            down,
            taps_per_phase,
            first_offset,
            table,
        })
    }

    pub fn rate_in(&self) -> u32 {
        self.rate_in
    }

    pub fn taps_per_phase(&self) -> usize {
        self.taps_per_phase
    }

    /// Output length for `len_in` input samples: round(len_in * 16000 / rate_in).
    pub fn output_len(&self, len_in: usize) -> usize {
        ((2 * len_in as u64 * self.up + self.down) / (2 * self.down)) as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let n_out = self.output_len(input.len());
        let len = input.len() as i64;
        (0..n_out as u64)
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as i64;
                let phase = (pos % self.up) as usize;
                let row = &self.table[phase * self.taps_per_phase..(phase + 1) * self.taps_per_phase];
                let start = base + self.first_offset;
                row.iter()
                    .enumerate()
                    .filter_map(|(j, &h)| {
                        let i = start + j as i64;
                        (0..len).contains(&i).then(|| h * input[i as usize])
                    })
                    .sum()
            })
            .collect()
    }
}

/// Brings a mono clip to 16 kHz. Clips already at 16 kHz are returned unchanged.
pub fn resample_16k(clip: AudioClip) -> Result<AudioClip, AudioError> {
    if clip.channels != 1 {
        return Err(AudioError::UnsupportedLayout {
            channels: clip.channels,
        });
    }
    if clip.sample_rate_hz == TARGET_RATE_HZ {
        return Ok(clip);
    }
    let resampler = Resampler::new(clip.sample_rate_hz)?;
    let samples = resampler
        .process(&clip.samples)
        .into_iter()
        .map(|s| s.clamp(-1.0, 1.0))
        .collect();
    Ok(AudioClip {
        samples,
        channels: 1,
        sample_rate_hz: TARGET_RATE_HZ,
        source_name: clip.source_name,
    })
}

/// Full ingest pipeline: decode, mix to mono, resample to 16 kHz.
pub fn ingest_wav(bytes: &[u8], source_name: &str) -> Result<AudioClip, AudioError> {
    resample_16k(to_mono(decode_wav(bytes, source_name)?)?)
}
