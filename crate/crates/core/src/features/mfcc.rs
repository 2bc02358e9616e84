//! MFCC baseline: pre-emphasis, framing, Hamming window, power spectrum,
//! HTK mel filterbank, log compression and orthonormal DCT-II, then mean and
//! standard-deviation pooling over frames into a fixed 40-d vector.

use std::f64::consts::PI;

use super::{FeatureError, FeatureType, FeatureVector};
use crate::audio::{AudioClip, TARGET_RATE_HZ};

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub pre_emphasis: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            pre_emphasis: 0.97,
            frame_len: 400,
            hop: 160,
            fft_size: 512,
            n_mels: 26,
            n_coeffs: 20,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        let bad = |msg: String| Err(FeatureError::InvalidConfig(msg));
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return bad(format!("pre_emphasis {} outside [0, 1)", self.pre_emphasis));
        }
        if self.frame_len == 0 || self.hop == 0 {
            return bad("frame_len and hop must be positive".into());
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return bad(format!("fft_size {} is not a power of two", self.fft_size));
        }
        if self.frame_len > self.fft_size {
            return bad(format!("frame_len {} exceeds fft_size {}", self.frame_len, self.fft_size));
        }
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return bad(format!("n_coeffs {} must be in 1..={}", self.n_coeffs, self.n_mels));
        }
        if self.fmin_hz < 0.0 || self.fmin_hz >= self.fmax_hz || self.fmax_hz > sample_rate as f64 / 2.0 {
            return bad(format!(
                "band [{}, {}] Hz invalid for {} Hz audio",
                self.fmin_hz, self.fmax_hz, sample_rate
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    /// Length of the pooled vector: mean and std of each coefficient.
    pub fn output_dim(&self) -> usize {
        2 * self.n_coeffs
    }
}

/// `y[t] = x[t] - alpha * x[t-1]`, with `y[0] = x[0]`.
pub fn pre_emphasize(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
    }
    y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
    y
}

/// Splits a signal into overlapping frames. A signal shorter than one frame
/// yields a single zero-padded frame; a trailing partial frame is dropped.
pub fn frame_signal(x: &[f64], frame_len: usize, hop: usize) -> Result<Vec<Vec<f64>>, FeatureError> {
    if x.is_empty() {
        return Err(FeatureError::EmptySignal);
    }
    if frame_len == 0 || hop == 0 {
        return Err(FeatureError::InvalidConfig("frame_len and hop must be positive".into()));
    }
    if x.len() < frame_len {
        let mut frame = x.to_vec();
        frame.resize(frame_len, 0.0);
        return Ok(vec![frame]);
    }
    let n_frames = (x.len() - frame_len) / hop + 1;
    Ok((0..n_frames)
        .map(|i| x[i * hop..i * hop + frame_len].to_vec())
        .collect())
}

/// Symmetric Hamming window, `0.54 - 0.46 cos(2 pi k / (n - 1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>, FeatureError> {
    if n < 2 {
        return Err(FeatureError::InvalidConfig(format!("window length {n} < 2")));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|k| {
            // mirror so the two halves are bit-identical
            let k = k.min(n - 1 - k) as f64;
            0.54 - 0.46 * (2.0 * PI * k / denom).cos()
        })
        .collect())
}

/// In-place iterative radix-2 FFT. `re.len()` must be a power of two.
fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (step * k as f64).sin_cos();
                let a = start + k;
                let b = a + half;
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// `|DFT(frame zero-padded to fft_size)[k]|^2` for `k = 0..=fft_size/2`,
/// without normalization.
///
/// Panics if `fft_size` is not a power of two or is shorter than the frame.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Vec<f64> {
    assert!(fft_size.is_power_of_two(), "fft_size must be a power of two");
    assert!(frame.len() <= fft_size, "frame longer than fft_size");
    let mut re = vec![0.0; fft_size];
    let mut im = vec![0.0; fft_size];
    re[..frame.len()].copy_from_slice(frame);
    fft_in_place(&mut re, &mut im);
    (0..=fft_size / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, one row per filter, each row
/// spanning `fft_size / 2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    rows: Vec<Vec<f64>>,
    centers: Vec<usize>,
}

impl MelFilterbank {
    pub fn new(config: &MfccConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        config.validate(sample_rate)?;
        let n_bins = config.fft_size / 2 + 1;
        let (mel_lo, mel_hi) = (hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz));
        let step = (mel_hi - mel_lo) / (config.n_mels + 1) as f64;
        let edges: Vec<usize> = (0..config.n_mels + 2)
            .map(|i| {
                let hz = mel_to_hz(mel_lo + step * i as f64);
                let bin = ((config.fft_size + 1) as f64 * hz / sample_rate as f64).floor() as usize;
                bin.min(n_bins - 1)
            })
            .collect();
        if let Some(w) = edges.windows(2).position(|w| w[0] >= w[1]) {
            return Err(FeatureError::InvalidConfig(format!(
                "{} mel filters need finer frequency resolution: edges {} and {} both map to FFT bin {}",
                config.n_mels,
                w,
                w + 1,
                edges[w]
            )));
        }

        let rows = edges
            .windows(3)
            .map(|e| {
                let (left, center, right) = (e[0], e[1], e[2]);
                let mut row = vec![0.0; n_bins];
                for (k, w) in row.iter_mut().enumerate().take(right + 1).skip(left) {
                    *w = if k <= center {
                        (k - left) as f64 / (center - left) as f64
                    } else {
                        (right - k) as f64 / (right - center) as f64
                    };
                }
                row
            })
            .collect();
        let centers = edges[1..=config.n_mels].to_vec();
        Ok(Self { rows, centers })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// FFT bin at which each filter peaks.
    pub fn center_bins(&self) -> &[usize] {
        &self.centers
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }
}

/// `e[m] = ln(max(fb[m] . power, log_floor))`.
pub fn apply_filterbank_log(power: &[f64], fb: &MelFilterbank, log_floor: f64) -> Vec<f64> {
    fb.rows
        .iter()
        .map(|row| {
            debug_assert_eq!(row.len(), power.len());
            let energy: f64 = row.iter().zip(power).map(|(w, p)| w * p).sum();
            energy.max(log_floor).ln()
        })
        .collect()
}

/// First `n_coeffs` coefficients of the orthonormal DCT-II of `e`.
pub fn dct2(e: &[f64], n_coeffs: usize) -> Vec<f64> {
    let m = e.len() as f64;
    (0..n_coeffs.min(e.len()))
        .map(|j| {
            let scale = if j == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale
                * e.iter()
                    .enumerate()
                    .map(|(i, &v)| v * (PI * j as f64 * (i as f64 + 0.5) / m).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Reusable MFCC pipeline with the window and filterbank precomputed.
#[derive(Debug, Clone)]
pub struct MfccExtractor {
    config: MfccConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
}

impl MfccExtractor {
    pub fn new(config: MfccConfig) -> Result<Self, FeatureError> {
        let filterbank = MelFilterbank::new(&config, TARGET_RATE_HZ)?;
        let window = hamming_window(config.frame_len)?;
        Ok(Self {
            config,
            window,
            filterbank,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Per-frame log mel energies, before the DCT.
    pub fn log_mel_energies(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, FeatureError> {
        let emphasized = pre_emphasize(samples, self.config.pre_emphasis);
        let frames = frame_signal(&emphasized, self.config.frame_len, self.config.hop)?;
        Ok(frames
            .into_iter()
            .map(|mut frame| {
                frame.iter_mut().zip(&self.window).for_each(|(s, w)| *s *= w);
                let power = power_spectrum(&frame, self.config.fft_size);
                apply_filterbank_log(&power, &self.filterbank, self.config.log_floor)
            })
            .collect())
    }

    /// Per-frame cepstral coefficients.
    pub fn frame_coefficients(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, FeatureError> {
        Ok(self
            .log_mel_energies(samples)?
            .iter()
            .map(|e| dct2(e, self.config.n_coeffs))
            .collect())
    }

    /// Mean and population standard deviation of each coefficient over frames.
    pub fn pooled(&self, samples: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let frames = self.frame_coefficients(samples)?;
        let n = frames.len() as f64;
        let nc = self.config.n_coeffs;
        // Shifted by the first frame so identical frames give an exact mean and zero spread.
        let origin = frames[0].clone();
        let mut mean = vec![0.0; nc];
        for f in &frames {
            mean.iter_mut()
                .zip(f.iter().zip(&origin))
                .for_each(|(m, (c, o))| *m += c - o);
        }
        mean.iter_mut().zip(&origin).for_each(|(m, o)| *m = o + *m / n);
        let mut var = vec![0.0; nc];
        for f in &frames {
            var.iter_mut()
                .zip(f.iter().zip(&mean))
                .for_each(|(v, (c, m))| *v += (c - m) * (c - m));
        }
        let std = var.into_iter().map(|v| (v / n).sqrt());
        Ok(mean.iter().copied().chain(std).collect())
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureVector, FeatureError> {
        if clip.sample_rate_hz != TARGET_RATE_HZ {
            return Err(FeatureError::SampleRate {
                expected: TARGET_RATE_HZ,
                found: clip.sample_rate_hz,
            });
        }
        if clip.channels != 1 {
            return Err(FeatureError::Audio(crate::audio::AudioError::UnsupportedLayout {
                channels: clip.channels,
            }));
        }
        let pooled = self.pooled(&clip.samples)?;
        let values: Vec<f32> = pooled.into_iter().map(|v| v as f32).collect();
        if values.len() != FeatureType::Mfcc.expected_dim() {
            return Err(FeatureError::DimMismatch {
                feature_type: FeatureType::Mfcc,
                expected: FeatureType::Mfcc.expected_dim(),
                found: values.len(),
            });
        }
        FeatureVector::new(values, FeatureType::Mfcc, clip.source_name.clone())
    }
}

/// One-shot MFCC extraction with the given configuration.
pub fn extract_mfcc_vector(clip: &AudioClip, config: &MfccConfig) -> Result<FeatureVector, FeatureError> {
    MfccExtractor::new(config.clone())?.extract(clip)
}
