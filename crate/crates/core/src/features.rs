//! Log mel-spectrogram features and z-score normalization.
//!
//! Pipeline: resample to 22050 Hz, keep the centre 30 s, 2048-sample Hann STFT
//! with a 1024-sample hop (50 % overlap), 256 triangular mel filters, natural
//! log with a `1e-10` floor. Normalization statistics are fitted on training
//! clips only and applied to every split.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::bytes::{ByteReader, ByteWriter, ReadFault};
use crate::error::{Error, Result, ShapeError};
use crate::tensor::Matrix;

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;
pub const DEFAULT_FFT_SIZE: usize = 2048;
pub const DEFAULT_HOP: usize = 1024;
pub const DEFAULT_MEL_BINS: usize = 256;
pub const DEFAULT_CHUNK_SECONDS: f64 = 30.0;
pub const LOG_FLOOR: f64 = 1e-10;
/// Standard deviations below this are replaced by 1.
pub const STD_FLOOR: f64 = 1e-8;
pub const WINDOW_NAME: &str = "hann";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("sample rate must be positive, got {0}")]
    InvalidRate(u32),
    #[error("audio clip is empty")]
    EmptyAudio,
    #[error("audio too short: need {needed} samples, got {got}")]
    InsufficientAudio { needed: usize, got: usize },
    #[error("invalid STFT parameters: window {window}, hop {hop}")]
    InvalidStft { window: usize, hop: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("normalization statistics were never fitted")]
    Unfitted,
    #[error("refusing to fit normalization on clip {clip:?} tagged {split}")]
    SplitLeak { clip: String, split: &'static str },
    #[error("no training frames to fit normalization on")]
    EmptyTraining,
    #[error("non-finite feature value in clip {0:?}")]
    NonFinite(String),
    #[error("bad feature file: {0}")]
    Format(String),
}

impl From<ReadFault> for FeatureError {
    fn from(f: ReadFault) -> Self {
        FeatureError::Format(format!("{f:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, FeatureError> {
        if sample_rate == 0 {
            return Err(FeatureError::InvalidRate(sample_rate));
        }
        if samples.is_empty() {
            return Err(FeatureError::EmptyAudio);
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Zero crossings of the resampling kernel on each side of its centre.
const SINC_ZERO_CROSSINGS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Band-limited resampling with a Blackman-windowed sinc kernel. The kernel
/// cutoff follows the lower of the two Nyquist frequencies, so downsampling is
/// anti-aliased. Output length is `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, FeatureError> {
    if target_rate == 0 {
        return Err(FeatureError::InvalidRate(target_rate));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = clip.sample_rate as f64;
    let dst = target_rate as f64;
    let step = src / dst;
    let cutoff = (dst / src).min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let input = &clip.samples;
    let n_in = input.len() as i64;
    let n_out = ((input.len() as f64) * dst / src).round().max(1.0) as usize;

    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let centre = m as f64 * step;
        let lo = ((centre - half_width).ceil() as i64).max(0);
        let hi = ((centre + half_width).floor() as i64).min(n_in - 1);
        let mut acc = 0.0;
        for k in lo..=hi {
            let d = k as f64 - centre;
            let w = 0.42 + 0.5 * (PI * d / half_width).cos() + 0.08 * (2.0 * PI * d / half_width).cos();
            acc += input[k as usize] * cutoff * sinc(cutoff * d) * w;
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate)
}

/// Centre `seconds` of a clip. Shorter clips come back whole with `false`.
pub fn center_chunk(clip: &AudioClip, seconds: f64) -> (AudioClip, bool) {
    let want = (seconds * clip.sample_rate as f64).round() as usize;
    if clip.samples.len() <= want {
        return (clip.clone(), clip.samples.len() == want);
    }
    let start = (clip.samples.len() - want) / 2;
    let chunk = AudioClip {
        samples: clip.samples[start..start + want].to_vec(),
        sample_rate: clip.sample_rate,
    };
    (chunk, true)
}

/// Periodic Hann window of `size` samples.
pub fn hann_window(size: usize) -> Vec<f64> {
    (0..size)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / size as f64).cos())
        .collect()
}

/// Number of STFT frames for a signal of `len` samples. Frames start every
/// `hop` samples; a final partial frame is zero-padded so no sample is
/// dropped.
pub fn stft_frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        1 + (len - window).div_ceil(hop)
    }
}

/// Power spectrogram `|FFT(hann * frame)|^2`, `t x (window / 2 + 1)`.
pub fn stft_power(clip: &AudioClip, window: usize, hop: usize) -> Result<Matrix, FeatureError> {
    if window == 0 || hop == 0 {
        return Err(FeatureError::InvalidStft { window, hop });
    }
    let len = clip.samples.len();
    if len < window {
        return Err(FeatureError::InsufficientAudio {
            needed: window,
            got: len,
        });
    }
    let frames = stft_frame_count(len, window, hop);
    let bins = window / 2 + 1;
    let hann = hann_window(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Matrix::zeros(frames, bins);
    for t in 0..frames {
        let start = t * hop;
        let frame = &clip.samples[start..len.min(start + window)];
        for (i, (b, &w)) in buf.iter_mut().zip(&hann).enumerate() {
            *b = Complex::new(frame.get(i).map_or(0.0, |&s| s * w), 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (o, c) in out.row_mut(t).iter_mut().zip(&buf[..bins]) {
            *o = c.norm_sqr();
        }
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `bins + 2` edge frequencies in Hz, equally spaced in mel from 0 to `rate / 2`.
/// Filter `m` rises from edge `m`, peaks at edge `m + 1`, falls to edge `m + 2`.
pub fn mel_edges(bins: usize, rate: u32) -> Vec<f64> {
    let top = hz_to_mel(rate as f64 / 2.0);
    (0..bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bins + 1) as f64))
        .collect()
}

/// Centre frequency (Hz) of every mel filter.
pub fn mel_centers(bins: usize, rate: u32) -> Vec<f64> {
    mel_edges(bins, rate)[1..=bins].to_vec()
}

/// Integral of a unit-peak triangle (`lo`, `mid`, `hi`) from `lo` to `x`.
fn triangle_cdf(x: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    if x <= lo {
        0.0
    } else if x <= mid {
        let d = x - lo;
        d * d / (2.0 * (mid - lo))
    } else if x < hi {
        let rise = (mid - lo) / 2.0;
        let d = hi - x;
        rise + (hi - mid) / 2.0 - d * d / (2.0 * (hi - mid))
    } else {
        (hi - lo) / 2.0
    }
}

/// Triangular mel filterbank as an `(fft_size / 2 + 1) x bins` matrix.
///
/// Each FFT bin `k` is treated as covering `[(k - 1/2) df, (k + 1/2) df]` and
/// receives the triangle's mean value over that interval. Point-sampling the
/// triangles at bin centres would leave the narrowest low-frequency filters
/// empty at 256 bands and 2048-point FFTs; averaging gives every filter a
/// non-zero, contiguous support.
pub fn mel_filterbank(bins: usize, fft_size: usize, rate: u32) -> Matrix {
    let n_fft_bins = fft_size / 2 + 1;
    let df = rate as f64 / fft_size as f64;
    let edges = mel_edges(bins, rate);
    let mut fb = Matrix::zeros(n_fft_bins, bins);
    for m in 0..bins {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_fft_bins {
            let a = (k as f64 - 0.5) * df;
            let b = (k as f64 + 0.5) * df;
            if b <= lo || a >= hi {
                continue;
            }
            let area = triangle_cdf(b, lo, mid, hi) - triangle_cdf(a, lo, mid, hi);
            fb[(k, m)] = (area / df).max(0.0);
        }
    }
    fb
}

/// `ln(power * filterbank + 1e-10)`.
pub fn log_mel(power: &Matrix, filterbank: &Matrix) -> Result<Matrix, FeatureError> {
    let mel = power.matmul(filterbank)?;
    Ok(mel.map(|v| (v + LOG_FLOOR).ln()))
}

/// Which split a clip's features belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitTag {
    Unassigned,
    Train,
    Validation,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Unassigned => "unassigned",
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unassigned" => Some(SplitTag::Unassigned),
            "train" => Some(SplitTag::Train),
            "validation" => Some(SplitTag::Validation),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

/// Parameters the features were produced with, stored in feature files.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineMeta {
    pub window: String,
    pub log_floor: f64,
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for PipelineMeta {
    fn default() -> Self {
        Self {
            window: WINDOW_NAME.into(),
            log_floor: LOG_FLOOR,
            sample_rate: DEFAULT_SAMPLE_RATE,
            fft_size: DEFAULT_FFT_SIZE,
            hop: DEFAULT_HOP,
        }
    }
}

/// Time x frequency features for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Matrix,
    pub clip_id: String,
    pub label: Option<usize>,
    pub split: SplitTag,
    pub normalized: bool,
    pub meta: PipelineMeta,
}

impl FeatureMatrix {
    pub fn new(frames: Matrix, clip_id: impl Into<String>, label: Option<usize>) -> Result<Self, FeatureError> {
        let clip_id = clip_id.into();
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(FeatureError::Shape(ShapeError::new(
                "feature matrix",
                (1, 1),
                frames.shape(),
            )));
        }
        if frames.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(clip_id));
        }
        Ok(Self {
            frames,
            clip_id,
            label,
            split: SplitTag::Unassigned,
            normalized: false,
            meta: PipelineMeta::default(),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.rows()
    }

    pub fn feature_length(&self) -> usize {
        self.frames.cols()
    }
}

/// Resample, chunk, STFT and log-mel settings, with the filterbank cached.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub chunk_seconds: Option<f64>,
    filterbank: Matrix,
}

impl Default for FeaturePipeline {
    fn default() -> Self {
        Self::new(
            DEFAULT_SAMPLE_RATE,
            DEFAULT_FFT_SIZE,
            DEFAULT_HOP,
            DEFAULT_MEL_BINS,
            Some(DEFAULT_CHUNK_SECONDS),
        )
        .expect("default pipeline is valid")
    }
}

impl FeaturePipeline {
    pub fn new(
        sample_rate: u32,
        fft_size: usize,
        hop: usize,
        mel_bins: usize,
        chunk_seconds: Option<f64>,
    ) -> Result<Self, FeatureError> {
        if sample_rate == 0 {
            return Err(FeatureError::InvalidRate(sample_rate));
        }
        if fft_size < 2 || hop == 0 || mel_bins == 0 {
            return Err(FeatureError::InvalidStft { window: fft_size, hop });
        }
        Ok(Self {
            sample_rate,
            fft_size,
            hop,
            mel_bins,
            chunk_seconds,
            filterbank: mel_filterbank(mel_bins, fft_size, sample_rate),
        })
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    pub fn meta(&self) -> PipelineMeta {
        PipelineMeta {
            window: WINDOW_NAME.into(),
            log_floor: LOG_FLOOR,
            sample_rate: self.sample_rate,
            fft_size: self.fft_size,
            hop: self.hop,
        }
    }

    /// Log mel spectrogram of a clip at any input rate.
    pub fn extract(
        &self,
        clip: &AudioClip,
        clip_id: &str,
        label: Option<usize>,
    ) -> Result<FeatureMatrix, FeatureError> {
        let clip = resample(clip, self.sample_rate)?;
        let clip = match self.chunk_seconds {
            Some(seconds) => {
                let (chunk, full) = center_chunk(&clip, seconds);
                if !full {
                    log::warn!(
                        "{clip_id}: {:.2} s is shorter than {seconds} s, using the whole clip",
                        clip.duration_seconds()
                    );
                }
                chunk
            }
            None => clip,
        };
        let power = stft_power(&clip, self.fft_size, self.hop)?;
        let mut fm = FeatureMatrix::new(log_mel(&power, &self.filterbank)?, clip_id, label)?;
        fm.meta = self.meta();
        Ok(fm)
    }
}

/// Per-dimension mean and standard deviation of the training frames.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Split the statistics were fitted on.
    pub split: SplitTag,
    /// Frames that went into the fit; zero means never fitted.
    pub frame_count: usize,
}

/// Fits z-score statistics over every frame of every clip, in order. Clips
/// tagged validation or test are rejected.
pub fn fit_zscore(training: &[FeatureMatrix]) -> Result<NormStats, FeatureError> {
    let first = training.first().ok_or(FeatureError::EmptyTraining)?;
    let l = first.feature_length();
    for fm in training {
        if matches!(fm.split, SplitTag::Validation | SplitTag::Test) {
            return Err(FeatureError::SplitLeak {
                clip: fm.clip_id.clone(),
                split: fm.split.name(),
            });
        }
        if fm.feature_length() != l {
            return Err(ShapeError::new("fit_zscore", (fm.frame_count(), l), fm.frames.shape()).into());
        }
    }
    let count: usize = training.iter().map(FeatureMatrix::frame_count).sum();
    let n = count as f64;
    let mut mean = vec![0.0; l];
    for fm in training {
        for row in fm.frames.iter_rows() {
            crate::tensor::add_into(&mut mean, row);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; l];
    for fm in training {
        for row in fm.frames.iter_rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(NormStats {
        mean,
        std,
        split: SplitTag::Train,
        frame_count: count,
    })
}

fn check_stats(features: &FeatureMatrix, stats: &NormStats) -> Result<(), FeatureError> {
    if stats.frame_count == 0 {
        return Err(FeatureError::Unfitted);
    }
    if stats.mean.len() != features.feature_length() || stats.std.len() != stats.mean.len() {
        return Err(ShapeError::new(
            "z-score statistics",
            (features.frame_count(), stats.mean.len()),
            features.frames.shape(),
        )
        .into());
    }
    Ok(())
}

/// `(x - mean) / std` per dimension.
pub fn apply_zscore(features: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix, FeatureError> {
    check_stats(features, stats)?;
    let mut out = features.clone();
    for r in 0..out.frames.rows() {
        for ((x, &m), &s) in out.frames.row_mut(r).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = (*x - m) / s;
        }
    }
    out.normalized = true;
    Ok(out)
}

/// Inverse of [`apply_zscore`].
pub fn invert_zscore(features: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix, FeatureError> {
    check_stats(features, stats)?;
    let mut out = features.clone();
    for r in 0..out.frames.rows() {
        for ((x, &m), &s) in out.frames.row_mut(r).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = *x * s + m;
        }
    }
    out.normalized = false;
    Ok(out)
}

const FEATURE_MAGIC: &[u8; 8] = b"MCLNNFEA";
pub const FEATURE_FORMAT_VERSION: u32 = 1;
const NO_LABEL: u64 = u64::MAX;

/// Feature file layout (little-endian):
///
/// ```text
/// magic "MCLNNFEA", version u32, l u64, t u64, clip_id str,
/// label u64 (u64::MAX = none), split str, normalized u8,
/// window str, log_floor f64, sample_rate u64, fft_size u64, hop u64,
/// t * l f64 row-major by frame
/// ```
pub fn encode_features(fm: &FeatureMatrix) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(FEATURE_MAGIC);
    w.u32(FEATURE_FORMAT_VERSION);
    w.usize(fm.feature_length());
    w.usize(fm.frame_count());
    w.str(&fm.clip_id);
    w.u64(fm.label.map_or(NO_LABEL, |l| l as u64));
    w.str(fm.split.name());
    w.u8(fm.normalized as u8);
    w.str(&fm.meta.window);
    w.f64(fm.meta.log_floor);
    w.u64(fm.meta.sample_rate as u64);
    w.usize(fm.meta.fft_size);
    w.usize(fm.meta.hop);
    w.f64s(fm.frames.as_slice());
    w.into_inner()
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix, FeatureError> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != FEATURE_MAGIC {
        return Err(FeatureError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FEATURE_FORMAT_VERSION {
        return Err(FeatureError::Format(format!("unsupported version {version}")));
    }
    let l = r.usize()?;
    let t = r.usize()?;
    let clip_id = r.str()?;
    let label = match r.u64()? {
        NO_LABEL => None,
        v => Some(v as usize),
    };
    let split_name = r.str()?;
    let split =
        SplitTag::parse(&split_name).ok_or_else(|| FeatureError::Format(format!("unknown split {split_name:?}")))?;
    let normalized = r.u8()? != 0;
    let meta = PipelineMeta {
        window: r.str()?,
        log_floor: r.f64()?,
        sample_rate: u32::try_from(r.u64()?).map_err(|_| FeatureError::Format("sample rate overflow".into()))?,
        fft_size: r.usize()?,
        hop: r.usize()?,
    };
    let data = r.f64s(
        t.checked_mul(l)
            .ok_or_else(|| FeatureError::Format("size overflow".into()))?,
    )?;
    if r.remaining() != 0 {
        return Err(FeatureError::Format(format!("{} trailing bytes", r.remaining())));
    }
    let mut fm = FeatureMatrix::new(Matrix::from_vec(t, l, data)?, clip_id, label)?;
    fm.split = split;
    fm.normalized = normalized;
    fm.meta = meta;
    Ok(fm)
}

pub fn write_features(fm: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(fm)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_features(&bytes)?)
}

/// Reads a PCM or float WAV file, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bad = |msg: String| Error::from(FeatureError::Format(format!("{}: {msg}", path.display())));
    let mut reader = hound::WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample.max(1) - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| bad(e.to_string()))?
        }
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    Ok(AudioClip::new(mono, spec.sample_rate)?)
}
