//! Audio loading, short-time Fourier spectrograms and the derived input
//! variants (per-channel mean subtraction, mel smoothing, resizing).
//!
//! Spectrogram rows are frequency bins with row 0 = DC; columns are frames
//! in order of their start sample.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;
pub const DEFAULT_WINDOW: usize = 512;
/// A 10 s clip at 44.1 kHz yields 624 frames with this hop.
pub const DEFAULT_HOP: usize = 706;
pub const DEFAULT_FLOOR_DB: f64 = -80.0;
pub const DEFAULT_N_MELS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidClip("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidClip(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float), averaging
/// channels down to mono and normalizing integers by full scale.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported => Error::WavUnsupported {
            path: path.into(),
            encoding: "unsupported format".into(),
        },
        other => Error::WavUnreadable {
            path: path.into(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::WavUnsupported {
            path: path.into(),
            encoding: "zero channels".into(),
        });
    }
    let unreadable = |e: hound::Error| Error::WavUnreadable {
        path: path.into(),
        reason: e.to_string(),
    };
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(unreadable)?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let full_scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(unreadable)?
        }
        (format, bits) => {
            return Err(Error::WavUnsupported {
                path: path.into(),
                encoding: format!("{format:?} {bits}-bit"),
            })
        }
    };
    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(Error::WavEmpty { path: path.into() });
    }
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(mono, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        writer.write_sample(s as f32).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    LogDb,
}

/// Which transformation produced a spectrogram's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Raw,
    /// Per-row mean removed; values may be negative.
    MeanSubtracted,
    MelReconstructed,
    Resized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub scale: Scale,
    /// Floor for `LogDb`, in dB relative to the matrix maximum.
    pub floor_db: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            scale: Scale::LogDb,
            floor_db: DEFAULT_FLOOR_DB,
        }
    }
}

impl StftParams {
    pub fn linear() -> Self {
        Self {
            scale: Scale::Linear,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || !self.window_len.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "window length must be even and >= 2, got {}",
                self.window_len
            )));
        }
        if self.hop == 0 {
            return Err(Error::InvalidParameter("hop must be >= 1".into()));
        }
        if !(self.floor_db < 0.0) {
            return Err(Error::InvalidParameter("floor_db must be negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Matrix,
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub scale: Scale,
    pub variant: Variant,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.values.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Frequency spacing between adjacent bins, in Hz.
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.window_len as f64
    }

    fn with_values(&self, values: Matrix, variant: Variant) -> Self {
        Self {
            values,
            variant,
            ..self.clone()
        }
    }
}

/// Number of whole frames of `window_len` samples, `hop` apart, that fit in
/// `n_samples`.
pub fn frame_count(n_samples: usize, window_len: usize, hop: usize) -> usize {
    if n_samples < window_len || hop == 0 {
        0
    } else {
        1 + (n_samples - window_len) / hop
    }
}

/// First sample of frame `j`.
pub fn frame_start(j: usize, hop: usize) -> usize {
    j * hop
}

/// Time in seconds of the center of frame `j`.
pub fn frame_center_time(j: usize, window_len: usize, hop: usize, sample_rate: u32) -> f64 {
    (j * hop + window_len / 2) as f64 / sample_rate as f64
}

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Hamming-windowed magnitude spectrogram. Keeps bins `0..window_len/2`
/// (DC through one below Nyquist).
pub fn stft_spectrogram(clip: &AudioClip, params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    let n = clip.samples.len();
    let win = params.window_len;
    if n < win {
        return Err(Error::ClipTooShort {
            samples: n,
            window: win,
        });
    }
    let n_frames = frame_count(n, win, params.hop);
    let n_bins = win / 2;
    let window = hamming(win);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(win);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Matrix::zeros(n_bins, n_frames);
    for j in 0..n_frames {
        let start = frame_start(j, params.hop);
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(clip.samples[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(n_bins).enumerate() {
            values.set(k, j, c.norm());
        }
    }
    if params.scale == Scale::LogDb {
        values = to_db(&values, params.floor_db);
    }
    Ok(Spectrogram {
        values,
        sample_rate: clip.sample_rate,
        window_len: win,
        hop: params.hop,
        scale: params.scale,
        variant: Variant::Raw,
    })
}

/// `20 log10(max(v, floor))` with the floor `floor_db` below the matrix
/// maximum. An all-zero matrix maps to `floor_db` everywhere.
pub fn to_db(linear: &Matrix, floor_db: f64) -> Matrix {
    let peak = linear.max();
    let reference = if peak > 0.0 { peak } else { 1.0 };
    let floor = reference * 10f64.powf(floor_db / 20.0);
    let offset = if peak > 0.0 { 0.0 } else { -20.0 * reference.log10() };
    linear.map(|v| 20.0 * v.max(floor).log10() + offset)
}

/// Subtracts each frequency row's mean over frames.
pub fn mean_subtract(spec: &Spectrogram) -> Spectrogram {
    let (rows, cols) = spec.shape();
    let mut out = spec.values.clone();
    for r in 0..rows {
        let mean = spec.values.row(r).iter().sum::<f64>() / cols as f64;
        for c in 0..cols {
            out.set(r, c, spec.values.get(r, c) - mean);
        }
    }
    spec.with_values(out, Variant::MeanSubtracted)
}

/// Triangular mel filters, `weights[m][k]` for filter `m` and bin `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Matrix,
    f_min: f64,
    f_max: f64,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelFilterbank {
    /// Builds `n_mels` triangles with centers equally spaced on the mel scale
    /// between `f_min` and `f_max`. A filter too narrow to reach any bin
    /// center is given its nearest bin, and a bin inside `[f_min, f_max]`
    /// reached by no filter is given to the filter with the nearest center,
    /// so every row and every in-band column carries weight.
    pub fn new(
        n_mels: usize,
        n_bins: usize,
        sample_rate: u32,
        window_len: usize,
        f_min: f64,
        f_max: f64,
    ) -> Result<Self> {
        if n_mels == 0 || n_bins == 0 {
            return Err(Error::InvalidParameter(
                "filterbank needs at least one filter and one bin".into(),
            ));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
            return Err(Error::InvalidParameter(format!(
                "mel band [{f_min}, {f_max}] invalid for Nyquist {nyquist}"
            )));
        }
        let bin_hz = sample_rate as f64 / window_len as f64;
        let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut w = Matrix::zeros(n_mels, n_bins);
        for m in 0..n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let v = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                w.set(m, k, v);
            }
            if w.row(m).iter().all(|&v| v == 0.0) {
                let k = ((center / bin_hz).round() as usize).min(n_bins - 1);
                w.set(m, k, 1.0);
            }
        }
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            if f < f_min || f > f_max || (0..n_mels).any(|m| w.get(m, k) > 0.0) {
                continue;
            }
            let nearest = (0..n_mels)
                .min_by(|&a, &b| {
                    let da = (edges[a + 1] - f).abs();
                    let db = (edges[b + 1] - f).abs();
                    da.total_cmp(&db)
                })
                .unwrap_or(0);
            w.set(nearest, k, 1.0);
        }
        Ok(Self {
            weights: w,
            f_min,
            f_max,
        })
    }

    /// Default bank for a spectrogram: 64 filters over `[0, sample_rate/2]`.
    pub fn for_spectrogram(spec: &Spectrogram) -> Result<Self> {
        Self::new(
            DEFAULT_N_MELS,
            spec.n_bins(),
            spec.sample_rate,
            spec.window_len,
            0.0,
            spec.sample_rate as f64 / 2.0,
        )
    }

    pub fn identity(n_bins: usize) -> Self {
        Self {
            weights: Matrix::from_fn(n_bins, n_bins, |r, c| if r == c { 1.0 } else { 0.0 }),
            f_min: 0.0,
            f_max: 0.0,
        }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    pub fn band(&self) -> (f64, f64) {
        (self.f_min, self.f_max)
    }
}

/// Projects onto the mel filterbank and back through the row-normalized
/// transpose: `out = Wn^T (W S)` where row `m` of `Wn` is row `m` of `W`
/// divided by its sum. Negative results are clamped to zero.
pub fn mel_reconstruct(spec: &Spectrogram, fb: &MelFilterbank) -> Result<Spectrogram> {
    if spec.scale != Scale::Linear {
        return Err(Error::InvalidParameter(
            "mel reconstruction requires a linear-magnitude spectrogram".into(),
        ));
    }
    if fb.n_bins() != spec.n_bins() {
        return Err(Error::shape(
            format!("{} filterbank bins", spec.n_bins()),
            fb.n_bins(),
        ));
    }
    let w = &fb.weights;
    let (n_bins, n_frames) = spec.shape();
    let n_mels = fb.n_mels();
    let row_sums: Vec<f64> = (0..n_mels).map(|m| w.row(m).iter().sum()).collect();
    let mut out = Matrix::zeros(n_bins, n_frames);
    let mut mel = vec![0.0; n_mels];
    for j in 0..n_frames {
        for (m, slot) in mel.iter_mut().enumerate() {
            *slot = (0..n_bins).map(|k| w.get(m, k) * spec.values.get(k, j)).sum();
        }
        for k in 0..n_bins {
            let v: f64 = (0..n_mels)
                .filter(|&m| row_sums[m] > 0.0)
                .map(|m| w.get(m, k) / row_sums[m] * mel[m])
                .sum();
            out.set(k, j, v.max(0.0));
        }
    }
    Ok(spec.with_values(out, Variant::MelReconstructed))
}

/// Bilinear resize with corner-aligned sampling.
pub fn resize_bilinear(spec: &Spectrogram, out_rows: usize, out_cols: usize) -> Result<Spectrogram> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::InvalidParameter(
            "resize target must be at least 1x1".into(),
        ));
    }
    Ok(spec.with_values(
        spec.values.resize_bilinear(out_rows, out_cols),
        Variant::Resized,
    ))
}
