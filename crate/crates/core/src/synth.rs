//! Seeded synthetic scenes: FM chirps over white, pink or wind-like noise,
//! with exact ground-truth masks and boxes on the default STFT grid.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blobseg::{connected_components, BinaryMask};
use crate::dsp::{self, AudioClip, DEFAULT_HOP, DEFAULT_SAMPLE_RATE, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::BBox;

/// RMS of the noise bed; chirps are scaled relative to it to hit the SNR.
pub const NOISE_RMS: f64 = 0.01;
const FADE_SECONDS: f64 = 0.010;
const WIND_CUTOFF_HZ: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChirpShape {
    LinearSweep,
    /// Frequency swings between `f_start` and `f_end` on a raised cosine,
    /// two full cycles over the call.
    SinusoidalFm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub f_start: f64,
    pub f_end: f64,
    /// Relative level in `[0, 1]`; the loudest chirp defines the SNR.
    pub amplitude: f64,
    pub shape: ChirpShape,
}

impl ChirpSpec {
    fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Instantaneous frequency at absolute time `t` (clamped to the support).
    pub fn frequency_at(&self, t: f64) -> f64 {
        let d = self.duration();
        let tau = (t - self.t_start).clamp(0.0, d);
        let span = self.f_end - self.f_start;
        match self.shape {
            ChirpShape::LinearSweep => self.f_start + span * tau / d,
            ChirpShape::SinusoidalFm => {
                let rate = 2.0 / d;
                self.f_start + span * 0.5 * (1.0 - (2.0 * PI * rate * tau).cos())
            }
        }
    }

    /// Phase in radians at offset `tau` seconds into the call.
    fn phase(&self, tau: f64) -> f64 {
        let d = self.duration();
        let span = self.f_end - self.f_start;
        match self.shape {
            ChirpShape::LinearSweep => 2.0 * PI * (self.f_start * tau + span * tau * tau / (2.0 * d)),
            ChirpShape::SinusoidalFm => {
                let rate = 2.0 / d;
                2.0 * PI
                    * (self.f_start * tau
                        + 0.5 * span * (tau - (2.0 * PI * rate * tau).sin() / (2.0 * PI * rate)))
            }
        }
    }

    fn validate(&self, duration: f64, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let ok = self.t_start >= 0.0
            && self.t_start < self.t_end
            && self.t_end <= duration
            && self.f_start > 0.0
            && self.f_end > 0.0
            && self.f_start < nyquist
            && self.f_end < nyquist
            && (0.0..=1.0).contains(&self.amplitude);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid chirp {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    /// White noise through a one-pole lowpass at 500 Hz.
    WindLowpass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub duration: f64,
    pub sample_rate: u32,
    pub events: Vec<ChirpSpec>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mask: BinaryMask,
    /// One box per event, in event order.
    pub boxes: Vec<BBox>,
    pub label: u8,
}

impl SceneSpec {
    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || self.sample_rate == 0 {
            return Err(Error::InvalidParameter(
                "scene needs positive duration and sample rate".into(),
            ));
        }
        if !self.noise.snr_db.is_finite() {
            return Err(Error::InvalidParameter("SNR must be finite".into()));
        }
        if self.n_samples() < DEFAULT_WINDOW {
            return Err(Error::InvalidParameter(
                "scene shorter than one analysis window".into(),
            ));
        }
        for e in &self.events {
            e.validate(self.duration, self.sample_rate)?;
        }
        Ok(())
    }

    /// Random scene following the corpus defaults: 10 s at 44.1 kHz; a
    /// positive scene holds 1-4 chirps of 0.1-1.0 s in the 1-8 kHz band, each
    /// inside its own slot of the timeline so calls never overlap.
    pub fn random(seed: u64, positive: bool, snr_db: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let duration = 10.0;
        let kind = match rng.random_range(0..3) {
            0 => NoiseKind::White,
            1 => NoiseKind::Pink,
            _ => NoiseKind::WindLowpass,
        };
        let mut events = Vec::new();
        if positive {
            let n = rng.random_range(1..=4usize);
            let slot = duration / n as f64;
            for i in 0..n {
                let len = rng.random_range(0.1..1.0);
                let margin = 0.05;
                let start = i as f64 * slot + margin + rng.random_range(0.0..(slot - len - 2.0 * margin));
                let f_lo = rng.random_range(1_000.0..7_000.0);
                let f_hi = rng.random_range((f_lo + 500.0)..8_000.0);
                let (f_start, f_end) = if rng.random_bool(0.5) { (f_lo, f_hi) } else { (f_hi, f_lo) };
                let shape = if rng.random_bool(0.7) {
                    ChirpShape::LinearSweep
                } else {
                    ChirpShape::SinusoidalFm
                };
                events.push(ChirpSpec {
                    t_start: start,
                    t_end: start + len,
                    f_start,
                    f_end,
                    amplitude: rng.random_range(0.5..=1.0),
                    shape,
                });
            }
        }
        SceneSpec {
            duration,
            sample_rate: DEFAULT_SAMPLE_RATE,
            events,
            noise: NoiseSpec { kind, snr_db },
            seed,
        }
    }
}

fn noise_bed(kind: NoiseKind, n: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = match kind {
        NoiseKind::White => white,
        NoiseKind::Pink => {
            // Paul Kellet's refined pink filter
            let mut b = [0.0f64; 7];
            white
                .iter()
                .map(|&w| {
                    b[0] = 0.99886 * b[0] + w * 0.0555179;
                    b[1] = 0.99332 * b[1] + w * 0.0750759;
                    b[2] = 0.96900 * b[2] + w * 0.1538520;
                    b[3] = 0.86650 * b[3] + w * 0.3104856;
                    b[4] = 0.55000 * b[4] + w * 0.5329522;
                    b[5] = -0.7616 * b[5] - w * 0.0168980;
                    let y = b.iter().sum::<f64>() + w * 0.5362;
                    b[6] = w * 0.115926;
                    y
                })
                .collect()
        }
        NoiseKind::WindLowpass => {
            let alpha = 1.0 - (-2.0 * PI * WIND_CUTOFF_HZ / sample_rate as f64).exp();
            let mut y = 0.0;
            white
                .iter()
                .map(|&w| {
                    y += alpha * (w - y);
                    y
                })
                .collect()
        }
    };
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= NOISE_RMS / rms);
    }
    out
}

fn chirp_samples(event: &ChirpSpec, sample_rate: u32) -> (usize, Vec<f64>) {
    let sr = sample_rate as f64;
    let start = (event.t_start * sr).ceil() as usize;
    let end = (event.t_end * sr).floor() as usize;
    let fade = FADE_SECONDS.min(event.duration() / 2.0);
    let samples = (start..=end)
        .map(|i| {
            let tau = i as f64 / sr - event.t_start;
            let from_edge = tau.min(event.duration() - tau).max(0.0);
            let env = if from_edge < fade {
                0.5 * (1.0 - (PI * from_edge / fade).cos())
            } else {
                1.0
            };
            event.amplitude * env * event.phase(tau).sin()
        })
        .collect();
    (start, samples)
}

/// Ground-truth mask of one event on the default STFT grid: a frame belongs
/// to the event when its center time lies in `[t_start, t_end]`; it marks
/// bins from `round(f_min/df) - 1` to `round(f_max/df) + 1`, where
/// `[f_min, f_max]` is the instantaneous-frequency range over the part of
/// the frame inside the event.
pub fn event_truth_mask(
    event: &ChirpSpec,
    n_frames: usize,
    sample_rate: u32,
    window_len: usize,
    hop: usize,
) -> BinaryMask {
    let n_bins = window_len / 2;
    let sr = sample_rate as f64;
    let bin_hz = sr / window_len as f64;
    let mut mask = BinaryMask::new(n_bins, n_frames);
    for j in 0..n_frames {
        let center = dsp::frame_center_time(j, window_len, hop, sample_rate);
        if center < event.t_start || center > event.t_end {
            continue;
        }
        let a = (j * hop) as f64 / sr;
        let b = (j * hop + window_len) as f64 / sr;
        let (lo, hi) = (a.max(event.t_start), b.min(event.t_end));
        let steps = 32;
        let (mut f_min, mut f_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..=steps {
            let f = event.frequency_at(lo + (hi - lo) * s as f64 / steps as f64);
            f_min = f_min.min(f);
            f_max = f_max.max(f);
        }
        let k0 = ((f_min / bin_hz).round() as usize).saturating_sub(1);
        let k1 = ((f_max / bin_hz).round() as usize + 1).min(n_bins - 1);
        for k in k0..=k1 {
            mask.set(k, j, true);
        }
    }
    mask
}

/// Synthesizes a scene and its ground truth on the default STFT grid
/// (window 512, hop 706).
pub fn generate_scene(spec: &SceneSpec) -> Result<(AudioClip, GroundTruth)> {
    spec.validate()?;
    let n = spec.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut signal = vec![0.0; n];
    let mut support = vec![false; n];
    for event in &spec.events {
        let (start, samples) = chirp_samples(event, spec.sample_rate);
        for (i, s) in samples.into_iter().enumerate() {
            if let Some(slot) = signal.get_mut(start + i) {
                *slot += s;
                support[start + i] = true;
            }
        }
    }
    let noise = noise_bed(spec.noise.kind, n, spec.sample_rate, &mut rng);
    let support_len = support.iter().filter(|&&s| s).count();
    if support_len > 0 {
        let power: f64 = signal
            .iter()
            .zip(&support)
            .filter(|(_, &s)| s)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            / support_len as f64;
        let target = NOISE_RMS * 10f64.powf(spec.noise.snr_db / 20.0);
        if power > 0.0 {
            let gain = target / power.sqrt();
            signal.iter_mut().for_each(|v| *v *= gain);
        }
    }
    let samples: Vec<f64> = signal
        .iter()
        .zip(&noise)
        .map(|(s, w)| (s + w).clamp(-1.0, 1.0))
        .collect();
    let clip = AudioClip::new(samples, spec.sample_rate)?;

    let n_frames = dsp::frame_count(n, DEFAULT_WINDOW, DEFAULT_HOP);
    let mut mask = BinaryMask::new(DEFAULT_WINDOW / 2, n_frames);
    let mut boxes = Vec::new();
    for event in &spec.events {
        let em = event_truth_mask(event, n_frames, spec.sample_rate, DEFAULT_WINDOW, DEFAULT_HOP);
        if em.is_empty() {
            continue;
        }
        let pixels: Vec<(usize, usize)> = connected_components(&em)
            .into_iter()
            .flat_map(|b| b.pixels)
            .collect();
        for &(r, c) in &pixels {
            mask.set(r, c, true);
        }
        let f0 = pixels.iter().map(|p| p.0).min().unwrap_or(0);
        let f1 = pixels.iter().map(|p| p.0).max().unwrap_or(0);
        let t0 = pixels.iter().map(|p| p.1).min().unwrap_or(0);
        let t1 = pixels.iter().map(|p| p.1).max().unwrap_or(0);
        boxes.push(BBox { t0, t1, f0, f1 });
    }
    let label = u8::from(!boxes.is_empty());
    Ok((clip, GroundTruth { mask, boxes, label }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { root, rows })
    }

    pub fn audio_path(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.path)
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}.png"))
    }

    pub fn boxes_path(&self, id: &str) -> PathBuf {
        self.root.join("boxes").join(format!("{id}.json"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusOptions {
    pub n_scenes: usize,
    pub pos_fraction: f64,
    pub seed: u64,
    pub snr_db: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            n_scenes: 10,
            pos_fraction: 0.5,
            seed: 0,
            snr_db: 20.0,
        }
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Scene specs for a corpus: `round(n * pos_fraction)` positives at shuffled
/// positions, each scene seeded from the master seed.
pub fn corpus_specs(opts: &CorpusOptions) -> Result<Vec<SceneSpec>> {
    if opts.n_scenes == 0 {
        return Err(Error::InvalidParameter("corpus needs at least one scene".into()));
    }
    if !(0.0..=1.0).contains(&opts.pos_fraction) {
        return Err(Error::InvalidParameter(format!(
            "positive fraction {} outside [0, 1]",
            opts.pos_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_pos = (opts.n_scenes as f64 * opts.pos_fraction).round() as usize;
    let mut labels: Vec<bool> = (0..opts.n_scenes).map(|i| i < n_pos).collect();
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    Ok(labels
        .into_iter()
        .map(|positive| SceneSpec::random(rng.random(), positive, opts.snr_db))
        .collect())
}

/// Writes `audio/*.wav`, `masks/*.png`, `boxes/*.json` and `manifest.csv`
/// under `out_dir`.
pub fn generate_corpus(opts: &CorpusOptions, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let root = out_dir.as_ref().to_path_buf();
    let specs = corpus_specs(opts)?;
    for sub in ["audio", "masks", "boxes"] {
        let d = root.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let rows = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let id = scene_id(i);
            let (clip, truth) = generate_scene(spec)?;
            let rel = format!("audio/{id}.wav");
            dsp::write_wav(root.join(&rel), &clip)?;
            io::write_mask_png(root.join("masks").join(format!("{id}.png")), &truth.mask)?;
            io::write_boxes_json(root.join("boxes").join(format!("{id}.json")), &truth.boxes)?;
            Ok(ManifestRow {
                id,
                path: rel,
                label: truth.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = root.join(MANIFEST_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(Manifest { root, rows })
}
