//! Command-line front end: `synth`, `spectrogram`, `segment`, `train`,
//! `predict` and `eval`.
//!
//! Exit codes are 0 on success, 1 on runtime or data failures and 2 on
//! usage errors. Settings resolve as flags, then the optional `--config`
//! file, then built-in defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::attention::{self, export_yolo_labels, heatmap_to_bboxes, Heatmap};
use crate::blobseg::{connected_components, segment, BinaryMask, SegParams};
use crate::dsp::{self, Scale, Spectrogram, StftParams};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{self, BBox, EvalReport, ItemMetrics};
use crate::nnet::{self, checkpoint, Network, Optimizer, Sample, Topology, TrainConfig, NET_SIZE};
use crate::synth::{self, CorpusOptions, Manifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sonotag", version, about = "Bird-call detection on spectrograms")]
struct Cli {
    /// Key-value settings file (TOML); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-file work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus.
    Synth(SynthArgs),
    /// Compute spectrograms and write them as .npy and PNG.
    Spectrogram(SpectrogramArgs),
    /// Blind blob segmentation of WAV files.
    Segment(SegmentArgs),
    /// Train a U-net or classifier on a corpus.
    Train(TrainArgs),
    /// Predict masks or attention maps with a trained model.
    Predict(PredictArgs),
    /// Compare predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    pos_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScaleArg {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Raw,
    MeanSubtracted,
    Mel,
    Resized,
}

#[derive(Debug, Args)]
struct StftArgs {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
}

#[derive(Debug, Args)]
struct SpectrogramArgs {
    /// WAV file or directory of WAV files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    stft: StftArgs,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    #[arg(long, value_enum, default_value = "raw")]
    variant: VariantArg,
    /// Output size `ROWSxCOLS` for the resized variant.
    #[arg(long, default_value = "64x64")]
    size: String,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    stft: StftArgs,
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long)]
    close_size: Option<usize>,
    #[arg(long)]
    dilate_size: Option<usize>,
    #[arg(long)]
    median_k: Option<usize>,
    #[arg(long)]
    min_area: Option<usize>,
    /// Also write YOLO label files.
    #[arg(long)]
    yolo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Unet,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: Task,
    /// Corpus directory holding manifest.csv.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training report path (default: checkpoint path with `.report.json`).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    stft: StftArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dice_smooth: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Mask,
    Cam,
    Saliency,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    stft: StftArgs,
    /// Mask threshold (mask mode) or heatmap threshold (cam/saliency).
    #[arg(long)]
    threshold: Option<f64>,
    /// Minimum heatmap region size, in pixels.
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    yolo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalKind {
    Boxes,
    Masks,
    Labels,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum)]
    kind: EvalKind,
    /// Directory for report.json and report.csv (default: the prediction
    /// directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    stft: StftSection,
    seg: SegSection,
    train: TrainSection,
    attention: AttentionSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StftSection {
    window_len: Option<usize>,
    hop: Option<usize>,
    scale: Option<ScaleArg>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SegSection {
    factor: Option<f64>,
    close_size: Option<usize>,
    dilate_size: Option<usize>,
    median_k: Option<usize>,
    min_area: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    seed: Option<u64>,
    dice_smooth: Option<f64>,
    optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AttentionSection {
    threshold: Option<f64>,
    min_area: Option<usize>,
}

const DEFAULT_MASK_THRESHOLD: f64 = 0.5;
const DEFAULT_HEATMAP_THRESHOLD: f64 = 0.5;
const DEFAULT_HEATMAP_MIN_AREA: usize = 20;

/// Failure of a command, mapped to an exit code.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load_config(path: Option<&Path>) -> std::result::Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))
}

fn stft_params(flags: &StftArgs, file: &StftSection, scale: Scale) -> Result<StftParams> {
    let p = StftParams {
        window_len: flags.window.or(file.window_len).unwrap_or(dsp::DEFAULT_WINDOW),
        hop: flags.hop.or(file.hop).unwrap_or(dsp::DEFAULT_HOP),
        scale,
        floor_db: dsp::DEFAULT_FLOOR_DB,
    };
    p.validate()?;
    Ok(p)
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if cli.jobs == Some(0) {
        eprintln!("error: --jobs must be >= 1");
        return EXIT_USAGE;
    }
    let result = load_config(cli.config.as_deref()).and_then(|cfg| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.jobs {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| Failure::Runtime(e.to_string()))?;
        pool.install(|| dispatch(cli.command, &cfg))
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command, cfg: &FileConfig) -> CmdResult {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Spectrogram(a) => cmd_spectrogram(a, cfg),
        Command::Segment(a) => cmd_segment(a, cfg),
        Command::Train(a) => cmd_train(a, cfg),
        Command::Predict(a) => cmd_predict(a, cfg),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// WAV inputs as `(id, path)` sorted by id. A directory without WAV files
/// falls back to its `audio/` subdirectory (corpus layout).
fn wav_inputs(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if input.is_file() {
        return Ok(vec![(stem(input), input.to_path_buf())]);
    }
    let list = |dir: &Path| -> Result<Vec<(String, PathBuf)>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let is_wav = path
                .extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("wav"));
            if path.is_file() && is_wav {
                out.push((stem(&path), path));
            }
        }
        out.sort();
        Ok(out)
    };
    let direct = list(input)?;
    let audio = input.join("audio");
    if direct.is_empty() && audio.is_dir() {
        return list(&audio);
    }
    Ok(direct)
}

/// Runs `work` on every input in parallel, prints the summary lines of the
/// successes sorted by id and reports per-file failures on stderr.
fn for_each_file<F>(inputs: &[(String, PathBuf)], work: F) -> CmdResult
where
    F: Fn(&str, &Path) -> Result<String> + Sync,
{
    let results: Vec<(String, Result<String>)> = inputs
        .par_iter()
        .map(|(id, path)| (id.clone(), work(id, path)))
        .collect();
    let mut failed = 0;
    for (id, res) in results {
        match res {
            Ok(line) => println!("{line}"),
            Err(e) => {
                eprintln!("error: {id}: {e}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} files failed", inputs.len())));
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    if a.n == 0 || !(0.0..=1.0).contains(&a.pos_fraction) || !a.snr_db.is_finite() {
        return Err(Failure::Usage(
            "--n must be >= 1, --pos-fraction in [0, 1] and --snr-db finite".into(),
        ));
    }
    let opts = CorpusOptions {
        n_scenes: a.n,
        pos_fraction: a.pos_fraction,
        seed: a.seed,
        snr_db: a.snr_db,
    };
    let manifest = synth::generate_corpus(&opts, &a.out)?;
    let n_pos = manifest.rows.iter().filter(|r| r.label == 1).count();
    println!(
        "{} scenes ({} positive, {} negative) in {}",
        manifest.rows.len(),
        n_pos,
        manifest.rows.len() - n_pos,
        a.out.display()
    );
    Ok(())
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), Failure> {
    let bad = || Failure::Usage(format!("--size must look like 64x64, got {s:?}"));
    let (r, c) = s.split_once('x').ok_or_else(bad)?;
    let r: usize = r.parse().map_err(|_| bad())?;
    let c: usize = c.parse().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

fn cmd_spectrogram(a: SpectrogramArgs, cfg: &FileConfig) -> CmdResult {
    let scale = match a.scale.or(cfg.stft.scale).unwrap_or(ScaleArg::Log) {
        ScaleArg::Linear => Scale::Linear,
        ScaleArg::Log => Scale::LogDb,
    };
    let size = parse_size(&a.size)?;
    let params = stft_params(&a.stft, &cfg.stft, Scale::Linear)?;
    let inputs = wav_inputs(&a.input)?;
    create_dir(&a.out)?;
    for_each_file(&inputs, |id, path| {
        let clip = dsp::load_wav(path)?;
        let mut spec = dsp::stft_spectrogram(&clip, &params)?;
        spec = match a.variant {
            VariantArg::Raw | VariantArg::MeanSubtracted => spec,
            VariantArg::Mel => dsp::mel_reconstruct(&spec, &dsp::MelFilterbank::for_spectrogram(&spec)?)?,
            VariantArg::Resized => dsp::resize_bilinear(&spec, size.0, size.1)?,
        };
        if scale == Scale::LogDb || a.variant == VariantArg::MeanSubtracted {
            spec = Spectrogram {
                values: dsp::to_db(&spec.values, dsp::DEFAULT_FLOOR_DB),
                scale: Scale::LogDb,
                ..spec
            };
        }
        if a.variant == VariantArg::MeanSubtracted {
            spec = dsp::mean_subtract(&spec);
        }
        let npy = a.out.join(format!("{id}.npy"));
        std::fs::write(&npy, io::encode_npy(&spec.values)).map_err(|e| Error::io(&npy, e))?;
        io::write_heatmap_png(a.out.join(format!("{id}.png")), &display_scale(&spec.values))?;
        let (rows, cols) = spec.shape();
        Ok(format!("{id} {rows}x{cols}"))
    })
}

/// Min-max scaling to `[0, 1]` for PNG previews.
fn display_scale(m: &crate::matrix::Matrix) -> crate::matrix::Matrix {
    let (lo, hi) = (m.min(), m.max());
    if hi > lo {
        m.map(|v| (v - lo) / (hi - lo))
    } else {
        m.map(|_| 0.0)
    }
}

fn seg_params(a: &SegmentArgs, file: &SegSection) -> Result<SegParams> {
    let d = SegParams::default();
    let p = SegParams {
        factor: a.factor.or(file.factor).unwrap_or(d.factor),
        close_size: a.close_size.or(file.close_size).unwrap_or(d.close_size),
        dilate_size: a.dilate_size.or(file.dilate_size).unwrap_or(d.dilate_size),
        median_k: a.median_k.or(file.median_k).unwrap_or(d.median_k),
        min_area: a.min_area.or(file.min_area).unwrap_or(d.min_area),
    };
    if !(p.factor > 0.0) {
        return Err(Error::InvalidParameter("--factor must be positive".into()));
    }
    for (name, v) in [("close", p.close_size), ("dilate", p.dilate_size), ("median", p.median_k)] {
        if v % 2 == 0 {
            return Err(Error::InvalidParameter(format!("{name} size must be odd, got {v}")));
        }
    }
    Ok(p)
}

struct OutDirs {
    masks: PathBuf,
    boxes: PathBuf,
    labels: Option<PathBuf>,
}

impl OutDirs {
    fn create(out: &Path, yolo: bool) -> Result<Self> {
        let dirs = Self {
            masks: out.join("masks"),
            boxes: out.join("boxes"),
            labels: yolo.then(|| out.join("labels")),
        };
        create_dir(&dirs.masks)?;
        create_dir(&dirs.boxes)?;
        if let Some(l) = &dirs.labels {
            create_dir(l)?;
        }
        Ok(dirs)
    }

    fn write_boxes(&self, id: &str, boxes: &[BBox], shape: (usize, usize)) -> Result<()> {
        io::write_boxes_json(self.boxes.join(format!("{id}.json")), boxes)?;
        if let Some(dir) = &self.labels {
            write_text(&dir.join(format!("{id}.txt")), &export_yolo_labels(boxes, shape.1, shape.0)?)?;
        }
        Ok(())
    }
}

fn cmd_segment(a: SegmentArgs, cfg: &FileConfig) -> CmdResult {
    let params = seg_params(&a, &cfg.seg).map_err(|e| Failure::Usage(e.to_string()))?;
    let stft = stft_params(&a.stft, &cfg.stft, Scale::Linear)?;
    let inputs = wav_inputs(&a.input)?;
    let dirs = OutDirs::create(&a.out, a.yolo)?;
    for_each_file(&inputs, |id, path| {
        let spec = dsp::stft_spectrogram(&dsp::load_wav(path)?, &stft)?;
        let (mask, blobs) = segment(&spec, &params)?;
        let boxes: Vec<BBox> = blobs.iter().map(|b| b.bbox).collect();
        io::write_mask_png(dirs.masks.join(format!("{id}.png")), &mask)?;
        dirs.write_boxes(id, &boxes, mask.shape())?;
        Ok(format!("{id} {}", boxes.len()))
    })
}

fn train_config(a: &TrainArgs, file: &TrainSection) -> Result<TrainConfig> {
    let d = match a.task {
        Task::Unet => TrainConfig::unet_default(),
        Task::Classifier => TrainConfig::classifier_default(),
    };
    let optimizer = match a.optimizer.or(file.optimizer) {
        None => d.optimizer,
        Some(OptimizerArg::Sgd) => Optimizer::Sgd,
        Some(OptimizerArg::Adam) => Optimizer::adam(),
    };
    let c = TrainConfig {
        epochs: a.epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: a.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        learning_rate: a.lr.or(file.learning_rate).unwrap_or(d.learning_rate),
        seed: a.seed.or(file.seed).unwrap_or(d.seed),
        dice_smooth: a.dice_smooth.or(file.dice_smooth).unwrap_or(d.dice_smooth),
        optimizer,
    };
    c.validate()?;
    Ok(c)
}

fn report_path(a: &TrainArgs) -> PathBuf {
    a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    })
}

/// Loads a corpus as network samples: U-net targets come from the mask
/// PNGs, classifier targets from the manifest labels.
pub fn load_samples(data: &Path, stft: &StftParams, unet: bool) -> Result<Vec<(String, Sample)>> {
    let manifest = Manifest::load(data)?;
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let spec = dsp::stft_spectrogram(&dsp::load_wav(manifest.audio_path(row))?, stft)?;
            let input = nnet::prepare_input(&spec, NET_SIZE)?;
            let target = if unet {
                nnet::prepare_target(&io::read_mask_png(manifest.mask_path(&row.id))?, NET_SIZE)
            } else {
                nnet::Tensor::from_vec(&[1], vec![f64::from(row.label)])?
            };
            Ok((row.id.clone(), Sample { input, target }))
        })
        .collect()
}

fn cmd_train(a: TrainArgs, cfg: &FileConfig) -> CmdResult {
    let tc = train_config(&a, &cfg.train).map_err(|e| Failure::Usage(e.to_string()))?;
    let stft = stft_params(&a.stft, &cfg.stft, Scale::Linear)?;
    let samples: Vec<Sample> = load_samples(&a.data, &stft, a.task == Task::Unet)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let log = |s: &nnet::EpochStats| match (s.mean_dice, s.accuracy) {
        (Some(d), _) => println!("epoch {} loss {:.6} dice {:.6}", s.epoch, s.mean_loss, d),
        (_, Some(acc)) => println!("epoch {} loss {:.6} accuracy {:.4}", s.epoch, s.mean_loss, acc),
        _ => println!("epoch {} loss {:.6}", s.epoch, s.mean_loss),
    };
    let (net, report) = match a.task {
        Task::Unet => {
            let mut net = Network::toy_unet(NET_SIZE, tc.seed)?;
            let r = nnet::train_with(&mut net, &samples, &tc, log)?;
            (net, r)
        }
        Task::Classifier => {
            let mut net = Network::toy_classifier(NET_SIZE, tc.seed)?;
            let r = nnet::train_classifier_with(&mut net, &samples, &tc, log)?;
            (net, r)
        }
    };
    checkpoint::save(&net, &a.out)?;
    let rp = report_path(&a);
    write_text(&rp, &(report.to_json()? + "\n"))?;
    println!("wrote {} and {}", a.out.display(), rp.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs, cfg: &FileConfig) -> CmdResult {
    let net = checkpoint::load(&a.model)?;
    let expected = match a.mode {
        Mode::Mask => Topology::Unet,
        Mode::Cam | Mode::Saliency => Topology::Classifier,
    };
    if net.topology() != expected {
        return Err(Error::TopologyMismatch {
            expected: expected.name().into(),
            actual: net.topology().name().into(),
        }
        .into());
    }
    let default_threshold = match a.mode {
        Mode::Mask => DEFAULT_MASK_THRESHOLD,
        _ => cfg.attention.threshold.unwrap_or(DEFAULT_HEATMAP_THRESHOLD),
    };
    let threshold = a.threshold.unwrap_or(default_threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Failure::Usage(format!("--threshold must lie in (0, 1), got {threshold}")));
    }
    let min_area = a
        .min_area
        .or(cfg.attention.min_area)
        .unwrap_or(DEFAULT_HEATMAP_MIN_AREA);
    let stft = stft_params(&a.stft, &cfg.stft, Scale::Linear)?;
    let inputs = wav_inputs(&a.input)?;
    let dirs = OutDirs::create(&a.out, a.yolo)?;
    let heatmaps = a.out.join("heatmaps");
    if a.mode != Mode::Mask {
        create_dir(&heatmaps)?;
    }
    let scores: std::sync::Mutex<BTreeMap<String, f64>> = Default::default();
    for_each_file(&inputs, |id, path| {
        let spec = dsp::stft_spectrogram(&dsp::load_wav(path)?, &stft)?;
        let shape = spec.shape();
        if a.mode == Mode::Mask {
            let mask = nnet::predict_mask(&net, &spec, threshold)?;
            let boxes: Vec<BBox> = connected_components(&mask).iter().map(|b| b.bbox).collect();
            io::write_mask_png(dirs.masks.join(format!("{id}.png")), &mask)?;
            dirs.write_boxes(id, &boxes, shape)?;
            return Ok(format!("{id} {:.6} {}", mask.density(), boxes.len()));
        }
        let input = nnet::prepare_input(&spec, NET_SIZE)?;
        let grid = match a.mode {
            Mode::Cam => attention::grad_cam(&net, &input)?,
            _ => attention::guided_backprop(&net, &input)?,
        };
        let native = Heatmap::normalized(grid.values().resize_bilinear(shape.0, shape.1));
        io::write_heatmap_png(heatmaps.join(format!("{id}.png")), native.values())?;
        let boxes = heatmap_to_bboxes(&native, threshold, min_area)?;
        let mask = BinaryMask::from_fn(shape.0, shape.1, |r, c| boxes.iter().any(|b| b.contains(c, r)));
        io::write_mask_png(dirs.masks.join(format!("{id}.png")), &mask)?;
        dirs.write_boxes(id, &boxes, shape)?;
        let p = net.forward(&input)?.data()[0];
        scores.lock().expect("scores lock").insert(id.to_string(), p);
        Ok(format!("{id} {p:.6} {}", boxes.len()))
    })?;
    if a.mode != Mode::Mask {
        let scores = scores.into_inner().expect("scores lock");
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "label", "score"]).map_err(Error::from)?;
        for (id, p) in scores {
            w.write_record([id, u8::from(p >= 0.5).to_string(), format!("{p:.17}")])
                .map_err(Error::from)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        let path = a.out.join("scores.csv");
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Files `<dir>/<sub>/*.<ext>` (or `<dir>/*.<ext>` when the subdirectory is
/// absent) keyed by stem.
fn files_by_id(dir: &Path, sub: &str, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let nested = dir.join(sub);
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
        let path = entry.map_err(|e| Error::io(&root, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    id: String,
    label: u8,
    #[serde(default)]
    score: Option<f64>,
}

/// Labels and scores by id from a CSV file, or from `scores.csv` /
/// `manifest.csv` inside a directory. A missing score column falls back to
/// the label.
fn labels_by_id(path: &Path) -> Result<BTreeMap<String, (u8, f64)>> {
    let file = if path.is_dir() {
        let scores = path.join("scores.csv");
        if scores.is_file() {
            scores
        } else {
            path.join(synth::MANIFEST_FILE)
        }
    } else {
        path.to_path_buf()
    };
    let reader = std::fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: LabelRow = row?;
        if row.label > 1 {
            return Err(Error::Format(format!("label of {} must be 0 or 1", row.id)));
        }
        let score = row.score.unwrap_or(f64::from(row.label));
        out.insert(row.id, (row.label, score));
    }
    Ok(out)
}

/// Splits ids into the matched set and the ids present on one side only.
fn pair_ids<A, B>(pred: &BTreeMap<String, A>, truth: &BTreeMap<String, B>) -> (Vec<String>, Vec<String>) {
    let matched = pred.keys().filter(|k| truth.contains_key(*k)).cloned().collect();
    let unmatched = pred
        .keys()
        .filter(|k| !truth.contains_key(*k))
        .map(|k| format!("{k} (prediction only)"))
        .chain(
            truth
                .keys()
                .filter(|k| !pred.contains_key(*k))
                .map(|k| format!("{k} (truth only)")),
        )
        .collect();
    (matched, unmatched)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let mut report = EvalReport::default();
    let unmatched = match a.kind {
        EvalKind::Boxes => {
            let pred = files_by_id(&a.pred, "boxes", "json")?;
            let truth = files_by_id(&a.truth, "boxes", "json")?;
            let (ids, unmatched) = pair_ids(&pred, &truth);
            for id in ids {
                let p = io::read_boxes_json(&pred[&id])?;
                let t = io::read_boxes_json(&truth[&id])?;
                report.per_item.push(ItemMetrics {
                    iou: Some(metrics::mean_iou(&p, &t)),
                    ..item(id)
                });
            }
            report.mean_iou = mean(report.per_item.iter().filter_map(|i| i.iou));
            println!("mean_iou {}", fmt_opt(report.mean_iou));
            unmatched
        }
        EvalKind::Masks => {
            let pred = files_by_id(&a.pred, "masks", "png")?;
            let truth = files_by_id(&a.truth, "masks", "png")?;
            let (ids, unmatched) = pair_ids(&pred, &truth);
            for id in ids {
                let p = io::read_mask_png(&pred[&id])?;
                let t = io::read_mask_png(&truth[&id])?;
                report.per_item.push(ItemMetrics {
                    dice: Some(metrics::mask_dice(&p, &t)?),
                    ..item(id)
                });
            }
            report.mean_dice = mean(report.per_item.iter().filter_map(|i| i.dice));
            println!("mean_dice {}", fmt_opt(report.mean_dice));
            unmatched
        }
        EvalKind::Labels => {
            let pred = labels_by_id(&a.pred)?;
            let truth = labels_by_id(&a.truth)?;
            let (ids, unmatched) = pair_ids(&pred, &truth);
            let labels: Vec<u8> = ids.iter().map(|id| truth[id].0).collect();
            let predicted: Vec<u8> = ids.iter().map(|id| pred[id].0).collect();
            let scores: Vec<f64> = ids.iter().map(|id| pred[id].1).collect();
            if !ids.is_empty() {
                report.accuracy = Some(metrics::accuracy(&labels, &predicted)?);
                report.auc = metrics::roc_auc(&labels, &scores).ok();
            }
            for (i, id) in ids.into_iter().enumerate() {
                report.per_item.push(ItemMetrics {
                    label: Some(predicted[i]),
                    score: Some(scores[i]),
                    ..item(id)
                });
            }
            println!("accuracy {} auc {}", fmt_opt(report.accuracy), fmt_opt(report.auc));
            unmatched
        }
    };
    let out = a.out.unwrap_or_else(|| if a.pred.is_dir() { a.pred.clone() } else { PathBuf::from(".") });
    create_dir(&out)?;
    write_text(&out.join("report.json"), &(report.to_json()? + "\n"))?;
    write_text(&out.join("report.csv"), &report.to_csv()?)?;
    if !unmatched.is_empty() {
        for u in &unmatched {
            eprintln!("unmatched: {u}");
        }
        return Err(Failure::Runtime(format!("{} unmatched ids", unmatched.len())));
    }
    Ok(())
}

fn item(id: String) -> ItemMetrics {
    ItemMetrics {
        id,
        ..Default::default()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into())
}
