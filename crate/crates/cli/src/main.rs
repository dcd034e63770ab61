//! `evkit` — synthesize event streams, encode them into dense window
//! tensors, train/apply a per-pixel classifier, evaluate segmentations,
//! visualize channels, and benchmark encoding throughput.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O failure, 4 invalid data.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use evkit_core::classifier::{self, ClassifierError, LinearPixelModel, TrainConfig};
use evkit_core::dataset::{self, DatasetError, LabelMap, CLASS_NAMES};
use evkit_core::event::{self, EventError, WindowMode};
use evkit_core::metrics::{AbsentClassPolicy, ConfusionMatrix, MetricsError};
use evkit_core::pgm::{self, PgmError};
use evkit_core::repr::{self, ChannelScaling, ReprDtype, ReprError, ReprKind, StreamingAccumulator};
use evkit_core::synth::{self, SynthError};

#[derive(Parser)]
#[command(
    name = "evkit",
    version,
    about = "Event-camera toolkit: synthetic streams, dense window encodings, per-pixel segmentation"
)]
struct Cli {
    /// Override the seed used by the subcommand (synthesis, training, bench).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an event stream and ground-truth label maps from a scene file
    Synth {
        /// TOML scene description (see crates/cli/scenes/crossing.toml)
        #[arg(long)]
        scene: PathBuf,
        /// Output directory: writes events.evs1 and labels/w*.pgm
        #[arg(long)]
        out_dir: PathBuf,
        /// Window length used to place one label map per window
        #[arg(long, default_value_t = 50_000)]
        window_us: u64,
    },
    /// Encode an event stream into one dense tensor per window
    Encode {
        /// Input stream (EVS1)
        #[arg(long)]
        events: PathBuf,
        /// Output directory for w*.rpt1 tensors
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReprArg::Histmeanstd6)]
        repr: ReprArg,
        /// Integration window in microseconds
        #[arg(long, default_value_t = 50_000)]
        window_us: u64,
        /// File of anchor timestamps (one per line); each window covers
        /// the `window_us` before its anchor. Default: tiled windows.
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
        dtype: DtypeArg,
    },
    /// Score predicted label maps against ground truth
    Eval {
        /// Directory of predicted .pgm label maps
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth .pgm label maps (may contain 255 = ignore)
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 6)]
        classes: u8,
        /// Which mean-IoU convention the summary `miou=` line reports
        #[arg(long, value_enum, default_value_t = PolicyArg::AbsentAsZero)]
        miou_policy: PolicyArg,
    },
    /// Fit the per-pixel linear classifier on paired tensors and labels
    Train {
        /// Directory of training tensors (w*.rpt1)
        #[arg(long)]
        tensors: PathBuf,
        /// Directory of training label maps (w*.pgm, paired by stem)
        #[arg(long)]
        labels: PathBuf,
        /// Output model checkpoint path (LPM1)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        steps: u32,
        #[arg(long, default_value_t = 1024)]
        batch_pixels: usize,
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
        #[arg(long, default_value_t = 6)]
        classes: u8,
    },
    /// Label every pixel of each tensor with a trained model
    Predict {
        /// Model checkpoint (LPM1)
        #[arg(long)]
        model: PathBuf,
        /// Directory of input tensors (*.rpt1)
        #[arg(long)]
        tensors: PathBuf,
        /// Output directory for predicted .pgm label maps
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render one tensor channel as an 8-bit grayscale image
    Visualize {
        /// Input tensor (RPT1)
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long, value_enum, default_value_t = ScalingArg::Minmax)]
        scaling: ScalingArg,
        /// Output image path (PGM)
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure encoding throughput on a built-in synthetic stream
    Bench {
        #[arg(long, default_value_t = 50_000)]
        window_us: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReprArg {
    /// 1 channel: sign of the latest event
    Last1,
    /// 2 channels: event count per polarity
    Hist2,
    /// 4 channels: counts + most recent normalized timestamp
    Histrecent4,
    /// 6 channels: counts + mean + standard deviation of timestamps
    Histmeanstd6,
}

impl ReprArg {
    fn kind(self) -> ReprKind {
        match self {
            ReprArg::Last1 => ReprKind::LastEvent1,
            ReprArg::Hist2 => ReprKind::Hist2,
            ReprArg::Histrecent4 => ReprKind::HistRecent4,
            ReprArg::Histmeanstd6 => ReprKind::HistMeanStd6,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

impl DtypeArg {
    fn dtype(self) -> ReprDtype {
        match self {
            DtypeArg::F32 => ReprDtype::F32,
            DtypeArg::F64 => ReprDtype::F64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    /// Map the observed value range onto 0–255
    Minmax,
    /// Map [0, 1] onto 0–255, clamping (for normalized channels)
    FixedUnit,
}

impl ScalingArg {
    fn scaling(self) -> ChannelScaling {
        match self {
            ScalingArg::Minmax => ChannelScaling::MinMax,
            ScalingArg::FixedUnit => ChannelScaling::FixedUnit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    /// Classes absent from truth and prediction score 0
    AbsentAsZero,
    /// Average only over classes that occur
    ExcludeAbsent,
}

impl PolicyArg {
    fn policy(self) -> AbsentClassPolicy {
        match self {
            PolicyArg::AbsentAsZero => AbsentClassPolicy::AbsentAsZero,
            PolicyArg::ExcludeAbsent => AbsentClassPolicy::ExcludeAbsent,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PolicyArg::AbsentAsZero => "absent_as_zero",
            PolicyArg::ExcludeAbsent => "exclude_absent",
        }
    }
}

/// Failure classes mapped onto process exit codes.
enum AppError {
    /// Exit 2: inputs that make the requested operation meaningless.
    Usage(String),
    /// Exit 3: the filesystem failed us.
    Io(String),
    /// Exit 4: files opened fine but their contents are invalid.
    Validation(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Io(_) => 3,
            AppError::Validation(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Io(m) | AppError::Validation(m) => m,
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

impl From<EventError> for AppError {
    fn from(e: EventError) -> Self {
        match e {
            EventError::Io(io) => AppError::Io(io.to_string()),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<ReprError> for AppError {
    fn from(e: ReprError) -> Self {
        match e {
            ReprError::Io(io) => AppError::Io(io.to_string()),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<PgmError> for AppError {
    fn from(e: PgmError) -> Self {
        match e {
            PgmError::Io(io) => AppError::Io(io.to_string()),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<DatasetError> for AppError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(io) => AppError::Io(io.to_string()),
            DatasetError::Pgm(p) => p.into(),
            DatasetError::Repr(r) => r.into(),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<SynthError> for AppError {
    fn from(e: SynthError) -> Self {
        AppError::Validation(e.to_string())
    }
}

impl From<ClassifierError> for AppError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Io(io) => AppError::Io(io.to_string()),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<MetricsError> for AppError {
    fn from(e: MetricsError) -> Self {
        AppError::Validation(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evkit: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Synth {
            ref scene,
            ref out_dir,
            window_us,
        } => cmd_synth(&cli, scene, out_dir, window_us),
        Command::Encode {
            ref events,
            ref out_dir,
            repr,
            window_us,
            ref anchors,
            dtype,
        } => cmd_encode(&cli, events, out_dir, repr, window_us, anchors.as_deref(), dtype),
        Command::Eval {
            ref pred,
            ref truth,
            classes,
            miou_policy,
        } => cmd_eval(pred, truth, classes, miou_policy),
        Command::Train {
            ref tensors,
            ref labels,
            ref out,
            lr,
            steps,
            batch_pixels,
            l2,
            classes,
        } => cmd_train(&cli, tensors, labels, out, lr, steps, batch_pixels, l2, classes),
        Command::Predict {
            ref model,
            ref tensors,
            ref out_dir,
        } => cmd_predict(&cli, model, tensors, out_dir),
        Command::Visualize {
            ref input,
            channel,
            scaling,
            ref out,
        } => cmd_visualize(input, channel, scaling, out),
        Command::Bench { window_us } => cmd_bench(&cli, window_us),
    }
}

fn say(cli: &Cli, line: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", line.as_ref());
    }
}

fn open_reader(path: &Path) -> Result<BufReader<fs::File>, AppError> {
    Ok(BufReader::new(fs::File::open(path).map_err(|e| {
        AppError::Io(format!("{}: {e}", path.display()))
    })?))
}

fn create_writer(path: &Path) -> Result<BufWriter<fs::File>, AppError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| {
        AppError::Io(format!("{}: {e}", path.display()))
    })?))
}

/// Sorted stems of `dir` entries carrying the given extension.
fn list_stems(dir: &Path, extension: &str) -> Result<Vec<String>, AppError> {
    let entries = fs::read_dir(dir).map_err(|e| AppError::Io(format!("{}: {e}", dir.display())))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(extension) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

fn cmd_synth(cli: &Cli, scene: &Path, out_dir: &Path, window_us: u64) -> Result<(), AppError> {
    let text = fs::read_to_string(scene)
        .map_err(|e| AppError::Io(format!("{}: {e}", scene.display())))?;
    let (mut config, objects) = synth::parse_scene(&text)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let (stream, labeler) = synth::generate_events(&objects, &config)?;

    fs::create_dir_all(out_dir)?;
    let events_path = out_dir.join("events.evs1");
    let mut writer = create_writer(&events_path)?;
    event::write_binary(&stream, &mut writer)?;
    drop(writer);

    let mut windows = 0usize;
    if !stream.is_empty() {
        let labels_dir = out_dir.join("labels");
        fs::create_dir_all(&labels_dir)?;
        let slices = event::slice_windows(&stream, window_us, WindowMode::Tiled)?;
        windows = slices.len();
        for (i, (window, _)) in slices.iter().enumerate() {
            // Labels snapshot the scene when the window closes: that is
            // the state the window's most recent events describe.
            let labels = labeler.label_at(window.end_us());
            labels.write_pgm_file(&labels_dir.join(format!("w{i:06}.pgm")))?;
        }
    }
    say(cli, format!("events={}", stream.len()));
    say(cli, format!("windows={windows}"));
    say(cli, format!("wrote {}", events_path.display()));
    Ok(())
}

/// One anchor timestamp per line; `#` comments and blank lines allowed.
fn parse_anchors(path: &Path) -> Result<Vec<u64>, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
    let mut anchors = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: u64 = line.parse().map_err(|_| {
            AppError::Validation(format!(
                "{}: line {}: not a timestamp",
                path.display(),
                idx + 1
            ))
        })?;
        anchors.push(value);
    }
    Ok(anchors)
}

fn cmd_encode(
    cli: &Cli,
    events: &Path,
    out_dir: &Path,
    repr: ReprArg,
    window_us: u64,
    anchors: Option<&Path>,
    dtype: DtypeArg,
) -> Result<(), AppError> {
    let stream = event::parse_binary_auto(open_reader(events)?)?;
    let anchor_values = anchors.map(parse_anchors).transpose()?;
    let mode = match &anchor_values {
        Some(values) => WindowMode::CenteredAt(values),
        None => WindowMode::Tiled,
    };
    let slices = event::slice_windows(&stream, window_us, mode)?;
    fs::create_dir_all(out_dir)?;
    let kind = repr.kind();
    for (i, (window, window_events)) in slices.iter().enumerate() {
        let tensor = repr::encode_batch(window_events, *window, stream.geometry(), kind)?;
        let mut writer = create_writer(&out_dir.join(format!("w{i:06}.rpt1")))?;
        repr::write_rpt1(&tensor, dtype.dtype(), &mut writer)?;
    }
    say(cli, format!("events={}", stream.len()));
    say(cli, format!("windows={}", slices.len()));
    say(cli, format!("window_us={window_us}"));
    Ok(())
}

fn cmd_eval(pred: &Path, truth: &Path, classes: u8, policy: PolicyArg) -> Result<(), AppError> {
    if classes == 0 {
        return Err(AppError::Usage("--classes must be at least 1".into()));
    }
    let truth_stems = list_stems(truth, "pgm")?;
    let pred_stems = list_stems(pred, "pgm")?;
    if truth_stems.is_empty() {
        return Err(AppError::Usage(format!(
            "{}: no .pgm label maps to evaluate",
            truth.display()
        )));
    }
    if pred_stems.is_empty() {
        return Err(AppError::Usage(format!(
            "{}: no .pgm predictions to evaluate",
            pred.display()
        )));
    }
    if truth_stems != pred_stems {
        return Err(AppError::Validation(
            "prediction and truth directories hold different file stems".into(),
        ));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for stem in &truth_stems {
        let t = LabelMap::read_pgm_file(&truth.join(format!("{stem}.pgm")))?;
        let p = LabelMap::read_pgm_file(&pred.join(format!("{stem}.pgm")))?;
        cm.accumulate(&t, &p)?;
    }
    let names: Vec<&str> = CLASS_NAMES.to_vec();
    let report = if classes as usize == names.len() {
        cm.report(Some(&names))?
    } else {
        cm.report(None)?
    };
    print!("{report}");
    let (_, miou) = cm.iou(policy.policy())?;
    println!("miou_policy={}", policy.name());
    println!("miou={miou:.6}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cli: &Cli,
    tensors: &Path,
    labels: &Path,
    out: &Path,
    lr: f64,
    steps: u32,
    batch_pixels: usize,
    l2: f64,
    classes: u8,
) -> Result<(), AppError> {
    let samples = dataset::load_samples(tensors, labels)?;
    if samples.is_empty() {
        return Err(AppError::Usage(format!(
            "{}: no tensor/label pairs to train on",
            tensors.display()
        )));
    }
    let config = TrainConfig {
        learning_rate: lr,
        steps,
        batch_pixels,
        seed: cli.seed.unwrap_or(0),
        l2,
        num_classes: classes,
    };
    let (model, trace) = classifier::train(&samples, &config)?;
    let mut writer = create_writer(out)?;
    model.write_checkpoint(&mut writer)?;
    say(cli, format!("samples={}", samples.len()));
    say(cli, format!("steps={}", trace.len()));
    say(cli, format!("initial_loss={:.6}", trace.first().copied().unwrap_or(f64::NAN)));
    say(cli, format!("final_loss={:.6}", trace.last().copied().unwrap_or(f64::NAN)));
    say(cli, format!("wrote {}", out.display()));
    Ok(())
}

fn cmd_predict(cli: &Cli, model: &Path, tensors: &Path, out_dir: &Path) -> Result<(), AppError> {
    let model = LinearPixelModel::read_checkpoint(open_reader(model)?)?;
    let stems = list_stems(tensors, "rpt1")?;
    if stems.is_empty() {
        return Err(AppError::Usage(format!(
            "{}: no .rpt1 tensors to label",
            tensors.display()
        )));
    }
    fs::create_dir_all(out_dir)?;
    for stem in &stems {
        let (tensor, _) = repr::read_rpt1(open_reader(&tensors.join(format!("{stem}.rpt1")))?)?;
        let labels = model.predict(&tensor)?;
        labels.write_pgm_file(&out_dir.join(format!("{stem}.pgm")))?;
    }
    say(cli, format!("tensors={}", stems.len()));
    Ok(())
}

fn cmd_visualize(
    input: &Path,
    channel: usize,
    scaling: ScalingArg,
    out: &Path,
) -> Result<(), AppError> {
    let (tensor, _) = repr::read_rpt1(open_reader(input)?)?;
    let bytes = repr::visualize_channel(&tensor, channel, scaling.scaling())?;
    let geometry = tensor.geometry();
    let mut writer = create_writer(out)?;
    pgm::write_pgm(geometry.width, geometry.height, &bytes, &mut writer)?;
    Ok(())
}

/// The built-in bench scene: two movers over a 128×96 background, one
/// second of simulated time.
fn bench_scene(seed: u64) -> (synth::SynthConfig, Vec<synth::SceneObject>) {
    let config = synth::SynthConfig {
        geometry: evkit_core::event::SensorGeometry::new(128, 96).expect("static dims"),
        background_intensity: 1.0,
        threshold_sigma: 0.4,
        tick_us: 1_000,
        duration_us: 1_000_000,
        seed,
        timestamp_jitter_us: 300,
    };
    let objects = vec![
        synth::SceneObject {
            shape: synth::Shape::Disk { radius: 9.0 },
            class_id: 4,
            intensity: 2.6,
            position: (-10.0, 48.0),
            velocity: (140.0, 6.0),
        },
        synth::SceneObject {
            shape: synth::Shape::Rectangle {
                width: 18.0,
                height: 12.0,
            },
            class_id: 5,
            intensity: 0.45,
            position: (138.0, 30.0),
            velocity: (-95.0, 20.0),
        },
    ];
    (config, objects)
}

fn cmd_bench(cli: &Cli, window_us: u64) -> Result<(), AppError> {
    let (config, objects) = bench_scene(cli.seed.unwrap_or(0));
    let (stream, _) = synth::generate_events(&objects, &config)?;
    let slices = event::slice_windows(&stream, window_us, WindowMode::Tiled)?;
    let kind = ReprKind::HistMeanStd6;

    let start = Instant::now();
    let mut batch_checksum = 0.0f64;
    for (window, window_events) in &slices {
        let tensor = repr::encode_batch(window_events, *window, stream.geometry(), kind)?;
        batch_checksum += std::hint::black_box(tensor.data().iter().sum::<f64>());
    }
    let batch_elapsed = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut streaming_checksum = 0.0f64;
    for (window, window_events) in &slices {
        let mut acc = StreamingAccumulator::new(stream.geometry(), *window);
        for e in *window_events {
            acc.accumulate(e)?;
        }
        let tensor = acc.finalize(kind);
        streaming_checksum += std::hint::black_box(tensor.data().iter().sum::<f64>());
    }
    let streaming_elapsed = start.elapsed().as_secs_f64();

    let events = stream.len() as f64;
    println!("events={}", stream.len());
    println!("windows={}", slices.len());
    println!("batch_checksum={batch_checksum:.6}");
    println!("streaming_checksum={streaming_checksum:.6}");
    println!("batch_events_per_sec={:.0}", events / batch_elapsed.max(1e-9));
    println!(
        "streaming_events_per_sec={:.0}",
        events / streaming_elapsed.max(1e-9)
    );
    Ok(())
}
