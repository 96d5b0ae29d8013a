//! The `convlstm-anomaly` command line.
//!
//! Every subcommand is a thin wrapper over library calls; it reads and writes
//! the same file formats the library documents and adds no semantics of its own.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{frame_file_name, generate, load_clip, load_clips, save_clip, write_pgm, SceneSpec};
use crate::error::{Error, Result};
use crate::eval::{
    best_f1, detect, evaluate, frames_to_windows, read_regularity_csv, regularity, render_regularity_csv,
    render_sweep, sliding_errors, sweep_thresholds, AnomalyRegion, DetectOptions, DetectionReport, ErrorSource,
    SweepRow,
};
use crate::interval::{read_intervals, write_intervals, Interval};
use crate::kv::KvDoc;
use crate::net::{load_checkpoint, save_checkpoint, unstack_frames, Model, NetworkConfig, NETWORK_KEYS};
use crate::train::{named_rng, train, write_history, TrainConfig, TRAIN_KEYS};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const REGULARITY_FILE: &str = "regularity.csv";
pub const WINDOW_TRUTH_FILE: &str = "ground_truth_windows.txt";
pub const DETECTIONS_FILE: &str = "detections.txt";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Parser, Debug)]
#[command(name = "convlstm-anomaly", version, about = "Conv-LSTM video anomaly detection")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic clip from a scene file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model; writes model.ckpt, loss_history.csv and run_config.txt.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// A clip directory or a directory of clip directories.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Score every window of a clip; writes regularity.csv.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "combined")]
        error_source: ErrorSource,
    },
    /// Propose anomalous regions from regularity.csv.
    Detect {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
        threshold: Option<f64>,
        /// One detections file per threshold 0.05, 0.10, ..., 1.00.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        regions: RegionArgs,
    },
    /// Compare detections with ground truth; writes report.txt.
    Eval {
        /// A detections file, or a directory written by `detect --sweep`.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        /// Frames per window: maps frame-level ground truth to window starts (1 = none).
        #[arg(long, default_value_t = 1)]
        window_frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write ground-truth, reconstructed and predicted frames for one window.
    PredictDump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        start: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RegionArgs {
    #[arg(long, default_value_t = 50)]
    window: usize,
    #[arg(long, default_value_t = 50)]
    merge_distance: usize,
}

/// Network, training and scoring settings read from one `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub error_source: ErrorSource,
    pub detect: DetectOptions,
}

const RUN_KEYS: &[&str] = &["error_source", "window", "merge_distance", "overlap"];

impl RunConfig {
    /// Unknown keys are errors; `seed` is required.
    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(|k| NETWORK_KEYS.contains(&k) || TRAIN_KEYS.contains(&k) || RUN_KEYS.contains(&k))?;
        let d = DetectOptions::default();
        let detect = DetectOptions {
            window: doc.parse_or("window", d.window)?,
            merge_distance: doc.parse_or("merge_distance", d.merge_distance)?,
            overlap: doc.parse_or("overlap", d.overlap)?,
        };
        if !(detect.overlap > 0.0 && detect.overlap <= 1.0) {
            return Err(Error::config("overlap must be in (0, 1]"));
        }
        Ok(RunConfig {
            network: NetworkConfig::from_kv(&doc)?,
            train: TrainConfig::from_kv(&doc)?,
            error_source: doc.parse_or("error_source", ErrorSource::default())?,
            detect,
        })
    }

    pub fn render(&self) -> String {
        let mut doc = self.network.to_kv();
        let t = &self.train;
        doc.set("optimizer", t.optimizer);
        doc.set("learning_rate", t.learning_rate);
        doc.set("decay", t.decay);
        doc.set("batch_size", t.batch_size);
        doc.set("max_iterations", t.max_iterations);
        doc.set("early_stop_patience", t.early_stop_patience);
        doc.set("eval_interval", t.eval_interval);
        doc.set("validation_fraction", t.validation_fraction);
        if let Some(c) = t.clip_norm {
            doc.set("clip_norm", c);
        }
        doc.set("threads", t.threads);
        doc.set("seed", t.seed);
        doc.set("error_source", self.error_source);
        doc.set("window", self.detect.window);
        doc.set("merge_distance", self.detect.merge_distance);
        doc.set("overlap", self.detect.overlap);
        doc.render()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `detections_0.05.txt`, ...
pub fn sweep_file_name(threshold: f64) -> String {
    format!("detections_{threshold:.2}.txt")
}

fn to_intervals(regions: &[AnomalyRegion]) -> Vec<Interval> {
    regions.iter().map(AnomalyRegion::interval).collect()
}

fn gen_data(spec: &Path, out: &Path, length: usize, seed: u64) -> Result<()> {
    let spec = SceneSpec::parse(&read_text(spec)?).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", spec.display())),
        e => e,
    })?;
    let clip = generate(&spec, length, seed)?;
    save_clip(&clip, out)?;
    println!("wrote {} frames to {}", clip.len(), out.display());
    Ok(())
}

fn train_cmd(config: &Path, data: &Path, out: &Path, max_iterations: Option<usize>, threads: Option<usize>) -> Result<()> {
    let mut run = RunConfig::parse(&read_text(config)?).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", config.display())),
        e => e,
    })?;
    if let Some(n) = max_iterations {
        run.train.max_iterations = n;
    }
    if let Some(t) = threads {
        run.train.threads = t;
    }
    let clips = load_clips(data)?;
    if let Some(c) = clips.iter().find(|c| c.side() != run.network.frame_size) {
        return Err(Error::domain(format!(
            "clips are {0}x{0} but frame_size is {1}",
            c.side(),
            run.network.frame_size
        )));
    }
    let mut model = Model::init(run.network.clone(), &mut named_rng(run.train.seed, "model.init"))?;
    let outcome = train(&mut model, &clips, &run.train)?;
    create_dir(out)?;
    save_checkpoint(&model, &out.join(CHECKPOINT_FILE))?;
    write_history(&out.join(HISTORY_FILE), &outcome.history)?;
    write_text(&out.join("run_config.txt"), &run.render())?;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6e}"));
    println!(
        "iterations {}  final train loss {}  final val loss {}  best val loss {} (iteration {}){}",
        outcome.iterations_run,
        show(outcome.final_train_loss()),
        show(outcome.final_val_loss()),
        show(outcome.best_val_loss),
        outcome.best_iteration,
        if outcome.stopped_early { "  stopped early" } else { "" }
    );
    Ok(())
}

fn score(checkpoint: &Path, data: &Path, out: &Path, source: ErrorSource) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let clip = load_clip(data)?;
    let errors = sliding_errors(&model, &clip, source)?;
    let g = regularity(&errors)?;
    create_dir(out)?;
    write_text(&out.join(REGULARITY_FILE), &render_regularity_csv(&errors, &g))?;
    if !clip.ground_truth.is_empty() {
        let w = frames_to_windows(&clip.ground_truth, model.config.window_len(), errors.len());
        write_intervals(&out.join(WINDOW_TRUTH_FILE), &w)?;
    }
    println!("scored {} windows into {}", errors.len(), out.join(REGULARITY_FILE).display());
    Ok(())
}

fn detect_cmd(scores: &Path, threshold: Option<f64>, sweep: bool, out: &Path, regions: &RegionArgs) -> Result<()> {
    let (_, g) = read_regularity_csv(scores)?;
    let opts = DetectOptions {
        window: regions.window,
        merge_distance: regions.merge_distance,
        ..DetectOptions::default()
    };
    create_dir(out)?;
    let thresholds = match (threshold, sweep) {
        (_, true) => sweep_thresholds(),
        (Some(t), false) if t >= 0.0 && t.is_finite() => vec![t],
        (t, _) => return Err(Error::usage(format!("threshold must be >= 0, got {t:?}"))),
    };
    for &t in &thresholds {
        let found = to_intervals(&detect(&g, t, &opts));
        let name = if sweep { sweep_file_name(t) } else { DETECTIONS_FILE.to_string() };
        write_intervals(&out.join(&name), &found)?;
        println!("threshold {t:.2}: {} regions -> {name}", found.len());
    }
    Ok(())
}

fn eval_cmd(detections: &Path, ground_truth: &Path, overlap: f64, window_frames: usize, out: &Path) -> Result<()> {
    if window_frames == 0 {
        return Err(Error::usage("--window-frames must be >= 1"));
    }
    let mut gt = read_intervals(ground_truth)?;
    if window_frames > 1 {
        gt = frames_to_windows(&gt, window_frames, usize::MAX);
    }
    let text = if detections.is_dir() {
        let mut rows = Vec::new();
        for t in sweep_thresholds() {
            let path = detections.join(sweep_file_name(t));
            let found = read_intervals(&path)?;
            let report = evaluate(&found, &gt, overlap)?;
            rows.push(SweepRow {
                threshold: t,
                report,
                detections: vec![found],
            });
        }
        let best = best_f1(&rows).expect("twenty thresholds");
        format!(
            "best threshold = {:.2}\n{}\n\n{}",
            best.threshold,
            best.report,
            render_sweep(&rows)
        )
    } else {
        let report: DetectionReport = evaluate(&read_intervals(detections)?, &gt, overlap)?;
        format!("{report}\n")
    };
    create_dir(out)?;
    write_text(&out.join(REPORT_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn predict_dump(checkpoint: &Path, data: &Path, start: usize, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let clip = load_clip(data)?;
    let c = &model.config;
    let (x, y) = clip.window(start, c.input_len, c.output_len)?;
    let result = model.forward_composite(&x, &y)?;
    create_dir(out)?;
    let mut written = 0;
    let mut dump = |role: &str, t: usize, frame: &crate::Tensor| -> Result<()> {
        write_pgm(&out.join(format!("{role}_t{t:02}.pgm")), frame)?;
        written += 1;
        Ok(())
    };
    for t in 0..c.window_len() {
        dump("truth", t, &clip.frames[start + t])?;
    }
    if let Some(r) = &result.reconstruction {
        for (t, f) in unstack_frames(r)?.iter().enumerate() {
            dump("recon", t, f)?;
        }
    }
    for (t, f) in unstack_frames(&result.prediction)?.iter().enumerate() {
        dump("pred", c.input_len + t, f)?;
    }
    println!(
        "wrote {written} frames for window {start} (first source frame {}) to {}",
        frame_file_name(start),
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::usage("--threads must be >= 1"));
        }
    }
    let threads = cli.threads.unwrap_or(1);
    // a second initialization in the same process (tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match cli.command {
        Command::GenData { spec, out, length, seed } => gen_data(&spec, &out, length, seed),
        Command::Train {
            config,
            data,
            out,
            max_iterations,
        } => train_cmd(&config, &data, &out, max_iterations, cli.threads),
        Command::Score {
            checkpoint,
            data,
            out,
            error_source,
        } => score(&checkpoint, &data, &out, error_source),
        Command::Detect {
            scores,
            threshold,
            sweep,
            out,
            regions,
        } => detect_cmd(&scores, threshold, sweep, &out, &regions),
        Command::Eval {
            detections,
            ground_truth,
            overlap,
            window_frames,
            out,
        } => eval_cmd(&detections, &ground_truth, overlap, window_frames, &out),
        Command::PredictDump {
            checkpoint,
            data,
            start,
            out,
        } => predict_dump(&checkpoint, &data, start, &out),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_parse_and_render() {
        let text = "seed = 3\nframe_size = 16\npatch_factor = 2\nlayer_channels = 4,4\nwindow = 20\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.network.layer_channels, vec![4, 4]);
        assert_eq!(c.detect.window, 20);
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn run_config_rejects_typos_and_missing_seed() {
        assert!(matches!(RunConfig::parse("seed = 1\nlearning_rat = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("frame_size = 16\n"), Err(Error::Config(_))));
        assert!(RunConfig::parse("seed = 1\noverlap = 0\n").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["convlstm-anomaly", "bogus"]), 1);
        assert_eq!(run(["convlstm-anomaly", "detect", "--scores", "x.csv", "--out", "o"]), 1);
        assert_eq!(run(["convlstm-anomaly", "--help"]), 0);
    }

    #[test]
    fn sweep_names() {
        assert_eq!(sweep_file_name(0.05), "detections_0.05.txt");
        assert_eq!(sweep_file_name(1.0), "detections_1.00.txt");
    }
}
